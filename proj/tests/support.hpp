#pragma once

#include <string>
#include <vector>

#include "salience/data_pipeline.hpp"
#include "salience/network.hpp"
#include "salience/rng.hpp"

namespace salience::testing {

/// Windows with uniform [-1, 1] values and random labels.
inline std::vector<LabeledWindow> random_windows(const NetworkConfig& config, std::size_t n, Rng& rng,
                                                 const std::string& user = "u0") {
  std::vector<LabeledWindow> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledWindow& w = out[i];
    for (std::size_t c : config.channel_counts) {
      Eigen::MatrixXd r(static_cast<Eigen::Index>(config.window_length), static_cast<Eigen::Index>(c));
      for (Eigen::Index t = 0; t < r.rows(); ++t)
        for (Eigen::Index j = 0; j < r.cols(); ++j) r(t, j) = rng.uniform(-1.0, 1.0);
      w.records.push_back(std::move(r));
    }
    w.label = static_cast<int>(rng.index(config.n_classes));
    w.user_id = user;
    w.index = static_cast<std::uint32_t>(i);
  }
  return out;
}

inline std::vector<const LabeledWindow*> pointers(const std::vector<LabeledWindow>& windows) {
  std::vector<const LabeledWindow*> out;
  for (const auto& w : windows) out.push_back(&w);
  return out;
}

/// Tiny network used by the gradient and update checks.
inline NetworkConfig tiny_config() {
  NetworkConfig c;
  c.channel_counts = {3, 3};
  c.window_length = 16;
  c.conv_kernels = 4;
  c.conv_width = 3;
  c.conv_stride = 1;
  c.local_lstm_state = 4;
  c.global_lstm_state = 5;
  c.classifier_lstm_state = 6;
  c.attention_dim = 8;
  c.n_classes = 3;
  return c;
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return 1e300;
  if (a.size() == 0) return 0.0;
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace salience::testing
