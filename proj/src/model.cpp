#include "salience/model.hpp"

#include <cmath>

#include "salience/error.hpp"

namespace salience {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// One strided temporal convolution + ReLU over a T x in sequence.
Eigen::MatrixXd temporal_conv_relu(const Eigen::MatrixXd& in, const ConvParams& p, std::size_t width, std::size_t stride) {
  const auto in_width = static_cast<std::size_t>(in.cols());
  const auto T_out = valid_conv_length(static_cast<std::size_t>(in.rows()), width, stride);
  const auto out_width = static_cast<std::size_t>(p.weight.rows());
  if (static_cast<std::size_t>(p.weight.cols()) != width * in_width) {
    throw Error(ErrorKind::ShapeMismatch, "convolution weight does not match its input width");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(T_out), static_cast<Eigen::Index>(out_width));
  for (std::size_t t = 0; t < T_out; ++t) {
    for (std::size_t o = 0; o < out_width; ++o) {
      double acc = p.bias(static_cast<Eigen::Index>(o));
      for (std::size_t d = 0; d < width; ++d) {
        for (std::size_t m = 0; m < in_width; ++m) {
          acc += p.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(d * in_width + m)) *
                 in(static_cast<Eigen::Index>(t * stride + d), static_cast<Eigen::Index>(m));
        }
      }
      out(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(o)) = acc > 0.0 ? acc : 0.0;
    }
  }
  return out;
}

Eigen::MatrixXd lstm_run(const Eigen::MatrixXd& seq, const LstmParams& p, bool reverse) {
  const auto T = seq.rows();
  const auto In = seq.cols();
  const auto H = static_cast<Eigen::Index>(p.hidden());
  if (p.input_weight.cols() != In) throw Error(ErrorKind::ShapeMismatch, "LSTM input width mismatch");
  Eigen::MatrixXd out(T, H);
  std::vector<double> h(static_cast<std::size_t>(H), 0.0);
  std::vector<double> c(static_cast<std::size_t>(H), 0.0);
  std::vector<double> z(static_cast<std::size_t>(4 * H));
  for (Eigen::Index s = 0; s < T; ++s) {
    const Eigen::Index t = reverse ? T - 1 - s : s;
    for (Eigen::Index r = 0; r < 4 * H; ++r) {
      double acc = p.bias(r);
      for (Eigen::Index i = 0; i < In; ++i) acc += p.input_weight(r, i) * seq(t, i);
      for (Eigen::Index j = 0; j < H; ++j) acc += p.recurrent_weight(r, j) * h[static_cast<std::size_t>(j)];
      z[static_cast<std::size_t>(r)] = acc;
    }
    for (Eigen::Index j = 0; j < H; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      const auto uH = static_cast<std::size_t>(H);
      const double ig = sigmoid(z[uj]);
      const double fg = sigmoid(z[uH + uj]);
      const double gg = std::tanh(z[2 * uH + uj]);
      const double og = sigmoid(z[3 * uH + uj]);
      c[uj] = fg * c[uj] + ig * gg;
      h[uj] = og * std::tanh(c[uj]);
      out(t, j) = h[uj];
    }
  }
  return out;
}

}  // namespace

Eigen::VectorXd ForwardTrace::ybar() const {
  Eigen::VectorXd y(local_probs.rows() * 2);
  for (Eigen::Index k = 0; k < local_probs.rows(); ++k) {
    y(2 * k) = local_probs(k, 0);
    y(2 * k + 1) = local_probs(k, 1);
  }
  return y;
}

Eigen::MatrixXd feature_extractor_forward(const Eigen::MatrixXd& record, const ExtractorParams& params,
                                          const NetworkConfig& config) {
  const std::size_t height = config.conv1_height;
  const std::size_t kernels = static_cast<std::size_t>(params.conv1.weight.rows());
  const auto padded = std::max<std::size_t>(static_cast<std::size_t>(record.cols()), height);
  const std::size_t positions = padded - height + 1;
  if (static_cast<std::size_t>(params.conv2.weight.cols()) != config.conv_width * kernels * positions) {
    throw Error(ErrorKind::ShapeMismatch, "extractor parameters were built for a different channel count");
  }
  const auto lengths = valid_conv_length(static_cast<std::size_t>(record.rows()), config.conv_width, config.conv_stride);
  const auto t2 = valid_conv_length(lengths, config.conv_width, config.conv_stride);
  const auto t3 = valid_conv_length(t2, config.conv_width, config.conv_stride);
  if (t3 < 1) throw Error(ErrorKind::GeometryError, "window too short for three strided convolutions");

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(record.rows(), static_cast<Eigen::Index>(padded));
  x.leftCols(record.cols()) = record;

  // conv1: one kernel bank shared across channel positions, valid along channels;
  // the surviving channel positions are flattened into the feature-map axis.
  const std::size_t T1 = lengths;
  Eigen::MatrixXd h1(static_cast<Eigen::Index>(T1), static_cast<Eigen::Index>(kernels * positions));
  for (std::size_t t = 0; t < T1; ++t) {
    for (std::size_t p = 0; p < positions; ++p) {
      for (std::size_t o = 0; o < kernels; ++o) {
        double acc = params.conv1.bias(static_cast<Eigen::Index>(o));
        for (std::size_t d = 0; d < config.conv_width; ++d) {
          for (std::size_t j = 0; j < height; ++j) {
            acc += params.conv1.weight(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(d * height + j)) *
                   x(static_cast<Eigen::Index>(t * config.conv_stride + d), static_cast<Eigen::Index>(p + j));
          }
        }
        h1(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p * kernels + o)) = acc > 0.0 ? acc : 0.0;
      }
    }
  }
  const Eigen::MatrixXd h2 = temporal_conv_relu(h1, params.conv2, config.conv_width, config.conv_stride);
  return temporal_conv_relu(h2, params.conv3, config.conv_width, config.conv_stride);
}

Eigen::VectorXd temporal_pool(const Eigen::MatrixXd& features) {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(features.cols());
  for (Eigen::Index t = 0; t < features.rows(); ++t) mean += features.row(t).transpose();
  return mean / static_cast<double>(features.rows());
}

Eigen::VectorXd head_logits(const Eigen::MatrixXd& sequence, const HeadParams& params) {
  Eigen::MatrixXd seq = sequence;
  Eigen::VectorXd readout;
  for (const auto& layer : params.layers) {
    const Eigen::MatrixXd fwd = lstm_run(seq, layer.forward, false);
    const Eigen::MatrixXd bwd = lstm_run(seq, layer.backward, true);
    Eigen::MatrixXd next(seq.rows(), fwd.cols() + bwd.cols());
    next << fwd, bwd;
    readout.resize(fwd.cols() + bwd.cols());
    readout << fwd.row(seq.rows() - 1).transpose(), bwd.row(0).transpose();
    seq = std::move(next);
  }
  Eigen::VectorXd logits(params.output.weight.rows());
  for (Eigen::Index r = 0; r < logits.size(); ++r) {
    double acc = params.output.bias(r);
    for (Eigen::Index i = 0; i < readout.size(); ++i) acc += params.output.weight(r, i) * readout(i);
    logits(r) = acc;
  }
  return logits;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd e = (logits.array() - m).exp();
  return e / e.sum();
}

Eigen::Vector2d local_discriminator_forward(const Eigen::MatrixXd& features, const HeadParams& params) {
  return softmax(head_logits(features, params));
}

Eigen::Vector2d global_discriminator_forward(const Eigen::MatrixXd& fused, const HeadParams& params) {
  return softmax(head_logits(fused, params));
}

Eigen::VectorXd activity_classifier_forward(const Eigen::MatrixXd& fused, const HeadParams& params) {
  return softmax(head_logits(fused, params));
}

Eigen::VectorXd attention_scores(std::span<const Eigen::VectorXd> pooled, const Eigen::VectorXd& ybar,
                                 const AttentionParams& params) {
  if (ybar.size() != params.query.weight.cols()) throw Error(ErrorKind::ShapeMismatch, "query input width mismatch");
  const auto h = params.query.weight.rows();
  Eigen::VectorXd q(h);
  for (Eigen::Index r = 0; r < h; ++r) {
    double acc = params.query.bias(r);
    for (Eigen::Index i = 0; i < ybar.size(); ++i) acc += params.query.weight(r, i) * ybar(i);
    q(r) = acc;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  Eigen::VectorXd scores(static_cast<Eigen::Index>(pooled.size()));
  for (std::size_t k = 0; k < pooled.size(); ++k) {
    double dot = 0.0;
    for (Eigen::Index r = 0; r < h; ++r) {
      double key = params.key.bias(r);
      for (Eigen::Index i = 0; i < pooled[k].size(); ++i) key += params.key.weight(r, i) * pooled[k](i);
      dot += key * q(r);
    }
    scores(static_cast<Eigen::Index>(k)) = dot * scale;
  }
  return scores;
}

Eigen::VectorXd attention_weights(std::span<const Eigen::VectorXd> pooled, const Eigen::VectorXd& ybar,
                                  const AttentionParams& params) {
  return softmax(attention_scores(pooled, ybar, params));
}

Eigen::MatrixXd fuse(std::span<const Eigen::MatrixXd> features, const Eigen::VectorXd& alpha) {
  if (features.empty() || static_cast<Eigen::Index>(features.size()) != alpha.size()) {
    throw Error(ErrorKind::ShapeMismatch, "one attention weight per sensor required");
  }
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(features[0].rows(), features[0].cols());
  for (std::size_t k = 0; k < features.size(); ++k) {
    if (features[k].rows() != v.rows() || features[k].cols() != v.cols()) {
      throw Error(ErrorKind::ShapeMismatch, "sensor feature sequences differ in shape");
    }
    v += alpha(static_cast<Eigen::Index>(k)) * features[k];
  }
  return v;
}

ForwardTrace forward(const LabeledWindow& window, const NetworkState& state, const NetworkConfig& config) {
  const std::size_t K = state.extractors.size();
  if (window.records.size() != K) {
    throw Error(ErrorKind::ShapeMismatch, "window has " + std::to_string(window.records.size()) + " sensors, network " +
                                              std::to_string(K));
  }
  ForwardTrace tr;
  for (std::size_t k = 0; k < K; ++k) {
    if (static_cast<std::size_t>(window.records[k].cols()) != config.channel_counts[k] ||
        static_cast<std::size_t>(window.records[k].rows()) != config.window_length) {
      throw Error(ErrorKind::ShapeMismatch, "sensor " + std::to_string(k) + " record shape does not match the config");
    }
    tr.features.push_back(feature_extractor_forward(window.records[k], state.extractors[k], config));
    tr.pooled.push_back(temporal_pool(tr.features.back()));
  }
  if (!state.local_discriminators.empty()) {
    tr.local_probs.resize(static_cast<Eigen::Index>(K), 2);
    for (std::size_t k = 0; k < K; ++k) {
      tr.local_probs.row(static_cast<Eigen::Index>(k)) =
          local_discriminator_forward(tr.features[k], state.local_discriminators[k]).transpose();
    }
  }
  if (state.attention) {
    tr.attention = attention_weights(tr.pooled, tr.ybar(), *state.attention);
  } else {
    tr.attention = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(K), 1.0 / static_cast<double>(K));
  }
  tr.fused = fuse(tr.features, tr.attention);
  if (state.global_discriminator) tr.global_probs = global_discriminator_forward(tr.fused, *state.global_discriminator);
  tr.class_logits = head_logits(tr.fused, state.classifier);
  tr.class_probs = softmax(tr.class_logits);
  return tr;
}

std::vector<ForwardTrace> forward(std::span<const LabeledWindow> batch, const NetworkState& state,
                                  const NetworkConfig& config) {
  std::vector<ForwardTrace> out;
  out.reserve(batch.size());
  for (const auto& w : batch) out.push_back(forward(w, state, config));
  return out;
}

}  // namespace salience
