#pragma once

#include <cstdint>

#include "salience/network.hpp"

namespace salience {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer over a fixed subset of parameter groups. Moments
/// mirror the parameter shapes; tensors outside the groups are never touched.
class Adam {
 public:
  Adam(const NetworkState& shape, GroupMask groups, AdamSettings settings = {});

  /// One descent step along `grad`: state -= lr * m_hat / (sqrt(v_hat) + eps).
  /// `sign` = -1 turns it into an ascent step.
  void step(NetworkState& state, const NetworkState& grad, double learning_rate, double sign = 1.0);

  GroupMask groups() const { return groups_; }
  std::uint64_t step_count() const { return steps_; }

 private:
  GroupMask groups_;
  AdamSettings settings_;
  NetworkState m_;
  NetworkState v_;
  std::uint64_t steps_ = 0;
};

}  // namespace salience
