#include "salience/optimizer.hpp"

#include <cmath>

#include "salience/error.hpp"

namespace salience {

Adam::Adam(const NetworkState& shape, GroupMask groups, AdamSettings settings)
    : groups_(groups), settings_(settings), m_(shape.zeros_like()), v_(shape.zeros_like()) {}

void Adam::step(NetworkState& state, const NetworkState& grad, double learning_rate, double sign) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(settings_.beta1, t);
  const double c2 = 1.0 - std::pow(settings_.beta2, t);
  auto params = state.tensors();
  const auto grads = grad.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  if (grads.size() != params.size() || m.size() != params.size()) {
    throw Error(ErrorKind::ShapeMismatch, "optimizer, gradient and state layouts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!groups_.contains(params[i].group)) continue;
    auto p = params[i].values;
    auto g = grads[i].values;
    auto mi = m[i].values;
    auto vi = v[i].values;
    if (g.size() != p.size()) throw Error(ErrorKind::ShapeMismatch, "gradient shape differs for " + params[i].name);
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = sign * g[j];
      mi[j] = settings_.beta1 * mi[j] + (1.0 - settings_.beta1) * gj;
      vi[j] = settings_.beta2 * vi[j] + (1.0 - settings_.beta2) * gj * gj;
      p[j] -= learning_rate * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + settings_.epsilon);
    }
  }
}

}  // namespace salience
