#include "doctest.h"

#include "../common/gradient_check.hpp"
#include "../support.hpp"
#include "salience/engine.hpp"
#include "salience/error.hpp"
#include "salience/model.hpp"

using namespace salience;
using namespace salience::testing;

namespace {

void compare_traces(const std::vector<ForwardTrace>& a, const std::vector<ForwardTrace>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < a[i].features.size(); ++k) {
      CHECK(max_abs_diff(a[i].features[k], b[i].features[k]) < tol);
    }
    CHECK(max_abs_diff(a[i].local_probs, b[i].local_probs) < tol);
    CHECK(max_abs_diff(a[i].attention, b[i].attention) < tol);
    CHECK(max_abs_diff(a[i].fused, b[i].fused) < tol);
    CHECK(max_abs_diff(a[i].class_logits, b[i].class_logits) < tol);
    CHECK(max_abs_diff(a[i].global_probs, b[i].global_probs) < tol);
  }
}

NetworkConfig random_config(Rng& rng) {
  NetworkConfig c;
  const std::size_t K = 1 + rng.index(4);
  for (std::size_t k = 0; k < K; ++k) c.channel_counts.push_back(1 + rng.index(6));
  c.window_length = 32 + rng.index(40);
  c.conv_kernels = 3 + rng.index(4);
  c.local_lstm_state = 2 + rng.index(4);
  c.global_lstm_state = 2 + rng.index(4);
  c.classifier_lstm_state = 2 + rng.index(4);
  c.global_lstm_layers = 1 + rng.index(2);
  c.classifier_lstm_layers = 1 + rng.index(2);
  c.attention_dim = 2 + rng.index(6);
  c.n_classes = 2 + rng.index(4);
  return c;
}

}  // namespace

TEST_CASE("batched engine matches the per-window reference forward") {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const NetworkConfig config = random_config(rng);
    const Variant variant = kAllVariants[static_cast<std::size_t>(trial) % kAllVariants.size()];
    const NetworkState state = init_state(config, variant, 100 + static_cast<std::uint64_t>(trial));
    const auto windows = random_windows(config, 3, rng);
    const engine::Engine eng(config);
    const auto batched = engine::Engine::traces(eng.forward(state, engine::make_batch(windows, config)));
    const auto reference = forward(std::span<const LabeledWindow>(windows), state, config);
    compare_traces(batched, reference, 1e-10);
  }
}

TEST_CASE("engine output does not depend on the thread count") {
  Rng rng(5);
  NetworkConfig config = tiny_config();
  config.channel_counts = {3, 2, 4, 1};
  const NetworkState state = init_state(config, Variant::Full, 3);
  const auto windows = random_windows(config, 6, rng);
  const engine::Engine eng(config);
  std::vector<int> sources{0, 1, 0, 1, 0, 1};

  auto run = [&](int threads) {
    engine::set_thread_count(threads);
    const auto cache = eng.forward(state, engine::make_batch(windows, config));
    engine::OutputGradients seeds;
    seeds.classifier = Eigen::MatrixXd::Ones(6, static_cast<Eigen::Index>(config.n_classes));
    seeds.global = Eigen::MatrixXd::Ones(6, 2);
    for (std::size_t k = 0; k < config.sensor_count(); ++k) seeds.local.push_back(Eigen::MatrixXd::Ones(6, 2) * 0.5);
    NetworkState grad = state.zeros_like();
    eng.backward(state, cache, seeds, {}, grad);
    return grad;
  };
  const NetworkState serial = run(1);
  const NetworkState parallel = run(4);
  engine::set_thread_count(0);
  for (ParamGroup g : kAllGroups) CHECK(serial.checksum(g) == parallel.checksum(g));
}

TEST_CASE("make_batch rejects windows that do not match the config") {
  Rng rng(1);
  const NetworkConfig config = tiny_config();
  auto windows = random_windows(config, 2, rng);
  windows[1].records[0].conservativeResize(10, 3);
  CHECK_THROWS_AS(engine::make_batch(windows, config), Error);
}

TEST_CASE("analytic gradients match central differences") {
  for (Variant v : kAllVariants) {
    CAPTURE(variant_name(v));
    GradientCheckOptions opt;
    opt.variant = v;
    opt.samples_per_group = 20;
    const auto r = check_gradients(opt);
    CAPTURE(r.first_failure);
    CHECK(r.failures == 0);
  }
}
