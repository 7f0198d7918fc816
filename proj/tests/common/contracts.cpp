#include "common/contracts.hpp"

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "salience/optimizer.hpp"
#include "salience/trainer.hpp"
#include "support.hpp"

namespace salience::testing {

namespace {

using Checksums = std::array<std::uint64_t, 5>;

Checksums checksums(const NetworkState& s) {
  Checksums out{};
  for (ParamGroup g : kAllGroups) out[static_cast<std::size_t>(g)] = s.checksum(g);
  return out;
}

void check_partition(const std::string& where, const NetworkState& state, const Checksums& before,
                     const Checksums& after, GroupMask allowed, SuiteResult& result) {
  for (ParamGroup g : kAllGroups) {
    const auto i = static_cast<std::size_t>(g);
    const bool changed = before[i] != after[i];
    if (allowed.contains(g)) {
      if (state.has_group(g) && !changed) result.fail(where + ": " + std::string(group_name(g)) + " not updated");
    } else if (changed) {
      result.fail(where + ": " + std::string(group_name(g)) + " mutated");
    }
  }
}

constexpr double kLearningRate = 1e-4;

}  // namespace

SuiteResult update_contract_suite(std::size_t instances, std::uint64_t seed) {
  constexpr std::array<Variant, 4> adapting{Variant::Full, Variant::LDGD, Variant::LD, Variant::GD};
  const GroupMask classify{ParamGroup::FE, ParamGroup::AN, ParamGroup::AC};
  const GroupMask discriminate{ParamGroup::LD, ParamGroup::GD};
  const GroupMask confuse{ParamGroup::FE, ParamGroup::AN};

  SuiteResult result;
  Rng rng(seed);
  const NetworkConfig network = tiny_config();
  for (std::size_t i = 0; i < instances; ++i) {
    const Variant variant = adapting[i % adapting.size()];
    const std::string where = "instance " + std::to_string(i) + " (" + std::string(variant_name(variant)) + ")";
    TrainConfig config;
    config.learning_rate = kLearningRate;
    config.seed = rng.next_u64();

    auto source_windows = random_windows(network, 4, rng, "train");
    auto target_windows = random_windows(network, 4, rng, "new");
    for (auto& w : target_windows) {
      for (auto& r : w.records) r = r * 0.5 + Eigen::MatrixXd::Constant(r.rows(), r.cols(), 0.3);
      w.label.reset();
    }
    const auto labeled = pointers(source_windows);
    std::vector<const LabeledWindow*> mixed = labeled;
    for (const auto& w : target_windows) mixed.push_back(&w);
    const std::vector<int> sources{0, 0, 0, 0, 1, 1, 1, 1};

    Trainer trainer(network, variant, config);

    // step_classify
    {
      const Checksums before = checksums(trainer.state());
      const double lc_before = trainer.evaluate_classification(labeled);
      trainer.step_classify(labeled);
      const double lc_after = trainer.evaluate_classification(labeled);
      check_partition(where + " classify", trainer.state(), before, checksums(trainer.state()), classify, result);
      if (!(lc_after <= lc_before)) result.fail(where + ": L_C increased after step_classify");
    }

    // step_discriminate
    {
      const Checksums before = checksums(trainer.state());
      const double ld_before = trainer.evaluate_domain(mixed, sources);
      trainer.step_discriminate(mixed, sources);
      const double ld_after = trainer.evaluate_domain(mixed, sources);
      check_partition(where + " discriminate", trainer.state(), before, checksums(trainer.state()), discriminate,
                      result);
      if (!(ld_after <= ld_before)) result.fail(where + ": L_D increased after step_discriminate");
    }

    // step_confuse, next to a hypothetical descent step from the same state
    {
      const NetworkState start = trainer.state();
      const NetworkState grad = trainer.domain_gradient(mixed, sources, confuse);
      NetworkState descended = start;
      Adam descent(start, confuse);
      descent.step(descended, grad, kLearningRate, 1.0);

      const Checksums before = checksums(start);
      const double ld_before = trainer.evaluate_domain(mixed, sources);
      trainer.step_confuse(mixed, sources);
      const double ld_after = trainer.evaluate_domain(mixed, sources);
      check_partition(where + " confuse", trainer.state(), before, checksums(trainer.state()), confuse, result);
      if (!(ld_after >= ld_before)) result.fail(where + ": L_D decreased after step_confuse");

      const auto s0 = start.tensors();
      const auto s1 = trainer.state().tensors();
      const auto sd = descended.tensors();
      for (std::size_t t = 0; t < s0.size(); ++t) {
        if (!confuse.contains(s0[t].group)) continue;
        for (std::size_t j = 0; j < s0[t].values.size(); ++j) {
          const double up = s1[t].values[j] - s0[t].values[j];
          const double down = sd[t].values[j] - s0[t].values[j];
          if (std::abs(up + down) > 1e-15 * std::max(1.0, std::abs(s0[t].values[j]))) {
            result.fail(where + ": confuse update is not the negated descent update in " + s0[t].name);
            break;
          }
        }
      }
    }
    ++result.instances;
  }
  return result;
}

}  // namespace salience::testing
