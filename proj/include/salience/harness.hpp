#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "salience/data_pipeline.hpp"
#include "salience/metrics.hpp"
#include "salience/network.hpp"
#include "salience/trainer.hpp"

namespace salience {

/// Argmax class of every window under the trained classifier.
std::vector<int> predict(const NetworkState& state, const NetworkConfig& config, std::span<const LabeledWindow> windows);

/// Pre-softmax classifier outputs, one row per window.
Eigen::MatrixXd classifier_logits(const NetworkState& state, const NetworkConfig& config,
                                  std::span<const LabeledWindow> windows);

struct UserResult {
  std::string user;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  ConfusionMatrix confusion;
  std::size_t test_windows = 0;
  std::uint64_t split_fingerprint = 0;
  std::size_t iterations = 0;
  bool converged = false;
  bool read_adaptation = false;
  std::string error;  ///< non-empty when the fold failed

  bool failed() const { return !error.empty(); }
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<UserResult> users;
  double mean_accuracy = 0.0;  ///< unweighted over completed users
  double mean_macro_f1 = 0.0;
};

struct MetricsReport {
  std::string variant;
  std::uint64_t config_fingerprint = 0;
  std::vector<SeedResult> seeds;
  double mean_accuracy = 0.0;  ///< over seeds
  double mean_macro_f1 = 0.0;
  double min_accuracy = 0.0;   ///< range of per-seed means
  double max_accuracy = 0.0;

  bool complete() const;
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
  /// One row per held-out user (mean over seeds) and one overall row.
  void write_user_csv(std::ostream& out) const;
  /// Every (seed, user) fold plus per-seed means.
  void write_seed_csv(std::ostream& out) const;
  void write_confusion_csv(std::ostream& out) const;
};

std::uint64_t config_fingerprint(const NetworkConfig& network, const TrainConfig& train, Variant variant);

struct FoldContext {
  std::uint64_t seed;
  const SplitSpec& split;
  const TrainResult& training;
  const UserResult& result;
};

struct LouoOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Held-out users to evaluate; empty means every user.
  std::vector<std::string> users;
  /// Called after each fold (logs, checkpoints, extra reports).
  std::function<void(const FoldContext&)> on_fold;
  /// Called before each fold with the hooks passed to train().
  std::function<TrainHooks(std::uint64_t seed, const std::string& user)> make_hooks;
};

/// Leave-one-user-out over the selected users and seeds. A failing fold is
/// recorded in the report (UserResult::error) and the remaining folds still
/// run. Training and split seeds are both the run seed.
MetricsReport run_louo(std::span<const LabeledWindow> windows, Variant variant, const NetworkConfig& network,
                       const TrainConfig& train_config, const LouoOptions& options);

/// Train on one split and score its test half.
UserResult evaluate_fold(const SplitSpec& split, Variant variant, const NetworkConfig& network,
                         const TrainConfig& train_config, TrainResult* training = nullptr,
                         const TrainHooks& hooks = {});

struct AttentionRow {
  std::string user;
  int activity = -1;  ///< -1 aggregates all activities
  std::size_t sensor = 0;
  double mean_attention = 0.0;
  double mean_output_difference = 0.0;  ///< |p_train - p_new| of the sensor's local discriminator
  std::size_t windows = 0;
};

struct AttentionReport {
  std::vector<AttentionRow> rows;

  void write_csv(std::ostream& out, std::span<const std::string> sensor_names = {}) const;
  /// Rows for one activity (or -1), ordered by sensor.
  std::vector<AttentionRow> select(const std::string& user, int activity) const;
};

/// Mean attention weight and local output difference per (activity, sensor)
/// over the labeled windows, plus an all-activity row per sensor. Requires a
/// state with attention (VariantWithoutAttention).
AttentionReport attention_report(const NetworkState& state, const NetworkConfig& config,
                                 std::span<const LabeledWindow> windows,
                                 const std::optional<std::set<int>>& activity_filter = std::nullopt);

/// Delimited table: user,index,label,tag,logit_0..logit_{C-1}. Unlabeled
/// windows leave the label empty.
void export_features(std::ostream& out, const NetworkState& state, const NetworkConfig& config,
                     std::span<const LabeledWindow> windows, const std::string& tag, bool header = true);
void export_features(const std::filesystem::path& path, const NetworkState& state, const NetworkConfig& config,
                     std::span<const std::pair<std::string, std::span<const LabeledWindow>>> tagged);

}  // namespace salience
