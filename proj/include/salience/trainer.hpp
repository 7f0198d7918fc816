#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <set>
#include <span>
#include <vector>

#include "salience/data_pipeline.hpp"
#include "salience/engine.hpp"
#include "salience/kv_format.hpp"
#include "salience/network.hpp"
#include "salience/optimizer.hpp"

namespace salience {

struct TrainConfig {
  double learning_rate = 0.0005;
  std::size_t batch_size = 128;
  double lambda = 0.5;
  std::size_t max_iterations = 3000;
  /// Stop once the moving average of L_C over `convergence_window` iterations
  /// moves by less than `convergence_tolerance` across `convergence_span`
  /// iterations. A zero window disables the test.
  std::size_t convergence_window = 50;
  std::size_t convergence_span = 100;
  double convergence_tolerance = 1e-4;
  std::uint64_t seed = 1;
  /// Treat the local outputs feeding the attention query as constants.
  bool detach_query = false;
  /// Save a checkpoint every N iterations (0 = never).
  std::size_t checkpoint_every = 0;

  void validate() const;
  static TrainConfig from_document(const KvDocument& doc);
  static TrainConfig from_document(const KvDocument& doc, const TrainConfig& defaults);
  KvDocument to_document() const;
};

/// Window ids consumed by training, split by source.
struct DataAudit {
  std::set<WindowId> training;
  std::set<WindowId> adaptation;

  bool read_adaptation() const { return !adaptation.empty(); }
};

struct LogRecord {
  std::size_t iteration = 0;
  double classification_loss = 0.0;
  double domain_loss = 0.0;        ///< NaN for the base variant
  double global_accuracy = 0.0;    ///< NaN without a global discriminator
  double local_accuracy = 0.0;     ///< mean over sensors; NaN without local discriminators
};

/// Per-iteration records. Wall-clock time is kept apart so the record file is
/// reproducible byte for byte.
struct TrainingLog {
  std::vector<LogRecord> records;
  std::vector<double> wall_seconds;

  static void write_header(std::ostream& out);
  static void write_record(std::ostream& out, const LogRecord& record);
  void write(std::ostream& out) const;
  void write_timing(std::ostream& out) const;
  static TrainingLog read(std::istream& in);
};

struct DomainStep {
  double loss = 0.0;
  double global_accuracy = 0.0;
  double local_accuracy = 0.0;
};

/// Network state plus the three optimizers of the alternating update scheme.
class Trainer {
 public:
  Trainer(NetworkConfig network, Variant variant, TrainConfig config);
  Trainer(NetworkConfig network, Variant variant, TrainConfig config, NetworkState initial);

  /// Descent on L_C over theta_FE, theta_AN, theta_AC. Returns L_C before the update.
  double step_classify(std::span<const LabeledWindow* const> batch);
  /// Descent on L_D over theta_LD, theta_GD.
  DomainStep step_discriminate(std::span<const LabeledWindow* const> batch, std::span<const int> sources);
  /// Ascent on L_D over theta_FE, theta_AN.
  DomainStep step_confuse(std::span<const LabeledWindow* const> batch, std::span<const int> sources);

  /// Loss values without updating anything.
  double evaluate_classification(std::span<const LabeledWindow* const> batch) const;
  double evaluate_domain(std::span<const LabeledWindow* const> batch, std::span<const int> sources) const;

  /// Gradients of the losses for all groups and the given mask.
  NetworkState classification_gradient(std::span<const LabeledWindow* const> batch, GroupMask groups) const;
  NetworkState domain_gradient(std::span<const LabeledWindow* const> batch, std::span<const int> sources,
                               GroupMask groups) const;

  const NetworkState& state() const { return state_; }
  NetworkState& state() { return state_; }
  const NetworkConfig& network() const { return engine_.config(); }
  Variant variant() const { return variant_; }
  const TrainConfig& config() const { return config_; }
  std::size_t iteration() const { return iteration_; }
  void set_iteration(std::size_t i) { iteration_ = i; }

 private:
  void require_finite(double loss, const char* what) const;

  engine::Engine engine_;
  Variant variant_;
  TrainConfig config_;
  NetworkState state_;
  Adam classify_opt_;
  Adam discriminate_opt_;
  Adam confuse_opt_;
  std::size_t iteration_ = 0;
};

struct TrainHooks {
  /// Called after every iteration with the record just appended.
  std::function<void(const LogRecord&, double wall_seconds)> on_record;
  /// Called every `checkpoint_every` iterations.
  std::function<void(std::size_t iteration, const NetworkState&)> on_checkpoint;
};

struct TrainResult {
  NetworkState state;
  TrainingLog log;
  DataAudit audit;
  std::size_t iterations = 0;
  bool converged = false;
};

/// Alternating optimization: each iteration draws fresh batches and runs the
/// classify, discriminate and confuse steps in order. Variants without
/// discriminators only classify and never touch `adaptation`.
TrainResult train(const NetworkConfig& network, Variant variant, const TrainConfig& config,
                  std::span<const LabeledWindow> training, std::span<const LabeledWindow> adaptation,
                  const TrainHooks& hooks = {});

/// True when the moving-average convergence test passes after `losses`.
bool has_converged(std::span<const double> losses, const TrainConfig& config);

}  // namespace salience
