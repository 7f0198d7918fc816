#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "salience/data_pipeline.hpp"
#include "salience/model.hpp"
#include "salience/network.hpp"

namespace salience::engine {

/// Time-major batch of sequences: element t is a B x width matrix.
using SeqBatch = std::vector<Eigen::MatrixXd>;

struct BatchInput {
  std::size_t batch_size = 0;
  /// [sensor][time] -> B x padded channel count.
  std::vector<SeqBatch> sensors;
};

BatchInput make_batch(std::span<const LabeledWindow* const> windows, const NetworkConfig& config);
BatchInput make_batch(std::span<const LabeledWindow> windows, const NetworkConfig& config);

struct ConvCache {
  std::vector<Eigen::MatrixXd> patches;  ///< per output step, B x (taps * in)
  SeqBatch output;                       ///< post-ReLU
};

struct Conv1Cache {
  std::vector<std::vector<Eigen::MatrixXd>> patches;  ///< [t][position] B x (taps * height)
  SeqBatch output;                                    ///< B x (kernels * positions)
};

struct ExtractorCache {
  Conv1Cache conv1;
  ConvCache conv2;
  ConvCache conv3;

  const SeqBatch& features() const { return conv3.output; }
};

struct LstmCache {
  SeqBatch gates;   ///< activated [i, f, g, o], B x 4H, indexed by time
  SeqBatch cell;    ///< B x H
  SeqBatch tanh_cell;
  SeqBatch hidden;
};

struct HeadCache {
  std::vector<LstmCache> forward;
  std::vector<LstmCache> backward;
  std::vector<SeqBatch> outputs;  ///< per layer, B x 2H
  Eigen::MatrixXd readout;        ///< B x 2H final-state concatenation
  Eigen::MatrixXd logits;
  Eigen::MatrixXd probs;
};

struct ForwardCache {
  BatchInput input;
  std::vector<ExtractorCache> extractors;
  std::vector<HeadCache> locals;
  std::vector<Eigen::MatrixXd> pooled;  ///< per sensor, B x F
  Eigen::MatrixXd ybar;                 ///< B x 2K
  Eigen::MatrixXd query;                ///< B x h
  std::vector<Eigen::MatrixXd> keys;    ///< per sensor, B x h
  Eigen::MatrixXd alpha;                ///< B x K
  SeqBatch fused;
  std::optional<HeadCache> global;
  HeadCache classifier;

  std::size_t batch_size() const { return input.batch_size; }
};

/// dLoss/dlogits seeds for the three kinds of heads; an empty matrix means the
/// head does not contribute to the loss.
struct OutputGradients {
  Eigen::MatrixXd classifier;
  Eigen::MatrixXd global;
  std::vector<Eigen::MatrixXd> local;
};

/// Heads on the fused features to evaluate; skipped heads leave empty caches.
struct ForwardOptions {
  bool classifier = true;
  bool global = true;
};

struct BackwardOptions {
  /// Groups whose parameter gradients are accumulated. Gradients still flow
  /// through frozen groups when an upstream group needs them.
  GroupMask groups = GroupMask::all();
  /// Treat the local outputs feeding the attention query as constants.
  bool detach_query = false;
};

/// Batched forward/backward of the whole network. Sensor branches and the two
/// fused-feature heads run as OpenMP tasks; each writes only its own cache
/// slot and gradient group, so results do not depend on the thread count.
class Engine {
 public:
  explicit Engine(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }

  ForwardCache forward(const NetworkState& state, BatchInput input, const ForwardOptions& options = {}) const;

  /// Accumulate (+=) parameter gradients into `grad` (shaped like `state`).
  void backward(const NetworkState& state, const ForwardCache& cache, const OutputGradients& seeds,
                const BackwardOptions& options, NetworkState& grad) const;

  /// Per-window view of a batched forward, same layout as the reference path.
  static std::vector<ForwardTrace> traces(const ForwardCache& cache);

 private:
  NetworkConfig config_;
};

/// Number of OpenMP threads used by the engine (1 = fully serial schedule).
void set_thread_count(int threads);
int thread_count();

}  // namespace salience::engine
