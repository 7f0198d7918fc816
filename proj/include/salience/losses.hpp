#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "salience/data_pipeline.hpp"
#include "salience/engine.hpp"
#include "salience/model.hpp"

namespace salience {

/// Source label of a window in a discriminator batch.
inline constexpr int kTrainingSource = 0;
inline constexpr int kNewUserSource = 1;

/// Negative log of the probability given to `target`.
double cross_entropy(const Eigen::VectorXd& probs, int target);

struct LogitLoss {
  double value = 0.0;
  Eigen::MatrixXd d_logits;  ///< gradient of the mean loss, B x C
};

/// Mean cross-entropy of row-wise softmax(logits), scaled by `weight`.
LogitLoss softmax_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> targets, double weight = 1.0);

/// Collect class labels; every window must be labeled (UnlabeledSample).
std::vector<int> class_targets(std::span<const LabeledWindow* const> windows);

/// Mean classifier cross-entropy over a labeled batch.
double classification_loss(std::span<const LabeledWindow> batch, std::span<const ForwardTrace> traces);

/// Loss weights of the global and local discriminator terms for a network
/// with the given heads. Missing heads drop out of the mixture.
struct DomainWeights {
  double global = 0.0;
  double local = 0.0;  ///< applied to the mean of the K local terms
};
DomainWeights domain_weights(double lambda, bool has_global, bool has_local);

/// Mixture of global and per-sensor discriminator cross-entropies.
double domain_loss(std::span<const int> sources, std::span<const ForwardTrace> traces, double lambda);

struct BatchLoss {
  double value = 0.0;
  engine::OutputGradients seeds;
};

BatchLoss classification_loss(const engine::ForwardCache& cache, std::span<const int> targets);
BatchLoss domain_loss(const engine::ForwardCache& cache, std::span<const int> sources, double lambda);

/// Fraction of rows whose argmax equals the target.
double batch_accuracy(const Eigen::MatrixXd& probs, std::span<const int> targets);

}  // namespace salience
