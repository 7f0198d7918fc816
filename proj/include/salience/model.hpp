#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "salience/data_pipeline.hpp"
#include "salience/network.hpp"

namespace salience {

/// Every intermediate of one window's forward pass.
struct ForwardTrace {
  std::vector<Eigen::MatrixXd> features;  ///< X: one T' x F sequence per sensor
  std::vector<Eigen::VectorXd> pooled;    ///< temporal means of `features`
  Eigen::MatrixXd local_probs;            ///< K x 2 rows (p_train, p_new); empty without local discriminators
  Eigen::VectorXd attention;              ///< alpha, length K
  Eigen::MatrixXd fused;                  ///< v, T' x F
  Eigen::VectorXd class_logits;
  Eigen::VectorXd class_probs;
  Eigen::VectorXd global_probs;  ///< empty without a global discriminator

  /// Flattened local outputs in sensor order.
  Eigen::VectorXd ybar() const;
};

// Single-window operations. These are written as plain loops and serve as the
// serial reference for the batched engine.

Eigen::MatrixXd feature_extractor_forward(const Eigen::MatrixXd& record, const ExtractorParams& params,
                                          const NetworkConfig& config);
Eigen::VectorXd temporal_pool(const Eigen::MatrixXd& features);

/// Stacked bi-LSTM, final forward/backward state concatenation, dense readout.
Eigen::VectorXd head_logits(const Eigen::MatrixXd& sequence, const HeadParams& params);
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

Eigen::Vector2d local_discriminator_forward(const Eigen::MatrixXd& features, const HeadParams& params);
Eigen::Vector2d global_discriminator_forward(const Eigen::MatrixXd& fused, const HeadParams& params);
Eigen::VectorXd activity_classifier_forward(const Eigen::MatrixXd& fused, const HeadParams& params);

/// Scaled dot-product scores of the sensor keys against the query built from
/// the flattened local outputs.
Eigen::VectorXd attention_scores(std::span<const Eigen::VectorXd> pooled, const Eigen::VectorXd& ybar,
                                 const AttentionParams& params);
Eigen::VectorXd attention_weights(std::span<const Eigen::VectorXd> pooled, const Eigen::VectorXd& ybar,
                                  const AttentionParams& params);

/// Alpha-weighted sum of the full sensor feature sequences.
Eigen::MatrixXd fuse(std::span<const Eigen::MatrixXd> features, const Eigen::VectorXd& alpha);

/// Compose the network for one window. Variants without attention fuse with
/// uniform weights.
ForwardTrace forward(const LabeledWindow& window, const NetworkState& state, const NetworkConfig& config);
std::vector<ForwardTrace> forward(std::span<const LabeledWindow> batch, const NetworkState& state,
                                  const NetworkConfig& config);

}  // namespace salience
