#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "salience/kv_format.hpp"

namespace salience {

/// Architecture of the sensor-level alignment network. Defaults are the
/// full-scale values; desk-scale runs shrink the recurrent widths.
struct NetworkConfig {
  std::vector<std::size_t> channel_counts;
  std::size_t window_length = 200;
  std::size_t conv_kernels = 16;
  std::size_t conv1_height = 3;  ///< channel extent of the first kernel
  std::size_t conv_width = 5;    ///< temporal extent of every kernel
  std::size_t conv_stride = 2;
  std::size_t local_lstm_state = 64;
  std::size_t global_lstm_state = 128;
  std::size_t classifier_lstm_state = 128;
  std::size_t global_lstm_layers = 2;
  std::size_t classifier_lstm_layers = 2;
  std::size_t attention_dim = 64;
  std::size_t n_classes = 0;

  std::size_t sensor_count() const { return channel_counts.size(); }
  /// Channels seen by conv1 after zero padding sensors narrower than the kernel.
  std::size_t padded_channels(std::size_t k) const;
  /// Kernel positions along the channel axis (valid extent) for sensor k.
  std::size_t channel_positions(std::size_t k) const;
  std::size_t feature_width() const { return conv_kernels; }
  /// Temporal lengths after conv1, conv2, conv3 (index 0..2); 0 when the window is too short.
  std::array<std::size_t, 3> temporal_lengths() const;
  std::size_t output_length() const { return temporal_lengths()[2]; }

  /// Throws InvalidConfig for empty/zero fields and GeometryError when the
  /// window leaves no frames after the three convolutions.
  void validate() const;

  static NetworkConfig from_document(const KvDocument& doc);
  static NetworkConfig from_document(const KvDocument& doc, const NetworkConfig& defaults);
  KvDocument to_document() const;
};

/// Output length of a valid, strided convolution (0 if the input is too short).
std::size_t valid_conv_length(std::size_t input, std::size_t kernel, std::size_t stride);

enum class Variant { Base, LD, GD, LDGD, Full };

struct VariantTraits {
  bool local = false;
  bool global = false;
  bool attention = false;

  bool adapts() const { return local || global; }
};

VariantTraits traits(Variant v);
Variant parse_variant(std::string_view name);
std::string_view variant_name(Variant v);
inline constexpr std::array<Variant, 5> kAllVariants{Variant::Base, Variant::LD, Variant::GD, Variant::LDGD,
                                                     Variant::Full};

struct DenseParams {
  Eigen::MatrixXd weight;  ///< out x in
  Eigen::VectorXd bias;
};

/// Strided temporal convolution; weight columns are tap-major: column
/// `tap * in_width + channel`.
struct ConvParams {
  Eigen::MatrixXd weight;  ///< out x (taps * in)
  Eigen::VectorXd bias;
};

/// Gate blocks stacked as [input, forget, cell, output].
struct LstmParams {
  Eigen::MatrixXd input_weight;      ///< 4H x in
  Eigen::MatrixXd recurrent_weight;  ///< 4H x H
  Eigen::VectorXd bias;              ///< 4H

  std::size_t hidden() const { return static_cast<std::size_t>(recurrent_weight.cols()); }
};

struct BiLstmParams {
  LstmParams forward;
  LstmParams backward;
};

/// Stacked bidirectional LSTM layers read out by one dense layer.
struct HeadParams {
  std::vector<BiLstmParams> layers;
  DenseParams output;
};

struct ExtractorParams {
  ConvParams conv1;  ///< conv_kernels x (width * height): shared across channel positions
  ConvParams conv2;
  ConvParams conv3;
};

struct AttentionParams {
  DenseParams query;  ///< h x 2K
  DenseParams key;    ///< h x F
};

enum class ParamGroup : std::uint8_t { FE = 0, LD = 1, GD = 2, AN = 3, AC = 4 };
inline constexpr std::array<ParamGroup, 5> kAllGroups{ParamGroup::FE, ParamGroup::LD, ParamGroup::GD, ParamGroup::AN,
                                                      ParamGroup::AC};
std::string_view group_name(ParamGroup g);  ///< "theta_FE", ...

class GroupMask {
 public:
  constexpr GroupMask() = default;
  constexpr GroupMask(std::initializer_list<ParamGroup> groups) {
    for (auto g : groups) bits_ |= bit(g);
  }
  static constexpr GroupMask all() { return {ParamGroup::FE, ParamGroup::LD, ParamGroup::GD, ParamGroup::AN, ParamGroup::AC}; }
  constexpr bool contains(ParamGroup g) const { return (bits_ & bit(g)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }

 private:
  static constexpr std::uint8_t bit(ParamGroup g) { return static_cast<std::uint8_t>(1u << static_cast<unsigned>(g)); }
  std::uint8_t bits_ = 0;
};

struct TensorRef {
  ParamGroup group;
  std::string name;
  std::span<double> values;
};

struct ConstTensorRef {
  ParamGroup group;
  std::string name;
  std::span<const double> values;
};

/// Every learnable parameter, partitioned into the five groups. Groups absent
/// from an ablation variant are empty/disengaged. The same type doubles as a
/// gradient or optimizer-moment container.
struct NetworkState {
  std::vector<ExtractorParams> extractors;         ///< theta_FE, one per sensor
  std::vector<HeadParams> local_discriminators;    ///< theta_LD, one per sensor or none
  std::optional<HeadParams> global_discriminator;  ///< theta_GD
  std::optional<AttentionParams> attention;        ///< theta_AN
  HeadParams classifier;                           ///< theta_AC

  /// Flat views in a fixed canonical order.
  std::vector<TensorRef> tensors();
  std::vector<ConstTensorRef> tensors() const;

  std::size_t parameter_count() const;
  std::size_t parameter_count(ParamGroup g) const;
  bool has_group(ParamGroup g) const { return parameter_count(g) > 0; }

  NetworkState zeros_like() const;
  void set_zero();
  /// this += scale * other, restricted to `groups`.
  void add_scaled(const NetworkState& other, double scale, GroupMask groups = GroupMask::all());
  /// FNV-1a over the raw bytes of every tensor in one group.
  std::uint64_t checksum(ParamGroup g) const;
  bool all_finite() const;
};

/// Fan-in scaled uniform initialization: weights ~ U(-a, a) with
/// a = sqrt(kInitGain / fan_in), biases 0, LSTM forget-gate biases 1.
/// Each tensor draws from a stream derived from (seed, tensor name), so a
/// given tensor starts identically in every variant.
inline constexpr double kInitGain = 3.0;
NetworkState init_state(const NetworkConfig& config, Variant variant, std::uint64_t seed);

/// Same shapes as init_state, all zeros.
NetworkState zero_state(const NetworkConfig& config, Variant variant);

/// Binary checkpoint: magic "SALCKPT1", version, config and variant text,
/// then each parameter group under its theta name.
void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config, Variant variant,
                     const NetworkState& state);
struct Checkpoint {
  NetworkConfig config;
  Variant variant = Variant::Full;
  NetworkState state;
};
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace salience
