#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace salience {

/// Frame label that marks "no activity" (e.g. the OPPORTUNITY null class or an
/// unmapped PAMAP2 activity id).
inline constexpr int kNullLabel = -1;

struct SensorSpec {
  std::string name;
  /// Columns of the raw file bound to this sensor, in channel order.
  std::vector<std::size_t> source_columns;

  std::size_t channel_count() const { return source_columns.size(); }
};

/// Channel map from raw file columns to K sensors. Bound channels of a
/// FrameSequence are the concatenation of every sensor's source columns, in
/// sensor order.
struct SensorLayout {
  std::string name;
  std::vector<SensorSpec> sensors;
  double sampling_rate_hz = 0.0;
  std::size_t label_column = 0;
  /// How the user id is obtained; "file" binds one user id per listed file.
  std::string user_field = "file";
  /// Dataset-specific sentinels treated as missing, in addition to NaN/inf.
  std::vector<double> invalid_values;

  std::size_t sensor_count() const { return sensors.size(); }
  std::size_t total_channels() const;
  /// First bound channel of sensor k.
  std::size_t channel_offset(std::size_t k) const;
  std::vector<std::size_t> channel_counts() const;

  /// Throws InvalidConfig on an empty sensor list, empty sensors, overlapping
  /// columns or a non-positive sampling rate.
  void validate() const;
};

struct FrameSequence {
  /// T x C, rows are frames.
  Eigen::MatrixXd frames;
  /// Length T; class index per frame or kNullLabel.
  std::vector<int> labels;
  std::string user_id;
  double sampling_rate_hz = 0.0;

  std::size_t frame_count() const { return static_cast<std::size_t>(frames.rows()); }
};

struct WindowId {
  std::string user_id;
  std::uint32_t index = 0;

  auto operator<=>(const WindowId&) const = default;
};

struct LabeledWindow {
  /// One l x c_k matrix per sensor.
  std::vector<Eigen::MatrixXd> records;
  std::optional<int> label;
  std::string user_id;
  std::uint32_t index = 0;

  WindowId id() const { return {user_id, index}; }
  std::size_t frames() const { return records.empty() ? 0 : static_cast<std::size_t>(records.front().rows()); }
};

struct ChannelStats {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t channel_count() const { return min.size(); }
  bool degenerate(std::size_t channel) const { return min[channel] == max[channel]; }
};

struct SplitSpec {
  std::string new_user;
  std::vector<LabeledWindow> train_set;
  /// New-user windows with labels stripped.
  std::vector<LabeledWindow> adapt_set;
  std::vector<LabeledWindow> test_set;
  std::uint64_t seed = 0;

  /// Hash over split membership (window ids of each part) so runs that must
  /// share a split can be checked against each other.
  std::uint64_t fingerprint() const;
};

/// Replace non-finite values and layout sentinels by per-channel linear
/// interpolation; leading/trailing gaps take the nearest valid value.
FrameSequence clean_frames(const FrameSequence& raw, const SensorLayout& layout);

/// Interpolate missing entries (flagged false in `valid`) of one channel in place.
void interpolate_channel(std::span<double> values, std::span<const bool> valid);

ChannelStats compute_channel_stats(std::span<const FrameSequence> sequences);
/// Same statistics over already segmented windows (sensor matrices concatenated
/// in sensor order give the channel index).
ChannelStats compute_channel_stats(std::span<const LabeledWindow> windows);
ChannelStats merge_stats(const ChannelStats& a, const ChannelStats& b);

/// Map each entry to [-1, 1] by the per-channel min/max, clamping values from
/// outside the fitted range. Degenerate channels map to 0.
double normalize_value(double x, double lo, double hi);
double denormalize_value(double x, double lo, double hi);
FrameSequence normalize_channels(const FrameSequence& seq, const ChannelStats& stats);
void normalize_windows(std::span<LabeledWindow> windows, const ChannelStats& stats);

struct WindowGeometry {
  std::size_t length = 0;  ///< frames per window
  std::size_t step = 0;    ///< frames between window starts

  static WindowGeometry from_seconds(double window_seconds, double overlap_seconds, double sampling_rate_hz);
  /// Start offsets of all complete windows in a sequence of `frame_count` frames.
  std::vector<std::size_t> offsets(std::size_t frame_count) const;
};

/// Most frequent label of the window; std::nullopt means rejected.
std::optional<int> assign_window_label(std::span<const int> labels);

std::vector<LabeledWindow> segment_windows(const FrameSequence& seq, const WindowGeometry& geometry,
                                           const SensorLayout& layout);
std::vector<LabeledWindow> segment_windows(const FrameSequence& seq, double window_seconds, double overlap_seconds,
                                           const SensorLayout& layout);

/// Renumber window indices 0..n-1 per user, in order of appearance.
void assign_window_indices(std::span<LabeledWindow> windows);

SplitSpec make_louo_split(std::span<const LabeledWindow> windows, const std::string& new_user, std::uint64_t seed);

/// Fit statistics on train + adaptation windows and normalize all three parts.
ChannelStats normalize_split(SplitSpec& split);

std::vector<std::string> user_ids(std::span<const LabeledWindow> windows);

}  // namespace salience
