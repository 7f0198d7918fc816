#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "salience/data_pipeline.hpp"
#include "salience/kv_format.hpp"

namespace salience {

/// A dataset preset: the sensor layout plus whatever the loader needs to read
/// the raw per-user files (column count, delimiter, label mapping, file list).
struct DatasetPreset {
  SensorLayout layout;
  std::size_t column_count = 0;
  /// "space" (any run of blanks/tabs) or a single character such as ",".
  std::string delimiter = "space";
  /// Raw label value -> class index. Unmapped values become kNullLabel.
  std::map<std::int64_t, int> label_map;
  std::vector<std::string> class_names;
  /// (user id, file path relative to the dataset directory); a user may own
  /// several files.
  std::vector<std::pair<std::string, std::string>> user_files;

  std::size_t class_count() const { return class_names.size(); }
  std::vector<std::string> users() const;

  static DatasetPreset from_document(const KvDocument& doc);
  KvDocument to_document() const;
  static DatasetPreset load(const std::filesystem::path& path);
};

/// Resolve a preset name ("pamap2", "opportunity") against the shipped preset
/// directory, or treat the argument as a path to a .layout file.
std::filesystem::path resolve_preset(const std::string& name_or_path);
std::filesystem::path preset_directory();

/// One FrameSequence per listed file, channels bound per the preset layout.
std::vector<FrameSequence> load_real_dataset(const std::filesystem::path& directory, const DatasetPreset& preset);
std::vector<FrameSequence> load_real_dataset(const std::filesystem::path& directory, const std::string& layout_preset);

struct SynthConfig {
  std::size_t n_users = 6;
  std::size_t n_classes = 4;
  std::vector<std::size_t> channel_counts{3, 3, 3};
  double sampling_rate_hz = 24.0;
  double seconds_per_user = 301.0;
  /// Duration of one activity bout.
  double bout_seconds = 12.0;
  /// Sinusoids per channel in each class prototype.
  std::size_t components = 2;
  double noise_std = 0.1;
  /// Scales every per-user, per-sensor transform; 0 makes users identically distributed.
  double shift_magnitude = 1.0;
  /// Sensor receiving an additional large per-user transform, or -1 for none.
  int misaligned_sensor = -1;
  double misaligned_magnitude = 3.0;

  void validate() const;
  static SynthConfig from_document(const KvDocument& doc);
  KvDocument to_document() const;

  SensorLayout layout() const;
};

std::vector<FrameSequence> generate_synthetic(const SynthConfig& config, std::uint64_t seed);

/// Preset describing the raw files written by write_synthetic_dataset.
DatasetPreset synthetic_preset(const SynthConfig& config);

/// Write each user's sequence as a space-delimited file (time, label, channels)
/// plus `synthetic.layout`, so the data can be re-read by load_real_dataset.
void write_synthetic_dataset(const std::filesystem::path& directory, const SynthConfig& config,
                             const std::vector<FrameSequence>& sequences);

}  // namespace salience
