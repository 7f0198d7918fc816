#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "salience/data_pipeline.hpp"
#include "salience/datasets.hpp"

namespace salience {

/// Preprocessed windows of one dataset, ready for LOUO splitting. Windows are
/// cleaned but not normalized; `stats` are the dataset-wide channel ranges.
struct WindowStore {
  DatasetPreset preset;
  WindowGeometry geometry;
  ChannelStats stats;
  std::vector<LabeledWindow> windows;

  std::vector<std::string> users() const { return user_ids(windows); }
};

/// Binary container, layout in docs/formats.md. Written to a temporary file
/// and renamed, so a failed write leaves no store behind.
void save_window_store(const std::filesystem::path& path, const WindowStore& store);
WindowStore load_window_store(const std::filesystem::path& path);

/// clean -> stats -> segment -> label over every sequence.
WindowStore build_window_store(const std::vector<FrameSequence>& sequences, const DatasetPreset& preset,
                               const WindowGeometry& geometry);

struct StoreSummary {
  std::vector<std::pair<std::string, std::size_t>> windows_per_user;
  std::vector<std::size_t> class_histogram;
};
StoreSummary summarize(const WindowStore& store);

}  // namespace salience
