#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "salience/datasets.hpp"
#include "salience/kv_format.hpp"
#include "salience/network.hpp"
#include "salience/trainer.hpp"
#include "salience/window_store.hpp"

namespace salience {

/// Environment variable holding the default root for raw dataset directories.
inline constexpr const char* kDataRootEnv = "SALIENCE_DATA_ROOT";

/// Everything a command needs, read from one flat key-value file. Defaults
/// are layered: built-in values, then per-dataset values (learning rate,
/// window length), then the file, then command-line overrides.
struct RunConfig {
  /// "synthetic", a preset name ("pamap2", "opportunity") or a .layout path.
  std::string dataset = "synthetic";
  /// Raw data directory for real datasets; relative paths resolve against
  /// $SALIENCE_DATA_ROOT. Empty means $SALIENCE_DATA_ROOT/<dataset>.
  std::string data_dir;
  /// Processed window store to read instead of preprocessing on the fly.
  std::string store;
  double window_seconds = 2.0;
  double overlap_seconds = 1.0;

  SynthConfig synth;
  std::uint64_t data_seed = 1;

  /// Channel counts, window length and class count are filled in from the data.
  NetworkConfig network;
  TrainConfig train;

  Variant variant = Variant::Full;
  std::string new_user;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out;
  bool export_features = false;
  bool attention_report = true;
  /// OpenMP threads for the engine (0 = runtime default).
  int threads = 0;

  bool synthetic() const { return dataset == "synthetic"; }

  /// Built-in defaults for a dataset before any file values are applied.
  static RunConfig defaults_for(const std::string& dataset);
  static RunConfig from_document(const KvDocument& doc);
  static RunConfig load(const std::filesystem::path& path);
  KvDocument to_document() const;
  void validate() const;

  bool operator==(const RunConfig& other) const { return to_document() == other.to_document(); }
};

/// Directory holding the raw files of a real dataset.
std::filesystem::path resolve_data_dir(const RunConfig& config);

/// Load `store` if set, else read or generate the raw data and preprocess it.
WindowStore obtain_windows(const RunConfig& config);

/// Network config completed with the data-dependent fields and validated
/// (GeometryError when the window is too short).
NetworkConfig resolve_network(const RunConfig& config, const WindowStore& store);

}  // namespace salience
