#include "salience/run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>

#include "salience/error.hpp"

namespace salience {

namespace fs = std::filesystem;

namespace {

const std::set<std::string>& run_keys() {
  static const std::set<std::string> keys{"dataset", "data_dir",    "store",       "window_seconds",   "overlap_seconds",
                                          "data_seed", "variant",   "new_user",    "seeds",            "out",
                                          "export_features", "attention_report", "threads"};
  return keys;
}

const std::set<std::string>& derived_network_keys() {
  static const std::set<std::string> keys{"channel_counts", "window_length", "n_classes"};
  return keys;
}

std::set<std::string> keys_of(const KvDocument& doc) {
  std::set<std::string> out;
  for (const auto& e : doc.entries()) out.insert(e.first);
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

}  // namespace

RunConfig RunConfig::defaults_for(const std::string& dataset) {
  RunConfig c;
  c.dataset = dataset;
  const std::string name = lower(fs::path(dataset).stem().string());
  if (name == "pamap2") {
    c.train.learning_rate = 0.0005;
    c.window_seconds = 2.0;
    c.overlap_seconds = 1.0;
  } else if (name == "opportunity") {
    c.train.learning_rate = 0.0001;
    c.window_seconds = 10.0;
    c.overlap_seconds = 1.0;
  }
  return c;
}

RunConfig RunConfig::from_document(const KvDocument& doc) {
  RunConfig c = defaults_for(doc.get_string("dataset", "synthetic"));
  const std::set<std::string> synth_keys = keys_of(SynthConfig{}.to_document());
  const std::set<std::string> network_keys = keys_of(NetworkConfig{}.to_document());
  const std::set<std::string> train_keys = keys_of(TrainConfig{}.to_document());
  for (const auto& e : doc.entries()) {
    const bool known = run_keys().count(e.first) || train_keys.count(e.first) ||
                       (network_keys.count(e.first) && !derived_network_keys().count(e.first)) ||
                       (c.synthetic() && synth_keys.count(e.first));
    if (!known) {
      if (derived_network_keys().count(e.first)) {
        throw Error(ErrorKind::InvalidConfig, "'" + e.first + "' is derived from the dataset and cannot be set");
      }
      throw Error(ErrorKind::InvalidConfig, "unknown config key '" + e.first + "'");
    }
  }
  c.data_dir = doc.get_string("data_dir", c.data_dir);
  c.store = doc.get_string("store", c.store);
  c.window_seconds = doc.get_double("window_seconds", c.window_seconds);
  c.overlap_seconds = doc.get_double("overlap_seconds", c.overlap_seconds);
  if (c.synthetic()) c.synth = SynthConfig::from_document(doc);
  c.data_seed = static_cast<std::uint64_t>(doc.get_int("data_seed", static_cast<std::int64_t>(c.data_seed)));
  KvDocument network_doc;
  for (const auto& e : doc.entries()) {
    if (network_keys.count(e.first) && !derived_network_keys().count(e.first)) network_doc.add(e.first, e.second);
  }
  c.network = NetworkConfig::from_document(network_doc, c.network);
  c.train = TrainConfig::from_document(doc, c.train);
  if (auto v = doc.get("variant")) c.variant = parse_variant(*v);
  c.new_user = doc.get_string("new_user", c.new_user);
  if (auto v = doc.get("seeds")) {
    c.seeds.clear();
    for (auto s : parse_int_list(*v)) {
      if (s < 0) throw Error(ErrorKind::InvalidConfig, "seeds must be non-negative");
      c.seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  c.out = doc.get_string("out", c.out);
  c.export_features = doc.get_bool("export_features", c.export_features);
  c.attention_report = doc.get_bool("attention_report", c.attention_report);
  c.threads = static_cast<int>(doc.get_int("threads", c.threads));
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, "config file not found: " + path.string());
  return from_document(KvDocument::load(path));
}

KvDocument RunConfig::to_document() const {
  KvDocument doc;
  doc.set("dataset", dataset);
  if (!data_dir.empty()) doc.set("data_dir", data_dir);
  if (!store.empty()) doc.set("store", store);
  doc.set("window_seconds", format_double(window_seconds));
  doc.set("overlap_seconds", format_double(overlap_seconds));
  if (synthetic()) doc.merge(synth.to_document());
  doc.set("data_seed", std::to_string(data_seed));
  const KvDocument net = network.to_document();
  for (const auto& e : net.entries()) {
    if (!derived_network_keys().count(e.first)) doc.set(e.first, e.second);
  }
  doc.merge(train.to_document());
  doc.set("variant", std::string(variant_name(variant)));
  if (!new_user.empty()) doc.set("new_user", new_user);
  doc.set("seeds", join(seeds));
  if (!out.empty()) doc.set("out", out);
  doc.set("export_features", export_features ? "true" : "false");
  doc.set("attention_report", attention_report ? "true" : "false");
  doc.set("threads", std::to_string(threads));
  return doc;
}

void RunConfig::validate() const {
  if (!(window_seconds > overlap_seconds) || overlap_seconds < 0) {
    throw Error(ErrorKind::InvalidGeometry, "window_seconds must exceed overlap_seconds >= 0");
  }
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "at least one seed is required");
  if (threads < 0) throw Error(ErrorKind::InvalidConfig, "threads must be >= 0");
  if (synthetic()) synth.validate();
  train.validate();
  if (!store.empty() && !fs::exists(store)) throw Error(ErrorKind::MissingFile, "store not found: " + store);
  if (!synthetic() && store.empty()) {
    resolve_preset(dataset);  // throws MissingFile for an unknown preset
    const fs::path dir = resolve_data_dir(*this);
    if (!fs::is_directory(dir)) throw Error(ErrorKind::MissingFile, "data directory not found: " + dir.string());
  }
}

fs::path resolve_data_dir(const RunConfig& config) {
  const char* root = std::getenv(kDataRootEnv);
  const fs::path base = root ? fs::path(root) : fs::path();
  if (config.data_dir.empty()) {
    if (!root) throw Error(ErrorKind::InvalidConfig, std::string("data_dir not set and ") + kDataRootEnv + " undefined");
    return base / fs::path(config.dataset).stem();
  }
  const fs::path dir(config.data_dir);
  return dir.is_absolute() || !root ? dir : base / dir;
}

WindowStore obtain_windows(const RunConfig& config) {
  if (!config.store.empty()) return load_window_store(config.store);
  if (config.synthetic()) {
    const auto geometry = WindowGeometry::from_seconds(config.window_seconds, config.overlap_seconds,
                                                       config.synth.sampling_rate_hz);
    return build_window_store(generate_synthetic(config.synth, config.data_seed), synthetic_preset(config.synth),
                              geometry);
  }
  const DatasetPreset preset = DatasetPreset::load(resolve_preset(config.dataset));
  const auto geometry = WindowGeometry::from_seconds(config.window_seconds, config.overlap_seconds,
                                                     preset.layout.sampling_rate_hz);
  return build_window_store(load_real_dataset(resolve_data_dir(config), preset), preset, geometry);
}

NetworkConfig resolve_network(const RunConfig& config, const WindowStore& store) {
  NetworkConfig n = config.network;
  n.channel_counts = store.preset.layout.channel_counts();
  n.window_length = store.geometry.length;
  n.n_classes = store.preset.class_count();
  n.validate();
  return n;
}

}  // namespace salience
