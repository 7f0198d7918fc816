#include "salience/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "salience/error.hpp"
#include "salience/hash.hpp"
#include "salience/rng.hpp"

#ifndef SALIENCE_PRESET_DIR
#define SALIENCE_PRESET_DIR "presets"
#endif

namespace salience {

namespace fs = std::filesystem;

std::vector<std::string> DatasetPreset::users() const {
  std::vector<std::string> out;
  for (const auto& [user, file] : user_files) {
    if (std::find(out.begin(), out.end(), user) == out.end()) out.push_back(user);
  }
  return out;
}

namespace {

std::pair<std::string, std::string> split_pair(const std::string& value, const std::string& key) {
  const auto colon = value.find(':');
  if (colon == std::string::npos) {
    throw Error(ErrorKind::FormatError, "'" + key + "' entry needs 'name: value', got '" + value + "'");
  }
  return {trim(value.substr(0, colon)), trim(value.substr(colon + 1))};
}

std::vector<std::size_t> to_columns(const std::vector<std::int64_t>& values) {
  std::vector<std::size_t> out;
  for (auto v : values) {
    if (v < 0) throw Error(ErrorKind::FormatError, "negative column index " + std::to_string(v));
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

}  // namespace

DatasetPreset DatasetPreset::from_document(const KvDocument& doc) {
  DatasetPreset p;
  p.layout.name = doc.get_string("name", "unnamed");
  p.layout.sampling_rate_hz = doc.get_double("sampling_rate_hz", 0.0);
  p.layout.label_column = static_cast<std::size_t>(doc.get_int("label_column", 0));
  p.layout.user_field = doc.get_string("user_field", "file");
  p.layout.invalid_values = parse_double_list(doc.get_string("invalid_values", ""));
  p.column_count = static_cast<std::size_t>(doc.get_int("column_count", 0));
  p.delimiter = doc.get_string("delimiter", "space");
  for (const auto& entry : doc.get_all("sensor")) {
    auto [name, cols] = split_pair(entry, "sensor");
    p.layout.sensors.push_back({name, to_columns(parse_int_list(cols))});
  }
  for (const auto& item : split(doc.get_string("label_map", ""), ',')) {
    if (item.empty()) continue;
    auto [raw, cls] = split_pair(item, "label_map");
    p.label_map[parse_int(raw)] = static_cast<int>(parse_int(cls));
  }
  for (const auto& name : split(doc.get_string("class_names", ""), ',')) {
    if (!name.empty()) p.class_names.push_back(name);
  }
  for (const auto& entry : doc.get_all("user_file")) p.user_files.push_back(split_pair(entry, "user_file"));

  p.layout.validate();
  if (p.column_count == 0) throw Error(ErrorKind::InvalidConfig, "preset '" + p.layout.name + "' lacks column_count");
  for (const auto& s : p.layout.sensors) {
    for (auto c : s.source_columns) {
      if (c >= p.column_count) {
        throw Error(ErrorKind::InvalidConfig, "sensor '" + s.name + "' binds column " + std::to_string(c) +
                                                  " beyond column_count " + std::to_string(p.column_count));
      }
    }
  }
  for (const auto& [raw, cls] : p.label_map) {
    if (cls < 0 || static_cast<std::size_t>(cls) >= p.class_names.size()) {
      throw Error(ErrorKind::InvalidConfig, "label_map target " + std::to_string(cls) + " has no class name");
    }
  }
  return p;
}

KvDocument DatasetPreset::to_document() const {
  KvDocument doc;
  doc.set("name", layout.name);
  doc.set("sampling_rate_hz", format_double(layout.sampling_rate_hz));
  doc.set("column_count", std::to_string(column_count));
  doc.set("delimiter", delimiter);
  doc.set("label_column", std::to_string(layout.label_column));
  doc.set("user_field", layout.user_field);
  if (!layout.invalid_values.empty()) doc.set("invalid_values", join(layout.invalid_values));
  for (const auto& s : layout.sensors) doc.add("sensor", s.name + ": " + join(s.source_columns));
  std::string map;
  for (const auto& [raw, cls] : label_map) {
    if (!map.empty()) map += ", ";
    map += std::to_string(raw) + ":" + std::to_string(cls);
  }
  doc.set("label_map", map);
  doc.set("class_names", join(class_names));
  for (const auto& [user, file] : user_files) doc.add("user_file", user + ": " + file);
  return doc;
}

DatasetPreset DatasetPreset::load(const fs::path& path) { return from_document(KvDocument::load(path)); }

fs::path preset_directory() {
  if (const char* env = std::getenv("SALIENCE_PRESET_DIR")) return env;
  return SALIENCE_PRESET_DIR;
}

fs::path resolve_preset(const std::string& name_or_path) {
  fs::path direct(name_or_path);
  if (direct.has_extension() || name_or_path.find('/') != std::string::npos) {
    if (!fs::exists(direct)) throw Error(ErrorKind::MissingFile, "layout preset " + name_or_path + " not found");
    return direct;
  }
  fs::path shipped = preset_directory() / (name_or_path + ".layout");
  if (!fs::exists(shipped)) throw Error(ErrorKind::MissingFile, "no shipped preset named '" + name_or_path + "'");
  return shipped;
}

namespace {

std::vector<std::string_view> tokenize(std::string_view line, const std::string& delimiter) {
  std::vector<std::string_view> tokens;
  if (delimiter == "space") {
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
      if (i >= line.size()) break;
      std::size_t j = i;
      while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
      tokens.push_back(line.substr(i, j - i));
      i = j;
    }
    return tokens;
  }
  const char d = delimiter.empty() ? ',' : delimiter[0];
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(d, start);
    auto tok = line.substr(start, pos == std::string_view::npos ? line.size() - start : pos - start);
    while (!tok.empty() && (tok.back() == '\r' || tok.back() == ' ')) tok.remove_suffix(1);
    while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
    tokens.push_back(tok);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return tokens;
}

FrameSequence read_user_file(const fs::path& path, const std::string& user, const DatasetPreset& preset) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::vector<std::size_t> bound;
  for (const auto& s : preset.layout.sensors) bound.insert(bound.end(), s.source_columns.begin(), s.source_columns.end());

  std::vector<double> values;
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto tokens = tokenize(line, preset.delimiter);
    if (tokens.size() != preset.column_count) {
      throw Error(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                              std::to_string(preset.column_count) + " columns, found " +
                                              std::to_string(tokens.size()));
    }
    auto parse_at = [&](std::size_t column) {
      try {
        return parse_double(tokens[column]);
      } catch (const Error&) {
        throw Error(ErrorKind::FormatError, path.string() + ":" + std::to_string(line_no) + ": column " +
                                                std::to_string(column) + ": not a number '" +
                                                std::string(tokens[column]) + "'");
      }
    };
    const double raw_label = parse_at(preset.layout.label_column);
    int label = kNullLabel;
    if (std::isfinite(raw_label)) {
      auto it = preset.label_map.find(static_cast<std::int64_t>(std::llround(raw_label)));
      if (it != preset.label_map.end()) label = it->second;
    }
    labels.push_back(label);
    for (auto c : bound) values.push_back(parse_at(c));
  }
  FrameSequence seq;
  seq.user_id = user;
  seq.sampling_rate_hz = preset.layout.sampling_rate_hz;
  seq.labels = std::move(labels);
  const auto T = static_cast<Eigen::Index>(seq.labels.size());
  const auto C = static_cast<Eigen::Index>(bound.size());
  seq.frames = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(values.data(), T, C);
  return seq;
}

}  // namespace

std::vector<FrameSequence> load_real_dataset(const fs::path& directory, const DatasetPreset& preset) {
  if (!fs::is_directory(directory)) throw Error(ErrorKind::MissingFile, "dataset directory " + directory.string() + " not found");
  if (fs::is_empty(directory)) throw Error(ErrorKind::MissingFile, "dataset directory " + directory.string() + " is empty");
  if (preset.user_files.empty()) throw Error(ErrorKind::InvalidConfig, "preset lists no user files");
  std::vector<FrameSequence> out;
  for (const auto& [user, file] : preset.user_files) {
    const fs::path path = directory / file;
    if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, "missing data file " + path.string() + " (user " + user + ")");
    out.push_back(read_user_file(path, user, preset));
  }
  return out;
}

std::vector<FrameSequence> load_real_dataset(const fs::path& directory, const std::string& layout_preset) {
  return load_real_dataset(directory, DatasetPreset::load(resolve_preset(layout_preset)));
}

// --- synthetic data -------------------------------------------------------

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, "synthetic config: " + m); };
  if (n_users < 1) fail("n_users must be >= 1");
  if (n_classes < 1) fail("n_classes must be >= 1");
  if (channel_counts.empty()) fail("at least one sensor required");
  for (auto c : channel_counts) {
    if (c < 1) fail("channel counts must be positive");
  }
  if (!(sampling_rate_hz > 0)) fail("sampling_rate_hz must be positive");
  if (!(seconds_per_user > 0)) fail("seconds_per_user must be positive");
  if (!(bout_seconds > 0)) fail("bout_seconds must be positive");
  if (components < 1) fail("components must be >= 1");
  if (noise_std < 0 || shift_magnitude < 0 || misaligned_magnitude < 0) fail("magnitudes must be non-negative");
  if (misaligned_sensor >= static_cast<int>(channel_counts.size())) fail("misaligned_sensor out of range");
  if (misaligned_sensor < -1) fail("misaligned_sensor must be -1 or a sensor index");
}

SynthConfig SynthConfig::from_document(const KvDocument& doc) {
  SynthConfig c;
  c.n_users = static_cast<std::size_t>(doc.get_int("n_users", static_cast<std::int64_t>(c.n_users)));
  c.n_classes = static_cast<std::size_t>(doc.get_int("n_classes", static_cast<std::int64_t>(c.n_classes)));
  if (auto v = doc.get("channel_counts")) {
    c.channel_counts.clear();
    for (auto n : parse_int_list(*v)) {
      if (n < 1) throw Error(ErrorKind::InvalidConfig, "synthetic config: channel counts must be positive");
      c.channel_counts.push_back(static_cast<std::size_t>(n));
    }
  }
  c.sampling_rate_hz = doc.get_double("sampling_rate_hz", c.sampling_rate_hz);
  c.seconds_per_user = doc.get_double("seconds_per_user", c.seconds_per_user);
  c.bout_seconds = doc.get_double("bout_seconds", c.bout_seconds);
  c.components = static_cast<std::size_t>(doc.get_int("components", static_cast<std::int64_t>(c.components)));
  c.noise_std = doc.get_double("noise_std", c.noise_std);
  c.shift_magnitude = doc.get_double("shift_magnitude", c.shift_magnitude);
  c.misaligned_sensor = static_cast<int>(doc.get_int("misaligned_sensor", c.misaligned_sensor));
  c.misaligned_magnitude = doc.get_double("misaligned_magnitude", c.misaligned_magnitude);
  c.validate();
  return c;
}

KvDocument SynthConfig::to_document() const {
  KvDocument doc;
  doc.set("n_users", std::to_string(n_users));
  doc.set("n_classes", std::to_string(n_classes));
  doc.set("channel_counts", join(channel_counts));
  doc.set("sampling_rate_hz", format_double(sampling_rate_hz));
  doc.set("seconds_per_user", format_double(seconds_per_user));
  doc.set("bout_seconds", format_double(bout_seconds));
  doc.set("components", std::to_string(components));
  doc.set("noise_std", format_double(noise_std));
  doc.set("shift_magnitude", format_double(shift_magnitude));
  doc.set("misaligned_sensor", std::to_string(misaligned_sensor));
  doc.set("misaligned_magnitude", format_double(misaligned_magnitude));
  return doc;
}

SensorLayout SynthConfig::layout() const {
  SensorLayout layout;
  layout.name = "synthetic";
  layout.sampling_rate_hz = sampling_rate_hz;
  // Raw synthetic files: column 0 time, column 1 label, then the channels.
  layout.label_column = 1;
  std::size_t column = 2;
  for (std::size_t k = 0; k < channel_counts.size(); ++k) {
    SensorSpec s;
    s.name = "sensor" + std::to_string(k);
    for (std::size_t j = 0; j < channel_counts[k]; ++j) s.source_columns.push_back(column++);
    layout.sensors.push_back(std::move(s));
  }
  return layout;
}

namespace {

struct ChannelPrototype {
  double offset = 0.0;
  std::vector<double> amplitude;
  std::vector<double> frequency_hz;
};

/// x -> scale * R * x + offset, one per (user, sensor).
struct AffineTransform {
  Eigen::MatrixXd linear;
  Eigen::VectorXd offset;

  static AffineTransform identity(std::size_t c) {
    return {Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)),
            Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c))};
  }

  /// Random rotation (Cayley map of a skew-symmetric matrix), per-channel log-normal
  /// scale and Gaussian offset, each scaled by `magnitude`.
  static AffineTransform random(std::size_t c, double magnitude, Rng& rng) {
    const auto n = static_cast<Eigen::Index>(c);
    Eigen::MatrixXd skew = Eigen::MatrixXd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = i + 1; j < n; ++j) {
        const double a = rng.normal(0.0, 0.35 * magnitude);
        skew(i, j) = a;
        skew(j, i) = -a;
      }
    }
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd rotation = (eye - skew).lu().solve(eye + skew);
    Eigen::VectorXd scale(n);
    Eigen::VectorXd offset(n);
    for (Eigen::Index i = 0; i < n; ++i) scale(i) = std::exp(rng.normal(0.0, 0.25 * magnitude));
    for (Eigen::Index i = 0; i < n; ++i) offset(i) = rng.normal(0.0, 0.4 * magnitude);
    return {scale.asDiagonal() * rotation, offset};
  }

  AffineTransform then(const AffineTransform& outer) const {
    return {outer.linear * linear, outer.linear * offset + outer.offset};
  }
};

}  // namespace

std::vector<FrameSequence> generate_synthetic(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t K = config.channel_counts.size();
  Rng root(seed);

  // Class prototypes are shared by every user.
  Rng proto_rng = root.fork(1);
  std::vector<std::vector<std::vector<ChannelPrototype>>> prototypes(config.n_classes);  // [class][sensor][channel]
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    prototypes[c].resize(K);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t j = 0; j < config.channel_counts[k]; ++j) {
        ChannelPrototype p;
        p.offset = proto_rng.uniform(-0.6, 0.6);
        for (std::size_t m = 0; m < config.components; ++m) {
          p.amplitude.push_back(proto_rng.uniform(0.2, 0.8));
          p.frequency_hz.push_back(proto_rng.uniform(0.5, std::min(5.0, 0.4 * config.sampling_rate_hz)));
        }
        prototypes[c][k].push_back(std::move(p));
      }
    }
  }

  const std::size_t T = static_cast<std::size_t>(std::llround(config.seconds_per_user * config.sampling_rate_hz));
  const std::size_t bout = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(config.bout_seconds * config.sampling_rate_hz)));
  std::size_t total_channels = 0;
  for (auto c : config.channel_counts) total_channels += c;

  std::vector<FrameSequence> out;
  for (std::size_t u = 0; u < config.n_users; ++u) {
    Rng user_rng = root.fork(1000 + u);
    Rng transform_rng = user_rng.fork(7);
    std::vector<AffineTransform> transforms;
    for (std::size_t k = 0; k < K; ++k) {
      auto t = config.shift_magnitude > 0 ? AffineTransform::random(config.channel_counts[k], config.shift_magnitude, transform_rng)
                                          : AffineTransform::identity(config.channel_counts[k]);
      if (static_cast<int>(k) == config.misaligned_sensor && config.misaligned_magnitude > 0) {
        t = t.then(AffineTransform::random(config.channel_counts[k], config.misaligned_magnitude, transform_rng));
      }
      transforms.push_back(std::move(t));
    }

    FrameSequence seq;
    seq.user_id = "user" + std::to_string(u + 1);
    seq.sampling_rate_hz = config.sampling_rate_hz;
    seq.frames.resize(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(total_channels));
    seq.labels.resize(T);

    Rng signal_rng = user_rng.fork(11);
    std::vector<std::size_t> order;
    std::size_t order_pos = 0;
    std::vector<double> phases;
    int current = 0;
    for (std::size_t t = 0; t < T; ++t) {
      if (t % bout == 0) {
        // Cycle through shuffled class orders so every user sees balanced classes.
        if (order_pos == order.size()) {
          order.resize(config.n_classes);
          for (std::size_t c = 0; c < config.n_classes; ++c) order[c] = c;
          signal_rng.shuffle(order);
          order_pos = 0;
        }
        current = static_cast<int>(order[order_pos++]);
        phases.clear();
        for (std::size_t i = 0; i < total_channels * config.components; ++i) {
          phases.push_back(signal_rng.uniform(0.0, 2.0 * std::numbers::pi));
        }
      }
      seq.labels[t] = current;
      const double time = static_cast<double>(t) / config.sampling_rate_hz;
      std::size_t channel = 0;
      for (std::size_t k = 0; k < K; ++k) {
        const auto ck = static_cast<Eigen::Index>(config.channel_counts[k]);
        Eigen::VectorXd x(ck);
        for (Eigen::Index j = 0; j < ck; ++j) {
          const auto& p = prototypes[static_cast<std::size_t>(current)][k][static_cast<std::size_t>(j)];
          double value = p.offset;
          for (std::size_t m = 0; m < config.components; ++m) {
            const double phase = phases[(channel + static_cast<std::size_t>(j)) * config.components + m];
            value += p.amplitude[m] * std::sin(2.0 * std::numbers::pi * p.frequency_hz[m] * time + phase);
          }
          x(j) = value + signal_rng.normal(0.0, config.noise_std);
        }
        const Eigen::VectorXd y = transforms[k].linear * x + transforms[k].offset;
        for (Eigen::Index j = 0; j < ck; ++j) {
          seq.frames(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(channel) + j) = y(j);
        }
        channel += static_cast<std::size_t>(ck);
      }
    }
    out.push_back(std::move(seq));
  }
  return out;
}

DatasetPreset synthetic_preset(const SynthConfig& config) {
  DatasetPreset p;
  p.layout = config.layout();
  p.column_count = 2 + p.layout.total_channels();
  p.delimiter = "space";
  for (std::size_t c = 0; c < config.n_classes; ++c) {
    p.label_map[static_cast<std::int64_t>(c + 1)] = static_cast<int>(c);
    p.class_names.push_back("class" + std::to_string(c));
  }
  for (std::size_t u = 0; u < config.n_users; ++u) {
    const std::string user = "user" + std::to_string(u + 1);
    p.user_files.emplace_back(user, user + ".dat");
  }
  return p;
}

void write_synthetic_dataset(const fs::path& directory, const SynthConfig& config,
                             const std::vector<FrameSequence>& sequences) {
  fs::create_directories(directory);
  const DatasetPreset preset = synthetic_preset(config);
  for (const auto& seq : sequences) {
    const fs::path path = directory / (seq.user_id + ".dat");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
    for (Eigen::Index t = 0; t < seq.frames.rows(); ++t) {
      out << format_double(static_cast<double>(t) / seq.sampling_rate_hz) << ' ';
      const int label = seq.labels[static_cast<std::size_t>(t)];
      out << (label == kNullLabel ? 0 : label + 1);
      for (Eigen::Index c = 0; c < seq.frames.cols(); ++c) out << ' ' << format_double(seq.frames(t, c));
      out << '\n';
    }
  }
  preset.to_document().save(directory / "synthetic.layout");
}

}  // namespace salience
