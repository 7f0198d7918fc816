#include "salience/network.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "salience/error.hpp"
#include "salience/hash.hpp"
#include "salience/rng.hpp"

namespace salience {

std::size_t valid_conv_length(std::size_t input, std::size_t kernel, std::size_t stride) {
  if (input < kernel || stride == 0) return 0;
  return (input - kernel) / stride + 1;
}

std::size_t NetworkConfig::padded_channels(std::size_t k) const { return std::max(channel_counts[k], conv1_height); }

std::size_t NetworkConfig::channel_positions(std::size_t k) const { return padded_channels(k) - conv1_height + 1; }

std::array<std::size_t, 3> NetworkConfig::temporal_lengths() const {
  const auto t1 = valid_conv_length(window_length, conv_width, conv_stride);
  const auto t2 = valid_conv_length(t1, conv_width, conv_stride);
  const auto t3 = valid_conv_length(t2, conv_width, conv_stride);
  return {t1, t2, t3};
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidConfig, "network config: " + m); };
  if (channel_counts.empty()) fail("at least one sensor required");
  for (auto c : channel_counts) {
    if (c == 0) fail("channel counts must be positive");
  }
  if (conv_kernels == 0 || conv1_height == 0 || conv_width == 0 || conv_stride == 0) fail("conv geometry must be positive");
  if (local_lstm_state == 0 || global_lstm_state == 0 || classifier_lstm_state == 0) fail("LSTM state sizes must be positive");
  if (global_lstm_layers == 0 || classifier_lstm_layers == 0) fail("LSTM layer counts must be positive");
  if (attention_dim == 0) fail("attention_dim must be positive");
  if (n_classes == 0) fail("n_classes must be positive");
  if (output_length() < 1) {
    throw Error(ErrorKind::GeometryError, "window of " + std::to_string(window_length) +
                                              " frames leaves no output after three stride-" +
                                              std::to_string(conv_stride) + " convolutions");
  }
}

NetworkConfig NetworkConfig::from_document(const KvDocument& doc) { return from_document(doc, NetworkConfig{}); }

NetworkConfig NetworkConfig::from_document(const KvDocument& doc, const NetworkConfig& defaults) {
  NetworkConfig c = defaults;
  auto size_field = [&](std::string_view key, std::size_t& field) {
    const auto v = doc.get_int(key, static_cast<std::int64_t>(field));
    if (v < 0) throw Error(ErrorKind::InvalidConfig, "network config: '" + std::string(key) + "' must be >= 0");
    field = static_cast<std::size_t>(v);
  };
  if (auto v = doc.get("channel_counts")) {
    c.channel_counts.clear();
    for (auto n : parse_int_list(*v)) {
      if (n < 1) throw Error(ErrorKind::InvalidConfig, "network config: channel counts must be positive");
      c.channel_counts.push_back(static_cast<std::size_t>(n));
    }
  }
  size_field("window_length", c.window_length);
  size_field("conv_kernels", c.conv_kernels);
  size_field("conv1_height", c.conv1_height);
  size_field("conv_width", c.conv_width);
  size_field("conv_stride", c.conv_stride);
  size_field("local_lstm_state", c.local_lstm_state);
  size_field("global_lstm_state", c.global_lstm_state);
  size_field("classifier_lstm_state", c.classifier_lstm_state);
  size_field("global_lstm_layers", c.global_lstm_layers);
  size_field("classifier_lstm_layers", c.classifier_lstm_layers);
  size_field("attention_dim", c.attention_dim);
  size_field("n_classes", c.n_classes);
  return c;
}

KvDocument NetworkConfig::to_document() const {
  KvDocument doc;
  doc.set("channel_counts", join(channel_counts));
  doc.set("window_length", std::to_string(window_length));
  doc.set("conv_kernels", std::to_string(conv_kernels));
  doc.set("conv1_height", std::to_string(conv1_height));
  doc.set("conv_width", std::to_string(conv_width));
  doc.set("conv_stride", std::to_string(conv_stride));
  doc.set("local_lstm_state", std::to_string(local_lstm_state));
  doc.set("global_lstm_state", std::to_string(global_lstm_state));
  doc.set("classifier_lstm_state", std::to_string(classifier_lstm_state));
  doc.set("global_lstm_layers", std::to_string(global_lstm_layers));
  doc.set("classifier_lstm_layers", std::to_string(classifier_lstm_layers));
  doc.set("attention_dim", std::to_string(attention_dim));
  doc.set("n_classes", std::to_string(n_classes));
  return doc;
}

VariantTraits traits(Variant v) {
  switch (v) {
    case Variant::Base: return {false, false, false};
    case Variant::LD: return {true, false, false};
    case Variant::GD: return {false, true, false};
    case Variant::LDGD: return {true, true, false};
    case Variant::Full: return {true, true, true};
  }
  return {};
}

Variant parse_variant(std::string_view name) {
  std::string n(name);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char c) { return std::tolower(c); });
  if (n == "base") return Variant::Base;
  if (n == "ld") return Variant::LD;
  if (n == "gd") return Variant::GD;
  if (n == "ldgd" || n == "ld&gd" || n == "ld_gd") return Variant::LDGD;
  if (n == "full" || n == "salience") return Variant::Full;
  throw Error(ErrorKind::UnknownVariant, "unknown variant '" + std::string(name) + "' (expected base|LD|GD|LDGD|full)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Base: return "base";
    case Variant::LD: return "LD";
    case Variant::GD: return "GD";
    case Variant::LDGD: return "LDGD";
    case Variant::Full: return "full";
  }
  return "?";
}

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::FE: return "theta_FE";
    case ParamGroup::LD: return "theta_LD";
    case ParamGroup::GD: return "theta_GD";
    case ParamGroup::AN: return "theta_AN";
    case ParamGroup::AC: return "theta_AC";
  }
  return "?";
}

namespace {

// Visits every tensor in canonical order as f(group, name, eigen_object&).
template <typename State, typename F>
void visit_tensors(State& s, F&& f) {
  auto dense = [&](ParamGroup g, const std::string& prefix, auto& d) {
    f(g, prefix + ".weight", d.weight);
    f(g, prefix + ".bias", d.bias);
  };
  auto lstm = [&](ParamGroup g, const std::string& prefix, auto& p) {
    f(g, prefix + ".input_weight", p.input_weight);
    f(g, prefix + ".recurrent_weight", p.recurrent_weight);
    f(g, prefix + ".bias", p.bias);
  };
  auto head = [&](ParamGroup g, const std::string& prefix, auto& h) {
    for (std::size_t i = 0; i < h.layers.size(); ++i) {
      lstm(g, prefix + ".layer" + std::to_string(i) + ".forward", h.layers[i].forward);
      lstm(g, prefix + ".layer" + std::to_string(i) + ".backward", h.layers[i].backward);
    }
    dense(g, prefix + ".output", h.output);
  };
  for (std::size_t k = 0; k < s.extractors.size(); ++k) {
    const std::string p = "extractor" + std::to_string(k);
    dense(ParamGroup::FE, p + ".conv1", s.extractors[k].conv1);
    dense(ParamGroup::FE, p + ".conv2", s.extractors[k].conv2);
    dense(ParamGroup::FE, p + ".conv3", s.extractors[k].conv3);
  }
  for (std::size_t k = 0; k < s.local_discriminators.size(); ++k) {
    head(ParamGroup::LD, "local" + std::to_string(k), s.local_discriminators[k]);
  }
  if (s.global_discriminator) head(ParamGroup::GD, "global", *s.global_discriminator);
  if (s.attention) {
    dense(ParamGroup::AN, "attention.query", s.attention->query);
    dense(ParamGroup::AN, "attention.key", s.attention->key);
  }
  head(ParamGroup::AC, "classifier", s.classifier);
}

}  // namespace

std::vector<TensorRef> NetworkState::tensors() {
  std::vector<TensorRef> out;
  visit_tensors(*this, [&](ParamGroup g, std::string name, auto& m) {
    out.push_back({g, std::move(name), std::span<double>(m.data(), static_cast<std::size_t>(m.size()))});
  });
  return out;
}

std::vector<ConstTensorRef> NetworkState::tensors() const {
  std::vector<ConstTensorRef> out;
  visit_tensors(*this, [&](ParamGroup g, std::string name, const auto& m) {
    out.push_back({g, std::move(name), std::span<const double>(m.data(), static_cast<std::size_t>(m.size()))});
  });
  return out;
}

std::size_t NetworkState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += t.values.size();
  return n;
}

std::size_t NetworkState::parameter_count(ParamGroup g) const {
  std::size_t n = 0;
  for (const auto& t : tensors()) {
    if (t.group == g) n += t.values.size();
  }
  return n;
}

NetworkState NetworkState::zeros_like() const {
  NetworkState z = *this;
  z.set_zero();
  return z;
}

void NetworkState::set_zero() {
  visit_tensors(*this, [](ParamGroup, const std::string&, auto& m) { m.setZero(); });
}

void NetworkState::add_scaled(const NetworkState& other, double scale, GroupMask groups) {
  auto mine = tensors();
  const auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw Error(ErrorKind::ShapeMismatch, "network states differ in structure");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (!groups.contains(mine[i].group)) continue;
    auto dst = mine[i].values;
    const auto src = theirs[i].values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
  }
}

std::uint64_t NetworkState::checksum(ParamGroup g) const {
  Fnv1a h;
  for (const auto& t : tensors()) {
    if (t.group != g) continue;
    h.update(t.name);
    h.update(t.values.data(), t.values.size_bytes());
  }
  return h.digest();
}

bool NetworkState::all_finite() const {
  for (const auto& t : tensors()) {
    for (double v : t.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

namespace {

DenseParams make_dense(std::size_t out, std::size_t in) {
  return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
          Eigen::VectorXd::Zero(static_cast<Eigen::Index>(out))};
}

ConvParams make_conv(std::size_t out, std::size_t fan) {
  auto d = make_dense(out, fan);
  return {std::move(d.weight), std::move(d.bias)};
}

LstmParams make_lstm(std::size_t in, std::size_t hidden) {
  const auto H4 = static_cast<Eigen::Index>(4 * hidden);
  return {Eigen::MatrixXd::Zero(H4, static_cast<Eigen::Index>(in)),
          Eigen::MatrixXd::Zero(H4, static_cast<Eigen::Index>(hidden)), Eigen::VectorXd::Zero(H4)};
}

HeadParams make_head(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out) {
  HeadParams h;
  std::size_t width = in;
  for (std::size_t i = 0; i < layers; ++i) {
    h.layers.push_back({make_lstm(width, hidden), make_lstm(width, hidden)});
    width = 2 * hidden;
  }
  h.output = make_dense(out, 2 * hidden);
  return h;
}

}  // namespace

NetworkState zero_state(const NetworkConfig& config, Variant variant) {
  config.validate();
  const auto vt = traits(variant);
  const std::size_t K = config.sensor_count();
  const std::size_t F = config.feature_width();
  NetworkState s;
  for (std::size_t k = 0; k < K; ++k) {
    ExtractorParams e;
    e.conv1 = make_conv(config.conv_kernels, config.conv_width * config.conv1_height);
    e.conv2 = make_conv(config.conv_kernels, config.conv_width * config.conv_kernels * config.channel_positions(k));
    e.conv3 = make_conv(config.conv_kernels, config.conv_width * config.conv_kernels);
    s.extractors.push_back(std::move(e));
  }
  if (vt.local) {
    for (std::size_t k = 0; k < K; ++k) s.local_discriminators.push_back(make_head(F, config.local_lstm_state, 1, 2));
  }
  if (vt.global) s.global_discriminator = make_head(F, config.global_lstm_state, config.global_lstm_layers, 2);
  if (vt.attention) {
    s.attention = AttentionParams{make_dense(config.attention_dim, 2 * K), make_dense(config.attention_dim, F)};
  }
  s.classifier = make_head(F, config.classifier_lstm_state, config.classifier_lstm_layers, config.n_classes);
  return s;
}

NetworkState init_state(const NetworkConfig& config, Variant variant, std::uint64_t seed) {
  NetworkState s = zero_state(config, variant);
  // Fan-in of each weight tensor is derived from its shape; LSTM gate
  // pre-activations see input and recurrent contributions together.
  auto fill = [&](const std::string& name, Eigen::MatrixXd& w, std::size_t fan_in) {
    Rng rng(seed ^ (fnv1a(name) * 0x9E3779B97F4A7C15ULL));
    const double a = std::sqrt(kInitGain / static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-a, a);
  };
  auto dense = [&](const std::string& name, DenseParams& d) { fill(name + ".weight", d.weight, static_cast<std::size_t>(d.weight.cols())); };
  auto conv = [&](const std::string& name, ConvParams& c) { fill(name + ".weight", c.weight, static_cast<std::size_t>(c.weight.cols())); };
  auto lstm = [&](const std::string& name, LstmParams& p) {
    const auto fan = static_cast<std::size_t>(p.input_weight.cols() + p.recurrent_weight.cols());
    fill(name + ".input_weight", p.input_weight, fan);
    fill(name + ".recurrent_weight", p.recurrent_weight, fan);
    const auto H = static_cast<Eigen::Index>(p.hidden());
    p.bias.segment(H, H).setOnes();
  };
  auto head = [&](const std::string& prefix, HeadParams& h) {
    for (std::size_t i = 0; i < h.layers.size(); ++i) {
      lstm(prefix + ".layer" + std::to_string(i) + ".forward", h.layers[i].forward);
      lstm(prefix + ".layer" + std::to_string(i) + ".backward", h.layers[i].backward);
    }
    dense(prefix + ".output", h.output);
  };
  for (std::size_t k = 0; k < s.extractors.size(); ++k) {
    const std::string p = "extractor" + std::to_string(k);
    conv(p + ".conv1", s.extractors[k].conv1);
    conv(p + ".conv2", s.extractors[k].conv2);
    conv(p + ".conv3", s.extractors[k].conv3);
  }
  for (std::size_t k = 0; k < s.local_discriminators.size(); ++k) head("local" + std::to_string(k), s.local_discriminators[k]);
  if (s.global_discriminator) head("global", *s.global_discriminator);
  if (s.attention) {
    dense("attention.query", s.attention->query);
    dense("attention.key", s.attention->key);
  }
  head("classifier", s.classifier);
  return s;
}

// --- checkpoints -------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'A', 'L', 'C', 'K', 'P', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
void put_string(std::ostream& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error(ErrorKind::FormatError, "truncated checkpoint (" + what + ")");
  return v;
}
std::string get_string(std::istream& in, const std::string& what) {
  const auto n = get<std::uint32_t>(in, what);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error(ErrorKind::FormatError, "truncated checkpoint (" + what + ")");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& config, Variant variant,
                     const NetworkState& state) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IOError, "cannot write " + tmp);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put_string(out, config.to_document().serialize());
    put_string(out, variant_name(variant));
    const auto tensors = state.tensors();
    std::uint32_t groups_present = 0;
    for (auto g : kAllGroups) groups_present += state.has_group(g) ? 1 : 0;
    put<std::uint32_t>(out, groups_present);
    for (auto g : kAllGroups) {
      if (!state.has_group(g)) continue;
      put_string(out, group_name(g));
      std::uint32_t count = 0;
      for (const auto& t : tensors) count += t.group == g ? 1 : 0;
      put<std::uint32_t>(out, count);
      for (const auto& t : tensors) {
        if (t.group != g) continue;
        put_string(out, t.name);
        put<std::uint64_t>(out, t.values.size());
        out.write(reinterpret_cast<const char*>(t.values.data()), static_cast<std::streamsize>(t.values.size_bytes()));
      }
    }
    if (!out) throw Error(ErrorKind::IOError, "failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw Error(ErrorKind::FormatError, path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw Error(ErrorKind::FormatError, "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = NetworkConfig::from_document(KvDocument::parse(get_string(in, "config"), "checkpoint config"));
  ck.variant = parse_variant(get_string(in, "variant"));
  ck.state = zero_state(ck.config, ck.variant);
  auto tensors = ck.state.tensors();
  const auto groups = get<std::uint32_t>(in, "group count");
  std::size_t filled = 0;
  for (std::uint32_t gi = 0; gi < groups; ++gi) {
    const std::string gname = get_string(in, "group name");
    const auto count = get<std::uint32_t>(in, "tensor count");
    for (std::uint32_t ti = 0; ti < count; ++ti) {
      const std::string name = get_string(in, "tensor name");
      const auto size = get<std::uint64_t>(in, "tensor size");
      auto it = std::find_if(tensors.begin(), tensors.end(), [&](const TensorRef& t) { return t.name == name; });
      if (it == tensors.end() || group_name(it->group) != gname || it->values.size() != size) {
        throw Error(ErrorKind::FormatError, "checkpoint tensor '" + name + "' does not match the stored config");
      }
      if (!in.read(reinterpret_cast<char*>(it->values.data()), static_cast<std::streamsize>(it->values.size_bytes()))) {
        throw Error(ErrorKind::FormatError, "truncated checkpoint tensor '" + name + "'");
      }
      ++filled;
    }
  }
  if (filled != tensors.size()) throw Error(ErrorKind::FormatError, "checkpoint is missing tensors");
  return ck;
}

}  // namespace salience
