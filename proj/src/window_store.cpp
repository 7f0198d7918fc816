#include "salience/window_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <algorithm>
#include <sstream>

#include "salience/error.hpp"
#include "salience/hash.hpp"

namespace salience {

static_assert(std::endian::native == std::endian::little, "store format is little-endian");

namespace {

constexpr char kMagic[8] = {'S', 'A', 'L', 'W', 'I', 'N', 'S', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    bytes(&v, sizeof v);
  }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    buffer_.append(p, n);
  }
  const std::string& buffer() const { return buffer_; }

 private:
  std::string buffer_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <class T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof v, what);
    return v;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void bytes(void* out, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t position() const { return pos_; }
  std::size_t size() const { return data_.size(); }
  const std::string& data() const { return data_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) throw Error(ErrorKind::FormatError, std::string("window store truncated at ") + what);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::uint64_t digest(const char* data, std::size_t n) {
  Fnv1a h;
  h.update(data, n);
  return h.digest();
}

}  // namespace

void save_window_store(const std::filesystem::path& path, const WindowStore& store) {
  const auto counts = store.preset.layout.channel_counts();
  const std::size_t l = store.geometry.length;
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put(kVersion);
  KvDocument meta = store.preset.to_document();
  meta.set("window_length", std::to_string(store.geometry.length));
  meta.set("window_step", std::to_string(store.geometry.step));
  meta.set("stats_min", join(store.stats.min));
  meta.set("stats_max", join(store.stats.max));
  w.put_string(meta.serialize());
  w.put(static_cast<std::uint32_t>(counts.size()));
  for (auto c : counts) w.put(static_cast<std::uint32_t>(c));
  w.put(static_cast<std::uint32_t>(l));
  w.put(static_cast<std::uint64_t>(store.windows.size()));
  for (const auto& win : store.windows) {
    if (win.records.size() != counts.size()) throw Error(ErrorKind::ShapeMismatch, "window sensor count differs from layout");
    w.put_string(win.user_id);
    w.put(win.index);
    w.put(static_cast<std::int32_t>(win.label ? *win.label : -1));
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const auto& r = win.records[k];
      if (static_cast<std::size_t>(r.rows()) != l || static_cast<std::size_t>(r.cols()) != counts[k]) {
        throw Error(ErrorKind::ShapeMismatch, "window record shape differs from layout");
      }
      for (Eigen::Index t = 0; t < r.rows(); ++t)
        for (Eigen::Index c = 0; c < r.cols(); ++c) w.put(r(t, c));
    }
  }
  const std::uint64_t check = digest(w.buffer().data(), w.buffer().size());
  w.put(check);

  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IOError, "cannot write " + tmp.string());
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error(ErrorKind::IOError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

WindowStore load_window_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "window store not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  if (r.size() < sizeof kMagic + 8) throw Error(ErrorKind::FormatError, path.string() + " is not a window store");
  if (digest(r.data().data(), r.size() - 8) != [&] {
        std::uint64_t v;
        std::memcpy(&v, r.data().data() + r.size() - 8, 8);
        return v;
      }()) {
    throw Error(ErrorKind::FormatError, path.string() + ": checksum mismatch");
  }
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) throw Error(ErrorKind::FormatError, path.string() + " is not a window store");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion) {
    throw Error(ErrorKind::FormatError, "unsupported window store version " + std::to_string(version));
  }
  WindowStore store;
  const KvDocument meta = KvDocument::parse(r.get_string("metadata"), path.string());
  store.preset = DatasetPreset::from_document(meta);
  store.geometry.length = static_cast<std::size_t>(meta.get_int("window_length", 0));
  store.geometry.step = static_cast<std::size_t>(meta.get_int("window_step", 0));
  store.stats.min = parse_double_list(meta.require("stats_min"));
  store.stats.max = parse_double_list(meta.require("stats_max"));
  const auto K = r.get<std::uint32_t>("sensor count");
  std::vector<std::size_t> counts(K);
  for (auto& c : counts) c = r.get<std::uint32_t>("channel count");
  if (counts != store.preset.layout.channel_counts()) {
    throw Error(ErrorKind::FormatError, "window store channel counts disagree with its layout");
  }
  const auto l = r.get<std::uint32_t>("window length");
  if (l != store.geometry.length) throw Error(ErrorKind::FormatError, "window store length disagrees with metadata");
  const auto n = r.get<std::uint64_t>("window count");
  store.windows.resize(n);
  for (auto& win : store.windows) {
    win.user_id = r.get_string("user id");
    win.index = r.get<std::uint32_t>("window index");
    const auto label = r.get<std::int32_t>("label");
    if (label >= 0) win.label = label;
    for (std::size_t k = 0; k < K; ++k) {
      Eigen::MatrixXd m(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(counts[k]));
      for (Eigen::Index t = 0; t < m.rows(); ++t)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(t, c) = r.get<double>("record");
      win.records.push_back(std::move(m));
    }
  }
  if (r.position() != r.size() - 8) throw Error(ErrorKind::FormatError, "trailing bytes in window store");
  return store;
}

WindowStore build_window_store(const std::vector<FrameSequence>& sequences, const DatasetPreset& preset,
                               const WindowGeometry& geometry) {
  if (sequences.empty()) throw Error(ErrorKind::EmptyInput, "no frame sequences");
  WindowStore store;
  store.preset = preset;
  store.geometry = geometry;
  std::vector<FrameSequence> cleaned;
  cleaned.reserve(sequences.size());
  for (const auto& s : sequences) cleaned.push_back(clean_frames(s, preset.layout));
  store.stats = compute_channel_stats(cleaned);
  for (const auto& s : cleaned) {
    auto w = segment_windows(s, geometry, preset.layout);
    for (auto& x : w) store.windows.push_back(std::move(x));
  }
  assign_window_indices(store.windows);
  return store;
}

StoreSummary summarize(const WindowStore& store) {
  StoreSummary s;
  s.class_histogram.assign(store.preset.class_count(), 0);
  for (const auto& u : store.preset.users()) s.windows_per_user.emplace_back(u, 0);
  for (const auto& w : store.windows) {
    auto it = std::find_if(s.windows_per_user.begin(), s.windows_per_user.end(),
                           [&](const auto& e) { return e.first == w.user_id; });
    if (it == s.windows_per_user.end()) it = s.windows_per_user.insert(s.windows_per_user.end(), {w.user_id, 0});
    ++it->second;
    if (w.label && static_cast<std::size_t>(*w.label) < s.class_histogram.size()) ++s.class_histogram[*w.label];
  }
  return s;
}

}  // namespace salience
