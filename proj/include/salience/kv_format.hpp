#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

namespace salience {

/// Flat `key = value` text document shared by layout presets, synthetic
/// configs, network configs and run configs.
///
/// Lines starting with `#` are comments; blank lines are ignored. Keys may
/// repeat (e.g. one `sensor` line per sensor) and order is preserved, so
/// parse(serialize(doc)) == doc.
class KvDocument {
 public:
  using Entry = std::pair<std::string, std::string>;

  static KvDocument parse(std::string_view text, std::string_view source_name = "<string>");
  static KvDocument load(const std::filesystem::path& path);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  const std::vector<Entry>& entries() const { return entries_; }
  bool contains(std::string_view key) const;

  std::optional<std::string> get(std::string_view key) const;
  std::vector<std::string> get_all(std::string_view key) const;

  std::string get_string(std::string_view key, std::string_view fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  std::string require(std::string_view key) const;

  /// Replace the first entry with this key, or append.
  void set(std::string_view key, std::string value);
  void add(std::string_view key, std::string value);
  void erase(std::string_view key);

  /// Overlay every key of `other` on this document (later keys win, repeated
  /// keys in `other` replace all of ours).
  void merge(const KvDocument& other);

  bool operator==(const KvDocument& other) const { return entries_ == other.entries_; }

 private:
  std::vector<Entry> entries_;
  std::string source_ = "<string>";
};

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char delimiter);
std::vector<std::int64_t> parse_int_list(std::string_view s);
std::vector<double> parse_double_list(std::string_view s);
double parse_double(std::string_view s);
std::int64_t parse_int(std::string_view s);

/// Shortest text that parses back to exactly the same double.
std::string format_double(double value);

template <typename T>
std::string join(const std::vector<T>& values, std::string_view sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(values[i]);
    } else if constexpr (std::is_arithmetic_v<T>) {
      out += std::to_string(values[i]);
    } else {
      out += values[i];
    }
  }
  return out;
}

}  // namespace salience
