#include "salience/kv_format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "salience/error.hpp"

namespace salience {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(std::string_view s, char delimiter) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delimiter, start);
    parts.push_back(trim(s.substr(start, pos == std::string_view::npos ? s.size() - start : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

double parse_double(std::string_view s) {
  const std::string t = trim(s);
  double value = 0.0;
  const auto* begin = t.data();
  const auto* end = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || t.empty()) {
    // from_chars rejects "nan"/"inf" spellings used by some datasets.
    std::string lower = t;
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "nan" || lower == "-nan") return std::nan("");
    if (lower == "inf" || lower == "+inf") return HUGE_VAL;
    if (lower == "-inf") return -HUGE_VAL;
    throw Error(ErrorKind::FormatError, "not a number: '" + t + "'");
  }
  return value;
}

std::int64_t parse_int(std::string_view s) {
  const std::string t = trim(s);
  std::int64_t value = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw Error(ErrorKind::FormatError, "not an integer: '" + t + "'");
  }
  return value;
}

std::vector<std::int64_t> parse_int_list(std::string_view s) {
  std::vector<std::int64_t> out;
  if (trim(s).empty()) return out;
  for (const auto& part : split(s, ',')) out.push_back(parse_int(part));
  return out;
}

std::vector<double> parse_double_list(std::string_view s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (const auto& part : split(s, ',')) out.push_back(parse_double(part));
  return out;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

KvDocument KvDocument::parse(std::string_view text, std::string_view source_name) {
  KvDocument doc;
  doc.source_ = std::string(source_name);
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto end = text.find('\n', start);
    const auto raw = text.substr(start, end == std::string_view::npos ? text.size() - start : end - start);
    ++line_no;
    const std::string line = trim(raw);
    if (!line.empty() && line[0] != '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw Error(ErrorKind::FormatError,
                    std::string(source_name) + ":" + std::to_string(line_no) + ": expected 'key = value'");
      }
      std::string key = trim(std::string_view(line).substr(0, eq));
      if (key.empty()) {
        throw Error(ErrorKind::FormatError, std::string(source_name) + ":" + std::to_string(line_no) + ": empty key");
      }
      doc.entries_.emplace_back(std::move(key), trim(std::string_view(line).substr(eq + 1)));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return doc;
}

KvDocument KvDocument::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string KvDocument::serialize() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

void KvDocument::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
  out << serialize();
}

bool KvDocument::contains(std::string_view key) const { return get(key).has_value(); }

std::optional<std::string> KvDocument::get(std::string_view key) const {
  // Last assignment wins for scalar lookups.
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->first == key) return it->second;
  }
  return std::nullopt;
}

std::vector<std::string> KvDocument::get_all(std::string_view key) const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) {
    if (k == key) out.push_back(v);
  }
  return out;
}

std::string KvDocument::get_string(std::string_view key, std::string_view fallback) const {
  auto v = get(key);
  return v ? *v : std::string(fallback);
}

double KvDocument::get_double(std::string_view key, double fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_double(*v);
  } catch (const Error&) {
    throw Error(ErrorKind::FormatError, source_ + ": key '" + std::string(key) + "' is not a number: " + *v);
  }
}

std::int64_t KvDocument::get_int(std::string_view key, std::int64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  try {
    return parse_int(*v);
  } catch (const Error&) {
    throw Error(ErrorKind::FormatError, source_ + ": key '" + std::string(key) + "' is not an integer: " + *v);
  }
}

bool KvDocument::get_bool(std::string_view key, bool fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw Error(ErrorKind::FormatError, source_ + ": key '" + std::string(key) + "' is not a boolean: " + *v);
}

std::string KvDocument::require(std::string_view key) const {
  auto v = get(key);
  if (!v) throw Error(ErrorKind::InvalidConfig, source_ + ": missing required key '" + std::string(key) + "'");
  return *v;
}

void KvDocument::set(std::string_view key, std::string value) {
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == key; });
  if (it == entries_.end()) {
    entries_.emplace_back(std::string(key), std::move(value));
    return;
  }
  it->second = std::move(value);
  // Drop later duplicates so the value just set is the only one.
  entries_.erase(std::remove_if(std::next(it), entries_.end(), [&](const Entry& e) { return e.first == key; }),
                 entries_.end());
}

void KvDocument::add(std::string_view key, std::string value) { entries_.emplace_back(std::string(key), std::move(value)); }

void KvDocument::erase(std::string_view key) {
  entries_.erase(std::remove_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == key; }),
                 entries_.end());
}

void KvDocument::merge(const KvDocument& other) {
  std::vector<std::string> seen;
  for (const auto& [k, v] : other.entries_) {
    if (std::find(seen.begin(), seen.end(), k) == seen.end()) {
      seen.push_back(k);
      const auto all = other.get_all(k);
      if (all.size() == 1) {
        set(k, all.front());
      } else {
        erase(k);
        for (const auto& value : all) add(k, value);
      }
    }
  }
}

}  // namespace salience
