#include "salience/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>

#include "salience/error.hpp"
#include "salience/hash.hpp"
#include "salience/rng.hpp"

namespace salience {

std::size_t SensorLayout::total_channels() const {
  std::size_t total = 0;
  for (const auto& s : sensors) total += s.channel_count();
  return total;
}

std::size_t SensorLayout::channel_offset(std::size_t k) const {
  std::size_t offset = 0;
  for (std::size_t i = 0; i < k; ++i) offset += sensors[i].channel_count();
  return offset;
}

std::vector<std::size_t> SensorLayout::channel_counts() const {
  std::vector<std::size_t> counts;
  for (const auto& s : sensors) counts.push_back(s.channel_count());
  return counts;
}

void SensorLayout::validate() const {
  if (sensors.empty()) throw Error(ErrorKind::InvalidConfig, "layout '" + name + "' has no sensors");
  if (!(sampling_rate_hz > 0.0)) throw Error(ErrorKind::InvalidConfig, "layout '" + name + "' needs a positive sampling rate");
  std::set<std::size_t> used;
  for (const auto& s : sensors) {
    if (s.source_columns.empty()) throw Error(ErrorKind::InvalidConfig, "sensor '" + s.name + "' binds no columns");
    for (auto c : s.source_columns) {
      if (!used.insert(c).second) {
        throw Error(ErrorKind::InvalidConfig, "column " + std::to_string(c) + " bound twice (sensor '" + s.name + "')");
      }
    }
  }
  if (used.count(label_column) != 0) {
    throw Error(ErrorKind::InvalidConfig, "label column " + std::to_string(label_column) + " also bound to a sensor");
  }
}

void interpolate_channel(std::span<double> values, std::span<const bool> valid) {
  const std::size_t n = values.size();
  std::size_t prev = n;  // index of last valid entry, n = none yet
  for (std::size_t i = 0; i < n; ++i) {
    if (!valid[i]) continue;
    if (prev == n) {
      for (std::size_t j = 0; j < i; ++j) values[j] = values[i];
    } else if (i > prev + 1) {
      const double a = values[prev];
      const double b = values[i];
      const double span = static_cast<double>(i - prev);
      for (std::size_t j = prev + 1; j < i; ++j) {
        const double t = static_cast<double>(j - prev) / span;
        values[j] = a + (b - a) * t;
      }
    }
    prev = i;
  }
  if (prev != n) {
    for (std::size_t j = prev + 1; j < n; ++j) values[j] = values[prev];
  }
}

FrameSequence clean_frames(const FrameSequence& raw, const SensorLayout& layout) {
  const auto channels = static_cast<Eigen::Index>(layout.total_channels());
  if (raw.frames.cols() != channels) {
    throw Error(ErrorKind::ShapeMismatch, "sequence of user '" + raw.user_id + "' has " +
                                              std::to_string(raw.frames.cols()) + " channels, layout binds " +
                                              std::to_string(channels));
  }
  if (raw.labels.size() != raw.frame_count()) {
    throw Error(ErrorKind::ShapeMismatch, "label count differs from frame count for user '" + raw.user_id + "'");
  }
  FrameSequence out = raw;
  const auto T = static_cast<std::size_t>(raw.frames.rows());
  std::vector<double> column(T);
  std::unique_ptr<bool[]> valid(new bool[T]);
  for (Eigen::Index c = 0; c < channels; ++c) {
    std::size_t valid_count = 0;
    for (std::size_t t = 0; t < T; ++t) {
      const double x = raw.frames(static_cast<Eigen::Index>(t), c);
      bool ok = std::isfinite(x);
      if (ok) {
        for (double sentinel : layout.invalid_values) {
          if (x == sentinel) ok = false;
        }
      }
      column[t] = ok ? x : 0.0;
      valid[t] = ok;
      valid_count += ok;
    }
    if (valid_count < 2) {
      throw Error(ErrorKind::ChannelAllInvalid,
                  "channel " + std::to_string(c) + " of user '" + raw.user_id + "' has fewer than 2 valid entries");
    }
    interpolate_channel(column, std::span<const bool>(valid.get(), T));
    for (std::size_t t = 0; t < T; ++t) out.frames(static_cast<Eigen::Index>(t), c) = column[t];
  }
  return out;
}

namespace {

void widen(ChannelStats& stats, std::size_t channel, double x) {
  stats.min[channel] = std::min(stats.min[channel], x);
  stats.max[channel] = std::max(stats.max[channel], x);
}

ChannelStats empty_stats(std::size_t channels) {
  ChannelStats s;
  s.min.assign(channels, HUGE_VAL);
  s.max.assign(channels, -HUGE_VAL);
  return s;
}

std::size_t window_channels(const LabeledWindow& w) {
  std::size_t c = 0;
  for (const auto& r : w.records) c += static_cast<std::size_t>(r.cols());
  return c;
}

}  // namespace

ChannelStats compute_channel_stats(std::span<const FrameSequence> sequences) {
  if (sequences.empty()) throw Error(ErrorKind::EmptyInput, "no sequences to compute channel statistics over");
  const auto C = static_cast<std::size_t>(sequences.front().frames.cols());
  ChannelStats stats = empty_stats(C);
  bool any = false;
  for (const auto& seq : sequences) {
    if (static_cast<std::size_t>(seq.frames.cols()) != C) {
      throw Error(ErrorKind::ShapeMismatch, "sequences disagree on channel count");
    }
    for (Eigen::Index t = 0; t < seq.frames.rows(); ++t) {
      any = true;
      for (std::size_t c = 0; c < C; ++c) widen(stats, c, seq.frames(t, static_cast<Eigen::Index>(c)));
    }
  }
  if (!any) throw Error(ErrorKind::EmptyInput, "sequences contain no frames");
  return stats;
}

ChannelStats compute_channel_stats(std::span<const LabeledWindow> windows) {
  if (windows.empty()) throw Error(ErrorKind::EmptyInput, "no windows to compute channel statistics over");
  const std::size_t C = window_channels(windows.front());
  ChannelStats stats = empty_stats(C);
  for (const auto& w : windows) {
    if (window_channels(w) != C) throw Error(ErrorKind::ShapeMismatch, "windows disagree on channel count");
    std::size_t offset = 0;
    for (const auto& r : w.records) {
      for (Eigen::Index c = 0; c < r.cols(); ++c) {
        widen(stats, offset + static_cast<std::size_t>(c), r.col(c).minCoeff());
        widen(stats, offset + static_cast<std::size_t>(c), r.col(c).maxCoeff());
      }
      offset += static_cast<std::size_t>(r.cols());
    }
  }
  return stats;
}

ChannelStats merge_stats(const ChannelStats& a, const ChannelStats& b) {
  if (a.channel_count() != b.channel_count()) throw Error(ErrorKind::ShapeMismatch, "cannot merge channel stats");
  ChannelStats out = a;
  for (std::size_t c = 0; c < a.channel_count(); ++c) {
    out.min[c] = std::min(a.min[c], b.min[c]);
    out.max[c] = std::max(a.max[c], b.max[c]);
  }
  return out;
}

double normalize_value(double x, double lo, double hi) {
  if (lo == hi) return 0.0;
  const double y = 2.0 * (x - lo) / (hi - lo) - 1.0;
  return std::clamp(y, -1.0, 1.0);
}

double denormalize_value(double x, double lo, double hi) { return (x + 1.0) * 0.5 * (hi - lo) + lo; }

FrameSequence normalize_channels(const FrameSequence& seq, const ChannelStats& stats) {
  if (stats.channel_count() != static_cast<std::size_t>(seq.frames.cols())) {
    throw Error(ErrorKind::MissingStats, "statistics cover " + std::to_string(stats.channel_count()) +
                                             " channels, sequence has " + std::to_string(seq.frames.cols()));
  }
  FrameSequence out = seq;
  for (Eigen::Index c = 0; c < seq.frames.cols(); ++c) {
    const double lo = stats.min[static_cast<std::size_t>(c)];
    const double hi = stats.max[static_cast<std::size_t>(c)];
    for (Eigen::Index t = 0; t < seq.frames.rows(); ++t) out.frames(t, c) = normalize_value(seq.frames(t, c), lo, hi);
  }
  return out;
}

void normalize_windows(std::span<LabeledWindow> windows, const ChannelStats& stats) {
  for (auto& w : windows) {
    if (window_channels(w) != stats.channel_count()) {
      throw Error(ErrorKind::MissingStats, "statistics do not cover every window channel");
    }
    std::size_t offset = 0;
    for (auto& r : w.records) {
      for (Eigen::Index c = 0; c < r.cols(); ++c) {
        const double lo = stats.min[offset + static_cast<std::size_t>(c)];
        const double hi = stats.max[offset + static_cast<std::size_t>(c)];
        for (Eigen::Index t = 0; t < r.rows(); ++t) r(t, c) = normalize_value(r(t, c), lo, hi);
      }
      offset += static_cast<std::size_t>(r.cols());
    }
  }
}

WindowGeometry WindowGeometry::from_seconds(double window_seconds, double overlap_seconds, double sampling_rate_hz) {
  if (!(window_seconds > 0.0) || overlap_seconds < 0.0 || !(sampling_rate_hz > 0.0)) {
    throw Error(ErrorKind::InvalidGeometry, "window and sampling rate must be positive, overlap non-negative");
  }
  const auto length = std::llround(window_seconds * sampling_rate_hz);
  const auto overlap = std::llround(overlap_seconds * sampling_rate_hz);
  if (length < 1) throw Error(ErrorKind::InvalidGeometry, "window shorter than one frame");
  if (length - overlap <= 0) {
    throw Error(ErrorKind::InvalidGeometry, "window step is not positive (length " + std::to_string(length) +
                                                ", overlap " + std::to_string(overlap) + " frames)");
  }
  return {static_cast<std::size_t>(length), static_cast<std::size_t>(length - overlap)};
}

std::vector<std::size_t> WindowGeometry::offsets(std::size_t frame_count) const {
  if (length < 1 || step < 1) throw Error(ErrorKind::InvalidGeometry, "window length and step must be positive");
  std::vector<std::size_t> out;
  for (std::size_t start = 0; start + length <= frame_count; start += step) out.push_back(start);
  return out;
}

std::optional<int> assign_window_label(std::span<const int> labels) {
  if (labels.empty()) return std::nullopt;
  std::map<int, std::size_t> counts;
  for (int label : labels) ++counts[label];
  std::size_t best = 0;
  for (const auto& [label, n] : counts) best = std::max(best, n);
  std::vector<int> tied;
  for (const auto& [label, n] : counts) {
    if (n == best) tied.push_back(label);
  }
  const int center = labels[labels.size() / 2];
  if (std::find(tied.begin(), tied.end(), center) != tied.end()) {
    if (center == kNullLabel) return std::nullopt;
    return center;
  }
  // std::map keeps ascending order; kNullLabel (-1) sorts first.
  for (int label : tied) {
    if (label != kNullLabel) return label;
  }
  return std::nullopt;
}

std::vector<LabeledWindow> segment_windows(const FrameSequence& seq, const WindowGeometry& geometry,
                                           const SensorLayout& layout) {
  if (static_cast<std::size_t>(seq.frames.cols()) != layout.total_channels()) {
    throw Error(ErrorKind::ShapeMismatch, "sequence channels do not match the layout");
  }
  std::vector<LabeledWindow> windows;
  const auto starts = geometry.offsets(seq.frame_count());
  const auto L = static_cast<Eigen::Index>(geometry.length);
  std::uint32_t index = 0;
  for (std::size_t start : starts) {
    auto label = assign_window_label(std::span<const int>(seq.labels).subspan(start, geometry.length));
    if (!label) continue;
    LabeledWindow w;
    w.label = label;
    w.user_id = seq.user_id;
    w.index = index++;
    for (std::size_t k = 0; k < layout.sensor_count(); ++k) {
      const auto offset = static_cast<Eigen::Index>(layout.channel_offset(k));
      const auto width = static_cast<Eigen::Index>(layout.sensors[k].channel_count());
      w.records.emplace_back(seq.frames.block(static_cast<Eigen::Index>(start), offset, L, width));
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<LabeledWindow> segment_windows(const FrameSequence& seq, double window_seconds, double overlap_seconds,
                                           const SensorLayout& layout) {
  return segment_windows(seq, WindowGeometry::from_seconds(window_seconds, overlap_seconds, seq.sampling_rate_hz),
                         layout);
}

void assign_window_indices(std::span<LabeledWindow> windows) {
  std::map<std::string, std::uint32_t> next;
  for (auto& w : windows) w.index = next[w.user_id]++;
}

std::vector<std::string> user_ids(std::span<const LabeledWindow> windows) {
  std::vector<std::string> ids;
  for (const auto& w : windows) {
    if (std::find(ids.begin(), ids.end(), w.user_id) == ids.end()) ids.push_back(w.user_id);
  }
  return ids;
}

SplitSpec make_louo_split(std::span<const LabeledWindow> windows, const std::string& new_user, std::uint64_t seed) {
  const auto users = user_ids(windows);
  if (users.size() < 2) throw Error(ErrorKind::SingleUserDataset, "leave-one-user-out needs at least two users");
  if (std::find(users.begin(), users.end(), new_user) == users.end()) {
    throw Error(ErrorKind::UnknownUser, "user '" + new_user + "' not present in the dataset");
  }
  SplitSpec split;
  split.new_user = new_user;
  split.seed = seed;
  std::vector<const LabeledWindow*> own;
  for (const auto& w : windows) {
    if (w.user_id == new_user) {
      own.push_back(&w);
    } else {
      split.train_set.push_back(w);
    }
  }
  Rng rng(seed ^ fnv1a(new_user));
  rng.shuffle(own);
  const std::size_t n_adapt = own.size() / 2;
  for (std::size_t i = 0; i < own.size(); ++i) {
    if (i < n_adapt) {
      LabeledWindow w = *own[i];
      w.label.reset();
      split.adapt_set.push_back(std::move(w));
    } else {
      split.test_set.push_back(*own[i]);
    }
  }
  return split;
}

ChannelStats normalize_split(SplitSpec& split) {
  ChannelStats stats = compute_channel_stats(split.train_set);
  if (!split.adapt_set.empty()) stats = merge_stats(stats, compute_channel_stats(split.adapt_set));
  normalize_windows(split.train_set, stats);
  normalize_windows(split.adapt_set, stats);
  normalize_windows(split.test_set, stats);
  return stats;
}

std::uint64_t SplitSpec::fingerprint() const {
  Fnv1a h;
  h.update(new_user);
  h.update_value(seed);
  for (const auto* part : {&train_set, &adapt_set, &test_set}) {
    h.update_value(part->size());
    for (const auto& w : *part) {
      h.update(w.user_id);
      h.update_value(w.index);
    }
  }
  return h.digest();
}

}  // namespace salience
