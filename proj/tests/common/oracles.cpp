#include "common/oracles.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "salience/data_pipeline.hpp"
#include "salience/engine.hpp"
#include "salience/metrics.hpp"
#include "salience/model.hpp"
#include "salience/rng.hpp"

namespace salience::testing {

void SuiteResult::fail(const std::string& what) {
  if (failures++ == 0) first_failure = what;
}

double interpolation_oracle(const double* values, const bool* valid, std::size_t n, std::size_t i) {
  if (valid[i]) return values[i];
  std::size_t left = n;
  std::size_t right = n;
  for (std::size_t j = i; j-- > 0;) {
    if (valid[j]) {
      left = j;
      break;
    }
  }
  for (std::size_t j = i + 1; j < n; ++j) {
    if (valid[j]) {
      right = j;
      break;
    }
  }
  if (left == n) return values[right];
  if (right == n) return values[left];
  const double a = values[left];
  const double b = values[right];
  const double t = static_cast<double>(i - left) / static_cast<double>(right - left);
  return a + (b - a) * t;
}

int label_oracle(const int* labels, std::size_t n, bool& rejected) {
  rejected = false;
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += labels[j] == labels[i];
    if (count > best) best = count;
  }
  auto count_of = [&](int label) {
    std::size_t count = 0;
    for (std::size_t j = 0; j < n; ++j) count += labels[j] == label;
    return count;
  };
  const int center = labels[n / 2];
  if (count_of(center) == best) {
    rejected = center == kNullLabel;
    return center;
  }
  int chosen = kNullLabel;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kNullLabel && count_of(labels[i]) == best && (chosen == kNullLabel || labels[i] < chosen)) {
      chosen = labels[i];
    }
  }
  rejected = chosen == kNullLabel;
  return chosen;
}

namespace {

std::string tag(std::size_t instance, const std::string& what) {
  return "instance " + std::to_string(instance) + ": " + what;
}

SensorLayout random_layout(Rng& rng, std::size_t channels) {
  SensorLayout layout;
  layout.name = "oracle";
  layout.sampling_rate_hz = 10.0;
  layout.label_column = 1000;
  std::size_t c = 0;
  while (c < channels) {
    SensorSpec s;
    s.name = "s" + std::to_string(layout.sensors.size());
    const std::size_t width = 1 + rng.index(channels - c);
    for (std::size_t j = 0; j < width; ++j) s.source_columns.push_back(c++);
    layout.sensors.push_back(s);
  }
  return layout;
}

void check_segmentation(std::size_t id, Rng& rng, SuiteResult& result) {
  const std::size_t T = 1 + rng.index(400);
  const std::size_t channels = 1 + rng.index(6);
  WindowGeometry g;
  g.length = 1 + rng.index(60);
  g.step = 1 + rng.index(60);
  const SensorLayout layout = random_layout(rng, channels);

  FrameSequence seq;
  seq.user_id = "u";
  seq.sampling_rate_hz = layout.sampling_rate_hz;
  seq.frames = Eigen::MatrixXd(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(channels));
  for (Eigen::Index t = 0; t < seq.frames.rows(); ++t)
    for (Eigen::Index c = 0; c < seq.frames.cols(); ++c) seq.frames(t, c) = rng.normal(0.0, 3.0);
  // Piecewise-constant labels with occasional null runs.
  int current = 0;
  for (std::size_t t = 0; t < T; ++t) {
    if (rng.uniform() < 0.15) current = static_cast<int>(rng.index(4)) - 1;
    seq.labels.push_back(current);
  }

  const auto windows = segment_windows(seq, g, layout);
  std::size_t next = 0;
  std::uint32_t index = 0;
  for (std::size_t start = 0; start < T; ++start) {
    if (start % g.step != 0 || start + g.length > T) continue;
    bool rejected = false;
    const int label = label_oracle(seq.labels.data() + start, g.length, rejected);
    if (rejected) continue;
    if (next >= windows.size()) {
      result.fail(tag(id, "missing window at offset " + std::to_string(start)));
      return;
    }
    const LabeledWindow& w = windows[next++];
    if (!w.label || *w.label != label) result.fail(tag(id, "label differs at offset " + std::to_string(start)));
    if (w.index != index++) result.fail(tag(id, "window index out of sequence"));
    if (w.records.size() != layout.sensor_count()) {
      result.fail(tag(id, "sensor count"));
      return;
    }
    for (std::size_t k = 0; k < layout.sensor_count(); ++k) {
      const auto& r = w.records[k];
      const auto& cols = layout.sensors[k].source_columns;
      if (static_cast<std::size_t>(r.rows()) != g.length || static_cast<std::size_t>(r.cols()) != cols.size()) {
        result.fail(tag(id, "record shape"));
        return;
      }
      for (std::size_t t = 0; t < g.length; ++t)
        for (std::size_t j = 0; j < cols.size(); ++j) {
          if (r(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j)) !=
              seq.frames(static_cast<Eigen::Index>(start + t), static_cast<Eigen::Index>(cols[j]))) {
            result.fail(tag(id, "record values differ at offset " + std::to_string(start)));
            return;
          }
        }
    }
  }
  if (next != windows.size()) result.fail(tag(id, "extra windows"));

  // Offsets alone, with rejection out of the picture.
  const auto offsets = g.offsets(T);
  std::vector<std::size_t> brute;
  for (std::size_t s = 0; s + g.length <= T; ++s)
    if (s % g.step == 0) brute.push_back(s);
  if (offsets != brute) result.fail(tag(id, "offset enumeration differs"));
}

void check_normalization(std::size_t id, Rng& rng, SuiteResult& result) {
  const std::size_t T = 1 + rng.index(300);
  const std::size_t channels = 1 + rng.index(6);
  FrameSequence seq;
  seq.frames = Eigen::MatrixXd(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(channels));
  seq.labels.assign(T, 0);
  for (Eigen::Index c = 0; c < seq.frames.cols(); ++c) {
    const bool constant = rng.uniform() < 0.1;
    const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
    const double offset = rng.normal(0.0, 100.0);
    for (Eigen::Index t = 0; t < seq.frames.rows(); ++t) {
      seq.frames(t, c) = constant ? offset : offset + scale * rng.normal();
    }
  }
  const FrameSequence one[] = {seq};
  const ChannelStats stats = compute_channel_stats(one);
  const FrameSequence out = normalize_channels(seq, stats);
  for (Eigen::Index c = 0; c < out.frames.cols(); ++c) {
    const auto cc = static_cast<std::size_t>(c);
    for (Eigen::Index t = 0; t < out.frames.rows(); ++t) {
      const double y = out.frames(t, c);
      if (!(y >= -1.0 && y <= 1.0)) {
        result.fail(tag(id, "normalized value outside [-1, 1]"));
        return;
      }
      if (stats.degenerate(cc)) {
        if (y != 0.0) result.fail(tag(id, "degenerate channel not mapped to 0"));
        continue;
      }
      const double back = denormalize_value(y, stats.min[cc], stats.max[cc]);
      const double x = seq.frames(t, c);
      if (std::abs(back - x) > 1e-9) {
        result.fail(tag(id, "round trip error " + std::to_string(std::abs(back - x))));
        return;
      }
    }
  }
}

void check_interpolation(std::size_t id, Rng& rng, SuiteResult& result) {
  const std::size_t n = 2 + rng.index(200);
  std::vector<double> values(n);
  std::unique_ptr<bool[]> valid(new bool[n]);
  const double p_missing = rng.uniform(0.0, 0.8);
  std::size_t valid_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    values[i] = rng.normal(0.0, 5.0);
    valid[i] = rng.uniform() >= p_missing;
    valid_count += valid[i];
  }
  if (valid_count == 0) {
    valid[rng.index(n)] = true;
  }
  std::vector<double> expected(n);
  for (std::size_t i = 0; i < n; ++i) expected[i] = interpolation_oracle(values.data(), valid.get(), n, i);
  interpolate_channel(values, std::span<const bool>(valid.get(), n));
  for (std::size_t i = 0; i < n; ++i) {
    if (values[i] != expected[i]) {
      result.fail(tag(id, "interpolated value differs at " + std::to_string(i)));
      return;
    }
  }
}

std::vector<int> random_classes(Rng& rng, std::size_t n, std::size_t classes, double skew) {
  std::vector<int> out(n);
  for (auto& v : out) v = rng.uniform() < skew ? 0 : static_cast<int>(rng.index(classes));
  return out;
}

void check_metrics(std::size_t id, Rng& rng, SuiteResult& result) {
  const std::size_t C = 1 + rng.index(10);
  const std::size_t n = 1 + rng.index(200);
  const auto labels = random_classes(rng, n, C, rng.uniform(0.0, 0.5));
  auto predictions = labels;
  const double noise = rng.uniform();
  for (auto& p : predictions)
    if (rng.uniform() < noise) p = static_cast<int>(rng.index(C));

  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) hits += predictions[i] == labels[i];
  const double acc = static_cast<double>(hits) / static_cast<double>(n);

  double f1_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_true = labels[i] == static_cast<int>(c);
      const bool is_pred = predictions[i] == static_cast<int>(c);
      tp += is_true && is_pred;
      fp += !is_true && is_pred;
      fn += is_true && !is_pred;
    }
    const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    if (precision + recall > 0.0) f1_sum += 2.0 * precision * recall / (precision + recall);
  }
  const double f1 = f1_sum / static_cast<double>(C);

  if (accuracy(predictions, labels) != acc) result.fail(tag(id, "accuracy differs"));
  if (macro_f1(predictions, labels, C) != f1) result.fail(tag(id, "macro F1 differs"));
  const ConfusionMatrix m = confusion_matrix(predictions, labels, C);
  for (std::size_t t = 0; t < C; ++t)
    for (std::size_t p = 0; p < C; ++p) {
      std::uint64_t count = 0;
      for (std::size_t i = 0; i < n; ++i)
        count += labels[i] == static_cast<int>(t) && predictions[i] == static_cast<int>(p);
      if (m.at(t, p) != count) {
        result.fail(tag(id, "confusion entry differs"));
        return;
      }
    }
  if (m.total() != n) result.fail(tag(id, "confusion total differs"));
  if (accuracy(m) != acc) result.fail(tag(id, "trace/total differs from accuracy"));
}

std::size_t sliding_count(std::size_t length, std::size_t width, std::size_t stride) {
  std::size_t count = 0;
  for (std::size_t start = 0; start + width <= length; start += stride) ++count;
  return count;
}

bool on_simplex(const Eigen::VectorXd& p, double tol) {
  if (p.size() == 0) return false;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (!(p[i] >= -tol)) return false;
  return std::abs(p.sum() - 1.0) <= tol;
}

void check_architecture(std::size_t id, Rng& rng, SuiteResult& result) {
  NetworkConfig c;
  const std::size_t K = 1 + rng.index(5);
  for (std::size_t k = 0; k < K; ++k) c.channel_counts.push_back(1 + rng.index(6));
  c.window_length = 32 + rng.index(225);
  c.local_lstm_state = 3 + rng.index(4);
  c.global_lstm_state = 3 + rng.index(4);
  c.classifier_lstm_state = 3 + rng.index(4);
  c.attention_dim = 4 + rng.index(5);
  c.n_classes = 2 + rng.index(6);
  const Variant variant = kAllVariants[rng.index(kAllVariants.size())];

  std::size_t expected = c.window_length;
  for (int layer = 0; layer < 3; ++layer) expected = sliding_count(expected, c.conv_width, c.conv_stride);
  if (c.output_length() != expected) {
    result.fail(tag(id, "T' formula gives " + std::to_string(c.output_length()) + ", sliding count " +
                            std::to_string(expected)));
    return;
  }

  const NetworkState state = init_state(c, variant, rng.next_u64());
  std::vector<LabeledWindow> batch(3);
  for (auto& w : batch) {
    for (std::size_t ck : c.channel_counts) {
      Eigen::MatrixXd r(static_cast<Eigen::Index>(c.window_length), static_cast<Eigen::Index>(ck));
      for (Eigen::Index t = 0; t < r.rows(); ++t)
        for (Eigen::Index j = 0; j < r.cols(); ++j) r(t, j) = rng.uniform(-1.0, 1.0);
      w.records.push_back(std::move(r));
    }
  }
  const engine::Engine eng(c);
  const auto cache = eng.forward(state, engine::make_batch(batch, c));
  const auto traces = engine::Engine::traces(cache);
  const VariantTraits tr = traits(variant);
  constexpr double tol = 1e-6;
  for (const auto& trace : traces) {
    for (const auto& f : trace.features) {
      if (static_cast<std::size_t>(f.rows()) != expected || static_cast<std::size_t>(f.cols()) != c.feature_width()) {
        result.fail(tag(id, "feature shape"));
        return;
      }
    }
    if (static_cast<std::size_t>(trace.attention.size()) != K || !on_simplex(trace.attention, tol)) {
      result.fail(tag(id, "alpha off the simplex"));
    }
    if (static_cast<std::size_t>(trace.class_probs.size()) != c.n_classes || !on_simplex(trace.class_probs, tol)) {
      result.fail(tag(id, "class probabilities off the simplex"));
    }
    if (tr.global && !on_simplex(trace.global_probs, tol)) result.fail(tag(id, "global output off the simplex"));
    if (tr.local) {
      for (std::size_t k = 0; k < K; ++k) {
        if (!on_simplex(trace.local_probs.row(static_cast<Eigen::Index>(k)).transpose(), tol)) {
          result.fail(tag(id, "local output off the simplex"));
        }
      }
    }
  }
}

}  // namespace

SuiteResult preprocessing_suite(std::size_t instances, std::uint64_t seed) {
  SuiteResult result;
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    check_segmentation(i, rng, result);
    check_normalization(i, rng, result);
    check_interpolation(i, rng, result);
    ++result.instances;
  }
  return result;
}

SuiteResult metric_suite(std::size_t instances, std::uint64_t seed) {
  SuiteResult result;
  Rng rng(seed);
  for (std::size_t i = 0; i < instances; ++i) {
    check_metrics(i, rng, result);
    ++result.instances;
  }
  return result;
}

SuiteResult simplex_shape_suite(std::size_t configs, std::uint64_t seed) {
  SuiteResult result;
  Rng rng(seed);
  for (std::size_t i = 0; i < configs; ++i) {
    try {
      check_architecture(i, rng, result);
    } catch (const std::exception& e) {
      result.fail(tag(i, std::string("forward threw: ") + e.what()));
    }
    ++result.instances;
  }
  return result;
}

}  // namespace salience::testing
