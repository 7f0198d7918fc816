#include "salience/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <string>

#include "json.hpp"
#include "salience/engine.hpp"
#include "salience/error.hpp"
#include "salience/hash.hpp"

namespace salience {

namespace {

constexpr std::size_t kEvalChunk = 128;

using Json = nlohmann::ordered_json;

template <class F>
void for_each_chunk(const NetworkState& state, const NetworkConfig& config, std::span<const LabeledWindow> windows,
                    const engine::ForwardOptions& options, F&& f) {
  const engine::Engine eng(config);
  for (std::size_t start = 0; start < windows.size(); start += kEvalChunk) {
    const auto chunk = windows.subspan(start, std::min(kEvalChunk, windows.size() - start));
    f(start, eng.forward(state, engine::make_batch(chunk, config), options));
  }
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

std::uint64_t parse_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

Eigen::MatrixXd classifier_logits(const NetworkState& state, const NetworkConfig& config,
                                  std::span<const LabeledWindow> windows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(windows.size()), static_cast<Eigen::Index>(config.n_classes));
  for_each_chunk(state, config, windows, {true, false}, [&](std::size_t start, const engine::ForwardCache& c) {
    out.middleRows(static_cast<Eigen::Index>(start), c.classifier.logits.rows()) = c.classifier.logits;
  });
  return out;
}

std::vector<int> predict(const NetworkState& state, const NetworkConfig& config, std::span<const LabeledWindow> windows) {
  const Eigen::MatrixXd logits = classifier_logits(state, config, windows);
  std::vector<int> out(windows.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index arg = 0;
    logits.row(i).maxCoeff(&arg);
    out[static_cast<std::size_t>(i)] = static_cast<int>(arg);
  }
  return out;
}

bool MetricsReport::complete() const {
  for (const auto& s : seeds)
    for (const auto& u : s.users)
      if (u.failed()) return false;
  return !seeds.empty();
}

std::string MetricsReport::to_json() const {
  Json j;
  j["format"] = "salience-metrics";
  j["version"] = 1;
  j["variant"] = variant;
  j["config_fingerprint"] = hex(config_fingerprint);
  j["mean_accuracy"] = mean_accuracy;
  j["mean_macro_f1"] = mean_macro_f1;
  j["min_accuracy"] = min_accuracy;
  j["max_accuracy"] = max_accuracy;
  Json runs = Json::array();
  for (const auto& s : seeds) {
    Json js;
    js["seed"] = s.seed;
    js["mean_accuracy"] = s.mean_accuracy;
    js["mean_macro_f1"] = s.mean_macro_f1;
    Json users = Json::array();
    for (const auto& u : s.users) {
      Json ju;
      ju["user"] = u.user;
      ju["accuracy"] = u.accuracy;
      ju["macro_f1"] = u.macro_f1;
      ju["test_windows"] = u.test_windows;
      ju["split_fingerprint"] = hex(u.split_fingerprint);
      ju["iterations"] = u.iterations;
      ju["converged"] = u.converged;
      ju["read_adaptation"] = u.read_adaptation;
      ju["classes"] = u.confusion.classes;
      ju["confusion"] = u.confusion.counts;
      if (u.failed()) ju["error"] = u.error;
      users.push_back(std::move(ju));
    }
    js["users"] = std::move(users);
    runs.push_back(std::move(js));
  }
  j["seeds"] = std::move(runs);
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("metrics report: ") + e.what());
  }
  if (j.value("format", "") != "salience-metrics") throw Error(ErrorKind::FormatError, "not a metrics report");
  MetricsReport r;
  try {
    r.variant = j.at("variant").get<std::string>();
    r.config_fingerprint = parse_hex(j.at("config_fingerprint").get<std::string>());
    r.mean_accuracy = j.at("mean_accuracy").get<double>();
    r.mean_macro_f1 = j.at("mean_macro_f1").get<double>();
    r.min_accuracy = j.at("min_accuracy").get<double>();
    r.max_accuracy = j.at("max_accuracy").get<double>();
    for (const auto& js : j.at("seeds")) {
      SeedResult s;
      s.seed = js.at("seed").get<std::uint64_t>();
      s.mean_accuracy = js.at("mean_accuracy").get<double>();
      s.mean_macro_f1 = js.at("mean_macro_f1").get<double>();
      for (const auto& ju : js.at("users")) {
        UserResult u;
        u.user = ju.at("user").get<std::string>();
        u.accuracy = ju.at("accuracy").get<double>();
        u.macro_f1 = ju.at("macro_f1").get<double>();
        u.test_windows = ju.at("test_windows").get<std::size_t>();
        u.split_fingerprint = parse_hex(ju.at("split_fingerprint").get<std::string>());
        u.iterations = ju.at("iterations").get<std::size_t>();
        u.converged = ju.at("converged").get<bool>();
        u.read_adaptation = ju.at("read_adaptation").get<bool>();
        u.confusion = ConfusionMatrix(ju.at("classes").get<std::size_t>());
        u.confusion.counts = ju.at("confusion").get<std::vector<std::uint64_t>>();
        if (ju.contains("error")) u.error = ju.at("error").get<std::string>();
        s.users.push_back(std::move(u));
      }
      r.seeds.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("metrics report: ") + e.what());
  }
  return r;
}

void MetricsReport::write_user_csv(std::ostream& out) const {
  out << "variant,user,accuracy,macro_f1,seeds,status\n";
  std::vector<std::string> users;
  for (const auto& s : seeds)
    for (const auto& u : s.users)
      if (std::find(users.begin(), users.end(), u.user) == users.end()) users.push_back(u.user);
  for (const auto& user : users) {
    double acc = 0.0;
    double f1 = 0.0;
    std::size_t ok = 0;
    std::size_t failed = 0;
    for (const auto& s : seeds)
      for (const auto& u : s.users) {
        if (u.user != user) continue;
        if (u.failed()) {
          ++failed;
          continue;
        }
        acc += u.accuracy;
        f1 += u.macro_f1;
        ++ok;
      }
    const double n = ok ? static_cast<double>(ok) : 1.0;
    out << variant << ',' << user << ',' << (ok ? format_double(acc / n) : "") << ','
        << (ok ? format_double(f1 / n) : "") << ',' << ok << ',' << (failed ? "failed" : "ok") << '\n';
  }
  out << variant << ",overall," << format_double(mean_accuracy) << ',' << format_double(mean_macro_f1) << ','
      << seeds.size() << ',' << (complete() ? "ok" : "partial") << '\n';
}

void MetricsReport::write_seed_csv(std::ostream& out) const {
  out << "variant,seed,user,accuracy,macro_f1,test_windows,iterations,split_fingerprint,status\n";
  for (const auto& s : seeds) {
    for (const auto& u : s.users) {
      out << variant << ',' << s.seed << ',' << u.user << ',' << format_double(u.accuracy) << ','
          << format_double(u.macro_f1) << ',' << u.test_windows << ',' << u.iterations << ','
          << hex(u.split_fingerprint) << ',' << (u.failed() ? "failed" : "ok") << '\n';
    }
    out << variant << ',' << s.seed << ",overall," << format_double(s.mean_accuracy) << ','
        << format_double(s.mean_macro_f1) << ",,,,\n";
  }
}

void MetricsReport::write_confusion_csv(std::ostream& out) const {
  out << "variant,seed,user,true_class,predicted_class,count\n";
  for (const auto& s : seeds)
    for (const auto& u : s.users)
      for (std::size_t t = 0; t < u.confusion.classes; ++t)
        for (std::size_t p = 0; p < u.confusion.classes; ++p)
          out << variant << ',' << s.seed << ',' << u.user << ',' << t << ',' << p << ',' << u.confusion.at(t, p)
              << '\n';
}

std::uint64_t config_fingerprint(const NetworkConfig& network, const TrainConfig& train, Variant variant) {
  TrainConfig unseeded = train;
  unseeded.seed = 0;
  Fnv1a h;
  h.update(network.to_document().serialize());
  h.update(unseeded.to_document().serialize());
  h.update(variant_name(variant));
  return h.digest();
}

UserResult evaluate_fold(const SplitSpec& split, Variant variant, const NetworkConfig& network,
                         const TrainConfig& train_config, TrainResult* training, const TrainHooks& hooks) {
  UserResult result;
  result.user = split.new_user;
  result.split_fingerprint = split.fingerprint();
  result.test_windows = split.test_set.size();
  const bool adapts = traits(variant).adapts();
  TrainResult trained = train(network, variant, train_config, split.train_set,
                              adapts ? std::span<const LabeledWindow>(split.adapt_set) : std::span<const LabeledWindow>{},
                              hooks);
  for (const auto& w : split.test_set) {
    if (trained.audit.training.count(w.id()) || trained.audit.adaptation.count(w.id())) {
      throw Error(ErrorKind::PreconditionViolated, "test window " + w.user_id + "#" + std::to_string(w.index) +
                                                       " was consumed by training");
    }
  }
  result.iterations = trained.iterations;
  result.converged = trained.converged;
  result.read_adaptation = trained.audit.read_adaptation();
  if (split.test_set.empty()) throw Error(ErrorKind::EmptyInput, "user " + split.new_user + " has no test windows");
  std::vector<int> labels;
  for (const auto& w : split.test_set) {
    if (!w.label) throw Error(ErrorKind::UnlabeledSample, "unlabeled test window");
    labels.push_back(*w.label);
  }
  const auto predictions = predict(trained.state, network, split.test_set);
  result.confusion = confusion_matrix(predictions, labels, network.n_classes);
  result.accuracy = accuracy(result.confusion);
  result.macro_f1 = macro_f1(result.confusion);
  if (training) *training = std::move(trained);
  return result;
}

MetricsReport run_louo(std::span<const LabeledWindow> windows, Variant variant, const NetworkConfig& network,
                       const TrainConfig& train_config, const LouoOptions& options) {
  const auto all_users = user_ids(windows);
  if (all_users.size() < 2) throw Error(ErrorKind::SingleUserDataset, "leave-one-user-out needs at least 2 users");
  const auto users = options.users.empty() ? all_users : options.users;
  if (options.seeds.empty()) throw Error(ErrorKind::InvalidConfig, "no seeds");
  MetricsReport report;
  report.variant = std::string(variant_name(variant));
  report.config_fingerprint = config_fingerprint(network, train_config, variant);
  std::vector<double> seed_means;
  for (std::uint64_t seed : options.seeds) {
    SeedResult sr;
    sr.seed = seed;
    std::vector<double> acc, f1;
    for (const auto& user : users) {
      TrainConfig tc = train_config;
      tc.seed = seed;
      UserResult ur;
      ur.user = user;
      try {
        SplitSpec split = make_louo_split(windows, user, seed);
        normalize_split(split);
        TrainResult trained;
        const TrainHooks hooks = options.make_hooks ? options.make_hooks(seed, user) : TrainHooks{};
        ur = evaluate_fold(split, variant, network, tc, &trained, hooks);
        if (options.on_fold) options.on_fold(FoldContext{seed, split, trained, ur});
        acc.push_back(ur.accuracy);
        f1.push_back(ur.macro_f1);
      } catch (const std::exception& e) {
        ur.error = e.what();
      }
      sr.users.push_back(std::move(ur));
    }
    sr.mean_accuracy = mean(acc);
    sr.mean_macro_f1 = mean(f1);
    seed_means.push_back(sr.mean_accuracy);
    report.seeds.push_back(std::move(sr));
  }
  std::vector<double> f1s;
  for (const auto& s : report.seeds) f1s.push_back(s.mean_macro_f1);
  report.mean_accuracy = mean(seed_means);
  report.mean_macro_f1 = mean(f1s);
  report.min_accuracy = *std::min_element(seed_means.begin(), seed_means.end());
  report.max_accuracy = *std::max_element(seed_means.begin(), seed_means.end());
  return report;
}

void AttentionReport::write_csv(std::ostream& out, std::span<const std::string> sensor_names) const {
  out << "user,activity,sensor,sensor_name,mean_attention,mean_output_difference,windows\n";
  for (const auto& r : rows) {
    out << r.user << ',' << (r.activity < 0 ? std::string("all") : std::to_string(r.activity)) << ',' << r.sensor << ','
        << (r.sensor < sensor_names.size() ? sensor_names[r.sensor] : std::string()) << ','
        << format_double(r.mean_attention) << ',' << format_double(r.mean_output_difference) << ',' << r.windows << '\n';
  }
}

std::vector<AttentionRow> AttentionReport::select(const std::string& user, int activity) const {
  std::vector<AttentionRow> out;
  for (const auto& r : rows)
    if (r.user == user && r.activity == activity) out.push_back(r);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.sensor < b.sensor; });
  return out;
}

AttentionReport attention_report(const NetworkState& state, const NetworkConfig& config,
                                 std::span<const LabeledWindow> windows, const std::optional<std::set<int>>& activity_filter) {
  if (!state.attention || state.local_discriminators.empty()) {
    throw Error(ErrorKind::VariantWithoutAttention, "attention report needs a state with an attention network");
  }
  std::vector<LabeledWindow> selected;
  for (const auto& w : windows) {
    if (!w.label) continue;
    if (activity_filter && !activity_filter->count(*w.label)) continue;
    selected.push_back(w);
  }
  const std::size_t K = config.sensor_count();
  struct Acc {
    std::vector<double> alpha, diff;
    std::size_t n = 0;
  };
  // Keyed by (user, activity); activity -1 collects every window.
  std::map<std::pair<std::string, int>, Acc> acc;
  auto bucket = [&](const std::string& user, int activity) -> Acc& {
    Acc& a = acc[{user, activity}];
    if (a.alpha.empty()) {
      a.alpha.assign(K, 0.0);
      a.diff.assign(K, 0.0);
    }
    return a;
  };
  for_each_chunk(state, config, selected, {false, false}, [&](std::size_t start, const engine::ForwardCache& c) {
    for (std::size_t b = 0; b < c.batch_size(); ++b) {
      const LabeledWindow& w = selected[start + b];
      for (Acc* a : {&bucket(w.user_id, *w.label), &bucket(w.user_id, -1)}) {
        for (std::size_t k = 0; k < K; ++k) {
          const auto& p = c.locals[k].probs;
          a->alpha[k] += c.alpha(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(k));
          a->diff[k] += std::abs(p(static_cast<Eigen::Index>(b), 0) - p(static_cast<Eigen::Index>(b), 1));
        }
        ++a->n;
      }
    }
  });
  AttentionReport report;
  for (const auto& [key, a] : acc) {
    for (std::size_t k = 0; k < K; ++k) {
      AttentionRow r;
      r.user = key.first;
      r.activity = key.second;
      r.sensor = k;
      r.windows = a.n;
      r.mean_attention = a.alpha[k] / static_cast<double>(a.n);
      r.mean_output_difference = a.diff[k] / static_cast<double>(a.n);
      report.rows.push_back(r);
    }
  }
  return report;
}

void export_features(std::ostream& out, const NetworkState& state, const NetworkConfig& config,
                     std::span<const LabeledWindow> windows, const std::string& tag, bool header) {
  if (header) {
    out << "user,index,label,tag";
    for (std::size_t c = 0; c < config.n_classes; ++c) out << ",logit_" << c;
    out << '\n';
  }
  if (windows.empty()) return;
  const Eigen::MatrixXd logits = classifier_logits(state, config, windows);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    out << w.user_id << ',' << w.index << ',' << (w.label ? std::to_string(*w.label) : std::string()) << ',' << tag;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out << ',' << format_double(logits(static_cast<Eigen::Index>(i), c));
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::IOError, "feature export write failed");
}

void export_features(const std::filesystem::path& path, const NetworkState& state, const NetworkConfig& config,
                     std::span<const std::pair<std::string, std::span<const LabeledWindow>>> tagged) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
  bool header = true;
  for (const auto& [tag, windows] : tagged) {
    export_features(out, state, config, windows, tag, header);
    header = false;
  }
  if (tagged.empty()) export_features(out, state, config, {}, "", true);
}

}  // namespace salience
