#include "salience/commands.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "salience/engine.hpp"
#include "salience/error.hpp"
#include "salience/harness.hpp"

namespace salience {

namespace fs = std::filesystem;

namespace {

class Progress {
 public:
  explicit Progress(std::ostream* out) : out_(out) {}
  template <class... Args>
  void operator()(const Args&... args) const {
    if (!out_) return;
    ((*out_) << ... << args) << '\n';
    out_->flush();
  }

 private:
  std::ostream* out_;
};

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::IOError, "cannot write " + path.string());
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = open_output(path);
  out << text;
  if (!out) throw Error(ErrorKind::IOError, "write failed for " + path.string());
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

/// Run directory with the config snapshot written before anything else and
/// wall-clock metadata kept under meta/.
class RunDirectory {
 public:
  RunDirectory(const RunConfig& config, const std::string& command, bool overwrite)
      : root_(config.out), command_(command), start_(std::chrono::steady_clock::now()) {
    if (config.out.empty()) throw Error(ErrorKind::InvalidConfig, "no output directory (--out)");
    prepare_run_directory(root_, overwrite);
    config.to_document().save(root_ / "config.snapshot");
    fs::create_directories(root_ / "meta");
    started_ = timestamp();
    write_meta("running");
  }

  const fs::path& root() const { return root_; }
  fs::path meta() const { return root_ / "meta"; }

  void finish(const std::string& status) { write_meta(status); }

 private:
  void write_meta(const std::string& status) {
    KvDocument doc;
    doc.set("command", command_);
    doc.set("started", started_);
    doc.set("status", status);
    if (status != "running") {
      doc.set("finished", timestamp());
      doc.set("wall_seconds",
              format_double(std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()));
    }
    doc.save(meta() / "run.meta");
  }

  fs::path root_;
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::string started_;
};

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("stage '") + name + "': " + e.what());
  }
}

void apply_threads(const RunConfig& config) { engine::set_thread_count(config.threads); }

std::string fold_name(std::uint64_t seed, const std::string& user) {
  return "seed" + std::to_string(seed) + "_" + user;
}

std::vector<std::string> sensor_names(const WindowStore& store) {
  std::vector<std::string> names;
  for (const auto& s : store.preset.layout.sensors) names.push_back(s.name);
  return names;
}

/// Streams the per-iteration log of one training run to disk as it happens.
struct LogSink {
  std::shared_ptr<std::ofstream> records;
  std::shared_ptr<std::ofstream> timing;

  LogSink(const fs::path& records_path, const fs::path& timing_path)
      : records(std::make_shared<std::ofstream>(open_output(records_path))),
        timing(std::make_shared<std::ofstream>(open_output(timing_path))) {
    TrainingLog::write_header(*records);
    *timing << "iteration,wall_seconds\n";
  }

  TrainHooks hooks() const {
    TrainHooks h;
    auto r = records;
    auto t = timing;
    h.on_record = [r, t](const LogRecord& rec, double wall) {
      TrainingLog::write_record(*r, rec);
      r->flush();
      *t << rec.iteration << ',' << format_double(wall) << '\n';
    };
    return h;
  }
};

struct LouoOutputs {
  MetricsReport report;
  bool failed = false;
};

/// run_louo plus every per-fold artifact, written under `dir`.
LouoOutputs run_and_report(const RunConfig& config, const WindowStore& store, const NetworkConfig& network,
                           Variant variant, const fs::path& dir, const fs::path& meta_dir, const Progress& progress) {
  fs::create_directories(dir / "logs");
  fs::create_directories(meta_dir);
  const bool want_attention = config.attention_report && traits(variant).attention;
  if (config.export_features) fs::create_directories(dir / "features");
  AttentionReport attention;

  LouoOptions options;
  options.seeds = config.seeds;
  if (!config.new_user.empty()) options.users = {config.new_user};
  options.make_hooks = [&](std::uint64_t seed, const std::string& user) {
    const std::string name = fold_name(seed, user);
    progress("  ", variant_name(variant), " ", name);
    return LogSink(dir / "logs" / (name + ".csv"), meta_dir / (name + ".timing.csv")).hooks();
  };
  options.on_fold = [&](const FoldContext& f) {
    const std::string name = fold_name(f.seed, f.split.new_user);
    progress("    accuracy ", format_double(f.result.accuracy), " macro_f1 ", format_double(f.result.macro_f1));
    if (want_attention) {
      auto rep = attention_report(f.training.state, network, f.split.test_set);
      for (auto& row : rep.rows) {
        row.user = name;
        attention.rows.push_back(row);
      }
    }
    if (config.export_features) {
      const std::vector<std::pair<std::string, std::span<const LabeledWindow>>> tagged{
          {"train", f.split.train_set}, {"test", f.split.test_set}};
      export_features(dir / "features" / (name + ".csv"), f.training.state, network, tagged);
    }
  };

  LouoOutputs out;
  out.report = run_louo(store.windows, variant, network, config.train, options);
  out.failed = !out.report.complete();
  write_text(dir / "metrics.json", out.report.to_json());
  {
    auto f = open_output(dir / "per_user.csv");
    out.report.write_user_csv(f);
  }
  {
    auto f = open_output(dir / "per_seed.csv");
    out.report.write_seed_csv(f);
  }
  {
    auto f = open_output(dir / "confusion.csv");
    out.report.write_confusion_csv(f);
  }
  if (want_attention) {
    auto f = open_output(dir / "attention.csv");
    const auto names = sensor_names(store);
    attention.write_csv(f, names);
  }
  for (const auto& s : out.report.seeds)
    for (const auto& u : s.users)
      if (u.failed()) progress("  fold ", fold_name(s.seed, u.user), " failed: ", u.error);
  return out;
}

}  // namespace

void prepare_run_directory(const fs::path& dir, bool overwrite) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw Error(ErrorKind::IOError, dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!overwrite) {
        throw Error(ErrorKind::IOError, "run directory " + dir.string() + " already exists (pass --overwrite to replace it)");
      }
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

int cmd_synth(const RunConfig& config, const CommandOptions& options) {
  if (!config.synthetic()) throw Error(ErrorKind::InvalidConfig, "synth needs dataset = synthetic");
  config.validate();
  RunDirectory run(config, "synth", options.overwrite);
  const auto sequences = generate_synthetic(config.synth, config.data_seed);
  write_synthetic_dataset(run.root(), config.synth, sequences);
  Progress(options.log)("wrote ", sequences.size(), " synthetic users to ", run.root().string());
  run.finish("ok");
  return kExitOk;
}

int cmd_preprocess(const RunConfig& config, const CommandOptions& options) {
  config.validate();
  const Progress progress(options.log);
  DatasetPreset preset;
  std::vector<FrameSequence> raw;
  stage("load", [&] {
    if (config.synthetic()) {
      preset = synthetic_preset(config.synth);
      raw = generate_synthetic(config.synth, config.data_seed);
    } else {
      preset = DatasetPreset::load(resolve_preset(config.dataset));
      raw = load_real_dataset(resolve_data_dir(config), preset);
    }
  });
  const auto geometry = stage("geometry", [&] {
    return WindowGeometry::from_seconds(config.window_seconds, config.overlap_seconds, preset.layout.sampling_rate_hz);
  });
  RunDirectory run(config, "preprocess", options.overwrite);
  WindowStore store;
  store.preset = preset;
  store.geometry = geometry;
  std::vector<FrameSequence> cleaned;
  stage("clean", [&] {
    for (const auto& s : raw) cleaned.push_back(clean_frames(s, preset.layout));
  });
  stage("stats", [&] { store.stats = compute_channel_stats(cleaned); });
  stage("segment", [&] {
    for (const auto& s : cleaned) {
      for (auto& w : segment_windows(s, geometry, preset.layout)) store.windows.push_back(std::move(w));
    }
    assign_window_indices(store.windows);
  });
  stage("write", [&] { save_window_store(run.root() / "windows.store", store); });

  const StoreSummary summary = summarize(store);
  KvDocument doc;
  doc.set("dataset", preset.layout.name);
  doc.set("users", std::to_string(summary.windows_per_user.size()));
  doc.set("activities", std::to_string(preset.class_count()));
  doc.set("windows", std::to_string(store.windows.size()));
  doc.set("window_length", std::to_string(geometry.length));
  doc.set("window_step", std::to_string(geometry.step));
  doc.set("sensors", std::to_string(preset.layout.sensor_count()));
  for (const auto& [user, n] : summary.windows_per_user) doc.add("user", user + ": " + std::to_string(n));
  for (std::size_t c = 0; c < summary.class_histogram.size(); ++c) {
    doc.add("class", preset.class_names[c] + ": " + std::to_string(summary.class_histogram[c]));
  }
  doc.save(run.root() / "summary.txt");
  progress(summary.windows_per_user.size(), " users, ", preset.class_count(), " activities, ", store.windows.size(),
           " windows -> ", (run.root() / "windows.store").string());
  run.finish("ok");
  return kExitOk;
}

int cmd_train(const RunConfig& config, const CommandOptions& options) {
  config.validate();
  if (config.new_user.empty()) throw Error(ErrorKind::InvalidConfig, "train needs a held-out user (--new-user)");
  apply_threads(config);
  const Progress progress(options.log);
  const WindowStore store = obtain_windows(config);
  const NetworkConfig network = resolve_network(config, store);
  RunDirectory run(config, "train", options.overwrite);
  SplitSpec split = make_louo_split(store.windows, config.new_user, config.seeds.front());
  normalize_split(split);

  TrainConfig tc = config.train;
  tc.seed = config.seeds.front();
  LogSink sink(run.root() / "train_log.csv", run.meta() / "train_log.timing.csv");
  TrainHooks hooks = sink.hooks();
  if (tc.checkpoint_every > 0) {
    fs::create_directories(run.root() / "checkpoints");
    hooks.on_checkpoint = [&](std::size_t it, const NetworkState& state) {
      save_checkpoint(run.root() / "checkpoints" / ("iter" + std::to_string(it) + ".ckpt"), network, config.variant, state);
    };
  }
  progress("training ", variant_name(config.variant), " with ", config.new_user, " held out (", split.train_set.size(),
           " training windows, ", split.adapt_set.size(), " adaptation windows)");
  TrainResult result;
  try {
    result = train(network, config.variant, tc, split.train_set,
                   traits(config.variant).adapts() ? std::span<const LabeledWindow>(split.adapt_set)
                                                   : std::span<const LabeledWindow>{},
                   hooks);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::NonFiniteLoss) {
      run.finish("non-finite loss");
      Progress(options.log)("error: ", e.what());
      return kExitNonFinite;
    }
    throw;
  }
  save_checkpoint(run.root() / "model.ckpt", network, config.variant, result.state);
  KvDocument info;
  info.set("new_user", config.new_user);
  info.set("seed", std::to_string(tc.seed));
  info.set("split_fingerprint", std::to_string(split.fingerprint()));
  info.set("train_windows", std::to_string(split.train_set.size()));
  info.set("adapt_windows", std::to_string(split.adapt_set.size()));
  info.set("test_windows", std::to_string(split.test_set.size()));
  info.set("iterations", std::to_string(result.iterations));
  info.set("converged", result.converged ? "true" : "false");
  info.set("read_adaptation", result.audit.read_adaptation() ? "true" : "false");
  info.save(run.root() / "train.summary");
  progress(result.iterations, " iterations", result.converged ? " (converged)" : "", "; checkpoint ",
           (run.root() / "model.ckpt").string());
  run.finish("ok");
  return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const CommandOptions& options) {
  config.validate();
  apply_threads(config);
  const Progress progress(options.log);
  const WindowStore store = obtain_windows(config);
  if (options.checkpoint) {
    if (config.new_user.empty()) throw Error(ErrorKind::InvalidConfig, "checkpoint evaluation needs --new-user");
    const Checkpoint ck = load_checkpoint(*options.checkpoint);
    const NetworkConfig expected = resolve_network(config, store);
    if (ck.config.channel_counts != expected.channel_counts || ck.config.window_length != expected.window_length ||
        ck.config.n_classes != expected.n_classes) {
      throw Error(ErrorKind::ShapeMismatch, "checkpoint does not fit this dataset");
    }
    RunDirectory run(config, "evaluate", options.overwrite);
    SplitSpec split = make_louo_split(store.windows, config.new_user, config.seeds.front());
    normalize_split(split);
    std::vector<int> labels;
    for (const auto& w : split.test_set) labels.push_back(*w.label);
    const auto predictions = predict(ck.state, ck.config, split.test_set);
    MetricsReport report;
    report.variant = std::string(variant_name(ck.variant));
    report.config_fingerprint = config_fingerprint(ck.config, config.train, ck.variant);
    SeedResult sr;
    sr.seed = config.seeds.front();
    UserResult ur;
    ur.user = config.new_user;
    ur.split_fingerprint = split.fingerprint();
    ur.test_windows = split.test_set.size();
    ur.confusion = confusion_matrix(predictions, labels, ck.config.n_classes);
    ur.accuracy = accuracy(ur.confusion);
    ur.macro_f1 = macro_f1(ur.confusion);
    sr.mean_accuracy = report.mean_accuracy = report.min_accuracy = report.max_accuracy = ur.accuracy;
    sr.mean_macro_f1 = report.mean_macro_f1 = ur.macro_f1;
    sr.users.push_back(ur);
    report.seeds.push_back(sr);
    write_text(run.root() / "metrics.json", report.to_json());
    auto f = open_output(run.root() / "per_user.csv");
    report.write_user_csv(f);
    auto c = open_output(run.root() / "confusion.csv");
    report.write_confusion_csv(c);
    if (config.attention_report && ck.state.attention) {
      auto a = open_output(run.root() / "attention.csv");
      const auto names = sensor_names(store);
      attention_report(ck.state, ck.config, split.test_set).write_csv(a, names);
    }
    if (config.export_features) {
      const std::vector<std::pair<std::string, std::span<const LabeledWindow>>> tagged{
          {"train", split.train_set}, {"test", split.test_set}};
      export_features(run.root() / "features.csv", ck.state, ck.config, tagged);
    }
    progress("accuracy ", format_double(ur.accuracy), " macro_f1 ", format_double(ur.macro_f1));
    run.finish("ok");
    return kExitOk;
  }
  const NetworkConfig network = resolve_network(config, store);
  RunDirectory run(config, "evaluate", options.overwrite);
  progress("leave-one-user-out, variant ", variant_name(config.variant), ", ", config.seeds.size(), " seed(s)");
  const LouoOutputs out = run_and_report(config, store, network, config.variant, run.root(), run.meta(), progress);
  progress("mean accuracy ", format_double(out.report.mean_accuracy), " mean macro_f1 ",
           format_double(out.report.mean_macro_f1));
  run.finish(out.failed ? "partial" : "ok");
  return out.failed ? kExitPartial : kExitOk;
}

int cmd_ablate(const RunConfig& config, const CommandOptions& options) {
  config.validate();
  apply_threads(config);
  const Progress progress(options.log);
  const WindowStore store = obtain_windows(config);
  const NetworkConfig network = resolve_network(config, store);
  RunDirectory run(config, "ablate", options.overwrite);

  struct Row {
    Variant variant;
    std::optional<MetricsReport> report;
    std::string error;
  };
  std::vector<Row> rows;
  for (Variant v : kAllVariants) {
    progress("variant ", variant_name(v));
    Row row{v, std::nullopt, {}};
    try {
      const fs::path dir = run.root() / std::string(variant_name(v));
      row.report = run_and_report(config, store, network, v, dir, run.meta() / std::string(variant_name(v)), progress).report;
      if (!row.report->complete()) row.error = "one or more folds failed";
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }

  // Every variant must have seen the same split of every (seed, user).
  std::map<std::pair<std::uint64_t, std::string>, std::uint64_t> splits;
  bool splits_match = true;
  for (const auto& r : rows) {
    if (!r.report) continue;
    for (const auto& s : r.report->seeds) {
      for (const auto& u : s.users) {
        if (u.failed()) continue;
        auto [it, inserted] = splits.emplace(std::pair{s.seed, u.user}, u.split_fingerprint);
        if (!inserted && it->second != u.split_fingerprint) splits_match = false;
      }
    }
  }

  bool any_failed = !splits_match;
  auto table = open_output(run.root() / "ablation.csv");
  table << "variant,accuracy,macro_f1,min_accuracy,max_accuracy,status\n";
  for (const auto& r : rows) {
    table << variant_name(r.variant) << ',';
    if (r.report && r.error.empty()) {
      table << format_double(r.report->mean_accuracy) << ',' << format_double(r.report->mean_macro_f1) << ','
            << format_double(r.report->min_accuracy) << ',' << format_double(r.report->max_accuracy) << ",ok\n";
      progress(variant_name(r.variant), ": accuracy ", format_double(r.report->mean_accuracy), " macro_f1 ",
               format_double(r.report->mean_macro_f1));
    } else {
      table << ",,,,failed\n";
      progress(variant_name(r.variant), ": failed: ", r.error);
      any_failed = true;
    }
  }
  table.close();
  KvDocument check;
  check.set("splits_match", splits_match ? "true" : "false");
  check.set("folds", std::to_string(splits.size()));
  check.save(run.root() / "splits.check");
  if (!splits_match) progress("error: variants were trained on different splits");
  run.finish(any_failed ? "partial" : "ok");
  return any_failed ? kExitPartial : kExitOk;
}

}  // namespace salience
