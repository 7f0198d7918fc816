#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "common/contracts.hpp"
#include "common/gradient_check.hpp"
#include "common/oracles.hpp"
#include "salience/commands.hpp"
#include "salience/data_pipeline.hpp"
#include "salience/datasets.hpp"
#include "salience/error.hpp"
#include "salience/harness.hpp"
#include "salience/run_config.hpp"
#include "salience/trainer.hpp"
#include "salience/window_store.hpp"

using namespace salience;
using namespace salience::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  enum class State { Pass, Fail, Skip } state = State::Fail;
  std::string detail;
};

Outcome pass(std::string d) { return {Outcome::State::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Outcome::State::Fail, std::move(d)}; }
Outcome skip(std::string d) { return {Outcome::State::Skip, std::move(d)}; }

Outcome from_suite(const SuiteResult& r) {
  const std::string counts = std::to_string(r.instances) + " instances, " + std::to_string(r.failures) + " failures";
  return r.passed() ? pass(counts) : fail(counts + "; first: " + r.first_failure);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string scientific(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) rows.push_back(split(line, ','));
  return rows;
}

fs::path work_root() {
  const fs::path root = fs::temp_directory_path() / "salience_acceptance";
  fs::create_directories(root);
  return root;
}

// 4

Outcome gradients() {
  constexpr std::size_t kMinPerGroup = 50;
  std::string detail;
  bool ok = true;
  for (Variant v : {Variant::Full, Variant::LDGD, Variant::LD, Variant::GD, Variant::Base}) {
    GradientCheckOptions o;
    o.variant = v;
    o.samples_per_group = 60;
    const GradientCheckResult r = check_gradients(o);
    const bool good = r.passed(kMinPerGroup);
    ok = ok && good;
    detail += std::string(variant_name(v)) + " " + std::to_string(r.checked) + " checked, worst rel " +
              scientific(r.worst_relative) + (good ? "" : " FAILED: " + r.first_failure) + "; ";
  }
  return ok ? pass(detail) : fail(detail);
}

// 6

Outcome zero_shift() {
  SynthConfig sc;
  sc.n_users = 3;
  sc.n_classes = 4;
  sc.channel_counts = {3, 3, 3};
  sc.shift_magnitude = 0.0;
  sc.misaligned_sensor = -1;
  sc.seconds_per_user = 200.0;
  const auto geometry = WindowGeometry::from_seconds(2.0, 1.0, sc.sampling_rate_hz);
  const WindowStore store = build_window_store(generate_synthetic(sc, 1), synthetic_preset(sc), geometry);

  NetworkConfig network;
  network.channel_counts = sc.channel_counts;
  network.window_length = geometry.length;
  network.n_classes = sc.n_classes;
  network.local_lstm_state = 8;
  network.global_lstm_state = 16;
  network.classifier_lstm_state = 16;
  network.attention_dim = 8;

  TrainConfig tc;
  tc.batch_size = 32;
  tc.learning_rate = 0.002;
  tc.max_iterations = 200;
  tc.convergence_window = 0;

  std::string detail;
  bool ok = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    SplitSpec split = make_louo_split(store.windows, "user3", seed);
    normalize_split(split);
    tc.seed = seed;
    const TrainResult r = train(network, Variant::Full, tc, split.train_set, split.adapt_set);
    const auto& recs = r.log.records;
    const std::size_t from = recs.size() - recs.size() / 4;
    double global = 0.0, local = 0.0;
    for (std::size_t i = from; i < recs.size(); ++i) {
      global += recs[i].global_accuracy;
      local += recs[i].local_accuracy;
    }
    global /= static_cast<double>(recs.size() - from);
    local /= static_cast<double>(recs.size() - from);
    const bool good = global >= 0.4 && global <= 0.6 && local >= 0.4 && local <= 0.6;
    ok = ok && good;
    detail += "seed " + std::to_string(seed) + " global " + fixed(global, 3) + " local " + fixed(local, 3) + "; ";
  }
  return ok ? pass(detail) : fail(detail);
}

// 7 and 8

struct Benchmark {
  fs::path dir;
  std::map<std::string, double> accuracy;
  std::vector<double> output_difference;  ///< per sensor, mean over folds
  bool ok = false;
  std::string error;
};

Benchmark run_benchmark(const fs::path& dir) {
  Benchmark b;
  b.dir = dir;
  try {
    RunConfig config = RunConfig::load(SALIENCE_BENCHMARK_CONFIG);
    config.out = dir.string();
    CommandOptions options;
    options.overwrite = true;
    const int code = cmd_ablate(config, options);
    if (code != kExitOk) {
      b.error = "ablate exited with " + std::to_string(code);
      return b;
    }
  } catch (const std::exception& e) {
    b.error = e.what();
    return b;
  }
  for (const auto& row : read_csv(dir / "ablation.csv")) {
    if (row.size() >= 6 && row[5] == "ok") b.accuracy[row[0]] = std::stod(row[1]);
  }
  std::map<std::size_t, std::pair<double, std::size_t>> diff;
  for (const auto& row : read_csv(dir / "full" / "attention.csv")) {
    if (row.size() < 7 || row[1] != "all") continue;
    auto& d = diff[std::stoul(row[2])];
    d.first += std::stod(row[5]);
    ++d.second;
  }
  for (const auto& [sensor, d] : diff) b.output_difference.push_back(d.first / static_cast<double>(d.second));
  b.ok = b.accuracy.size() == 5 && !b.output_difference.empty();
  if (!b.ok) b.error = "incomplete ablation outputs";
  return b;
}

Outcome benchmark_outcome(const Benchmark& b) {
  if (!b.ok) return fail(b.error);
  const double base = b.accuracy.at("base"), ld = b.accuracy.at("LD"), gd = b.accuracy.at("GD");
  const double ldgd = b.accuracy.at("LDGD"), full = b.accuracy.at("full");
  constexpr double kBand = 0.02;
  const bool gain = full - base >= 0.05;
  const bool top = full >= ldgd - kBand;
  const bool middle = ldgd >= std::max(ld, gd) - kBand;
  std::size_t argmax = 0;
  for (std::size_t k = 1; k < b.output_difference.size(); ++k)
    if (b.output_difference[k] > b.output_difference[argmax]) argmax = k;
  const KvDocument bench = KvDocument::load(SALIENCE_BENCHMARK_CONFIG);
  const auto misaligned = static_cast<std::size_t>(bench.get_int("misaligned_sensor", 0));
  const bool located = argmax == misaligned;

  std::string detail = "base " + fixed(base) + " LD " + fixed(ld) + " GD " + fixed(gd) + " LDGD " + fixed(ldgd) +
                       " full " + fixed(full) + "; output difference";
  for (double d : b.output_difference) detail += " " + fixed(d, 3);
  if (!gain) detail += "; full - base < 0.05";
  if (!top) detail += "; full < LDGD - 0.02";
  if (!middle) detail += "; LDGD < max(LD, GD) - 0.02";
  if (!located) detail += "; misaligned sensor is not the most discriminable";
  return gain && top && middle && located ? pass(detail) : fail(detail);
}

Outcome determinism(const Benchmark& first, const Benchmark& second) {
  if (!first.ok || !second.ok) return fail("benchmark did not complete: " + (first.ok ? second.error : first.error));
  std::vector<std::string> differing;
  std::size_t compared = 0;
  for (const char* v : {"base", "LD", "GD", "LDGD", "full"}) {
    for (const char* file : {"metrics.json", "per_user.csv", "confusion.csv"}) {
      const fs::path rel = fs::path(v) / file;
      ++compared;
      if (slurp(first.dir / rel) != slurp(second.dir / rel)) differing.push_back(rel.string());
    }
  }
  ++compared;
  if (slurp(first.dir / "ablation.csv") != slurp(second.dir / "ablation.csv")) differing.push_back("ablation.csv");
  if (!differing.empty()) return fail(std::to_string(differing.size()) + " reports differ, first " + differing.front());
  return pass(std::to_string(compared) + " reports byte-identical");
}

// 9

Outcome real_data() {
  const char* root = std::getenv(kDataRootEnv);
  if (!root || !fs::is_directory(fs::path(root) / "pamap2")) {
    return skip(std::string("no PAMAP2 data under $") + kDataRootEnv);
  }
  try {
    const fs::path dir = work_root() / "pamap2";
    RunConfig config = RunConfig::defaults_for("pamap2");
    config.dataset = "pamap2";
    config.out = dir.string();
    config.seeds = {1};
    CommandOptions options;
    options.overwrite = true;
    options.log = &std::cerr;
    cmd_ablate(config, options);
    std::map<std::string, double> acc;
    for (const auto& row : read_csv(dir / "ablation.csv"))
      if (row.size() >= 6 && row[5] == "ok") acc[row[0]] = std::stod(row[1]);
    if (!acc.count("full") || !acc.count("base")) return fail("full or base variant failed");
    const double full = acc["full"], base = acc["base"];
    const std::string detail = "full " + fixed(full) + " base " + fixed(base);
    return std::abs(full - 0.894) <= 0.05 && full - base >= 0.03 ? pass(detail) : fail(detail);
  } catch (const std::exception& e) {
    return fail(e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  bool only_fast = false;
  for (int i = 1; i < argc; ++i)
    if (std::string(argv[i]) == "--fast") only_fast = true;

  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"preprocessing oracle equivalence", [] { return from_suite(preprocessing_suite(500, 1)); }},
      {"metric oracle equivalence", [] { return from_suite(metric_suite(1000, 2)); }},
      {"simplex and shape suite", [] { return from_suite(simplex_shape_suite(100, 3)); }},
      {"gradient check", gradients},
      {"update contract", [] { return from_suite(update_contract_suite(40, 5)); }},
      {"zero-shift discriminators near chance", zero_shift},
  };

  Benchmark first, second;
  if (!only_fast) {
    criteria.emplace_back("synthetic shift benchmark", [&] {
      first = run_benchmark(work_root() / "benchmark_a");
      return benchmark_outcome(first);
    });
    criteria.emplace_back("benchmark determinism", [&] {
      second = run_benchmark(work_root() / "benchmark_b");
      return determinism(first, second);
    });
    criteria.emplace_back("PAMAP2 reproduction", real_data);
  }

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.state == Outcome::State::Pass ? "PASS" : o.state == Outcome::State::Skip ? "SKIP" : "FAIL";
    if (o.state == Outcome::State::Fail) all = false;
    std::printf("[%s] criterion %zu: %s (%.1fs) %s\n", tag, i + 1, criteria[i].first.c_str(), seconds, o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
