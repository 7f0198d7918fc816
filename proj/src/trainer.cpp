#include "salience/trainer.hpp"

#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "salience/error.hpp"
#include "salience/losses.hpp"
#include "salience/rng.hpp"

namespace salience {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr GroupMask kClassifyGroups{ParamGroup::FE, ParamGroup::AN, ParamGroup::AC};
constexpr GroupMask kDiscriminateGroups{ParamGroup::LD, ParamGroup::GD};
constexpr GroupMask kConfuseGroups{ParamGroup::FE, ParamGroup::AN};

/// Cycles through shuffled passes over [0, n).
class Sampler {
 public:
  Sampler(std::size_t n, Rng rng) : order_(n), rng_(rng) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
  }

  std::size_t draw() {
    if (cursor_ == order_.size()) {
      rng_.shuffle(order_);
      cursor_ = 0;
    }
    return order_[cursor_++];
  }

 private:
  std::vector<std::size_t> order_;
  Rng rng_;
  std::size_t cursor_ = 0;
};

double local_accuracy(const engine::ForwardCache& cache, std::span<const int> sources) {
  if (cache.locals.empty()) return kNaN;
  double sum = 0.0;
  for (const auto& head : cache.locals) sum += batch_accuracy(head.probs, sources);
  return sum / static_cast<double>(cache.locals.size());
}

std::size_t size_value(const KvDocument& doc, std::string_view key, std::size_t fallback) {
  const auto v = doc.get_int(key, static_cast<std::int64_t>(fallback));
  if (v < 0) throw Error(ErrorKind::InvalidConfig, "train config: '" + std::string(key) + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw Error(ErrorKind::InvalidConfig, "learning_rate must be finite and >= 0");
  }
  if (batch_size < 2) throw Error(ErrorKind::InvalidConfig, "batch_size must be at least 2");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::InvalidConfig, "lambda must lie in [0, 1]");
  if (convergence_window > 0 && convergence_span == 0) {
    throw Error(ErrorKind::InvalidConfig, "convergence_span must be positive");
  }
  if (!(convergence_tolerance >= 0.0)) throw Error(ErrorKind::InvalidConfig, "convergence_tolerance must be >= 0");
}

TrainConfig TrainConfig::from_document(const KvDocument& doc) { return from_document(doc, TrainConfig{}); }

TrainConfig TrainConfig::from_document(const KvDocument& doc, const TrainConfig& defaults) {
  TrainConfig c = defaults;
  c.learning_rate = doc.get_double("learning_rate", c.learning_rate);
  c.batch_size = size_value(doc, "batch_size", c.batch_size);
  c.lambda = doc.get_double("lambda", c.lambda);
  c.max_iterations = size_value(doc, "max_iterations", c.max_iterations);
  c.convergence_window = size_value(doc, "convergence_window", c.convergence_window);
  c.convergence_span = size_value(doc, "convergence_span", c.convergence_span);
  c.convergence_tolerance = doc.get_double("convergence_tolerance", c.convergence_tolerance);
  c.seed = static_cast<std::uint64_t>(doc.get_int("seed", static_cast<std::int64_t>(c.seed)));
  c.detach_query = doc.get_bool("detach_query", c.detach_query);
  c.checkpoint_every = size_value(doc, "checkpoint_every", c.checkpoint_every);
  return c;
}

KvDocument TrainConfig::to_document() const {
  KvDocument doc;
  doc.set("learning_rate", format_double(learning_rate));
  doc.set("batch_size", std::to_string(batch_size));
  doc.set("lambda", format_double(lambda));
  doc.set("max_iterations", std::to_string(max_iterations));
  doc.set("convergence_window", std::to_string(convergence_window));
  doc.set("convergence_span", std::to_string(convergence_span));
  doc.set("convergence_tolerance", format_double(convergence_tolerance));
  doc.set("seed", std::to_string(static_cast<std::int64_t>(seed)));
  doc.set("detach_query", detach_query ? "true" : "false");
  doc.set("checkpoint_every", std::to_string(checkpoint_every));
  return doc;
}

void TrainingLog::write_header(std::ostream& out) {
  out << "iteration,classification_loss,domain_loss,global_accuracy,local_accuracy\n";
}

void TrainingLog::write_record(std::ostream& out, const LogRecord& r) {
  out << r.iteration << ',' << format_double(r.classification_loss) << ',' << format_double(r.domain_loss) << ','
      << format_double(r.global_accuracy) << ',' << format_double(r.local_accuracy) << '\n';
}

void TrainingLog::write(std::ostream& out) const {
  write_header(out);
  for (const auto& r : records) write_record(out, r);
}

void TrainingLog::write_timing(std::ostream& out) const {
  out << "iteration,wall_seconds\n";
  for (std::size_t i = 0; i < wall_seconds.size() && i < records.size(); ++i) {
    out << records[i].iteration << ',' << format_double(wall_seconds[i]) << '\n';
  }
}

TrainingLog TrainingLog::read(std::istream& in) {
  TrainingLog log;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::FormatError, "training log is empty");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 5) throw Error(ErrorKind::FormatError, "training log line " + std::to_string(line_no));
    LogRecord r;
    r.iteration = static_cast<std::size_t>(parse_int(f[0]));
    r.classification_loss = parse_double(f[1]);
    r.domain_loss = parse_double(f[2]);
    r.global_accuracy = parse_double(f[3]);
    r.local_accuracy = parse_double(f[4]);
    log.records.push_back(r);
  }
  return log;
}

Trainer::Trainer(NetworkConfig network, Variant variant, TrainConfig config)
    : Trainer(network, variant, config, init_state(network, variant, config.seed)) {}

Trainer::Trainer(NetworkConfig network, Variant variant, TrainConfig config, NetworkState initial)
    : engine_(std::move(network)),
      variant_(variant),
      config_(config),
      state_(std::move(initial)),
      classify_opt_(state_, kClassifyGroups),
      discriminate_opt_(state_, kDiscriminateGroups),
      confuse_opt_(state_, kConfuseGroups) {
  config_.validate();
}

void Trainer::require_finite(double loss, const char* what) const {
  if (!std::isfinite(loss)) {
    throw Error(ErrorKind::NonFiniteLoss, std::string(what) + " is " + format_double(loss) + " at iteration " +
                                              std::to_string(iteration_));
  }
}

namespace {

void require_both_sources(std::span<const int> sources) {
  bool seen[2] = {false, false};
  for (int s : sources) {
    if (s == kTrainingSource || s == kNewUserSource) seen[s] = true;
  }
  if (!seen[0] || !seen[1]) {
    throw Error(ErrorKind::PreconditionViolated, "discriminator batch must contain both sources");
  }
}

}  // namespace

double Trainer::evaluate_classification(std::span<const LabeledWindow* const> batch) const {
  const auto targets = class_targets(batch);
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {true, false});
  return classification_loss(cache, targets).value;
}

double Trainer::evaluate_domain(std::span<const LabeledWindow* const> batch, std::span<const int> sources) const {
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {false, true});
  return domain_loss(cache, sources, config_.lambda).value;
}

NetworkState Trainer::classification_gradient(std::span<const LabeledWindow* const> batch, GroupMask groups) const {
  const auto targets = class_targets(batch);
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {true, false});
  const BatchLoss loss = classification_loss(cache, targets);
  NetworkState grad = state_.zeros_like();
  engine_.backward(state_, cache, loss.seeds, {groups, config_.detach_query}, grad);
  return grad;
}

NetworkState Trainer::domain_gradient(std::span<const LabeledWindow* const> batch, std::span<const int> sources,
                                      GroupMask groups) const {
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {false, true});
  const BatchLoss loss = domain_loss(cache, sources, config_.lambda);
  NetworkState grad = state_.zeros_like();
  engine_.backward(state_, cache, loss.seeds, {groups, config_.detach_query}, grad);
  return grad;
}

double Trainer::step_classify(std::span<const LabeledWindow* const> batch) {
  const auto targets = class_targets(batch);
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {true, false});
  const BatchLoss loss = classification_loss(cache, targets);
  require_finite(loss.value, "classification loss");
  NetworkState grad = state_.zeros_like();
  engine_.backward(state_, cache, loss.seeds, {kClassifyGroups, config_.detach_query}, grad);
  classify_opt_.step(state_, grad, config_.learning_rate);
  return loss.value;
}

DomainStep Trainer::step_discriminate(std::span<const LabeledWindow* const> batch, std::span<const int> sources) {
  if (!traits(variant_).adapts()) throw Error(ErrorKind::PreconditionViolated, "variant has no discriminators");
  require_both_sources(sources);
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {false, true});
  const BatchLoss loss = domain_loss(cache, sources, config_.lambda);
  require_finite(loss.value, "domain loss");
  DomainStep out;
  out.loss = loss.value;
  out.global_accuracy = cache.global ? batch_accuracy(cache.global->probs, sources) : kNaN;
  out.local_accuracy = local_accuracy(cache, sources);
  NetworkState grad = state_.zeros_like();
  engine_.backward(state_, cache, loss.seeds, {kDiscriminateGroups, config_.detach_query}, grad);
  discriminate_opt_.step(state_, grad, config_.learning_rate);
  return out;
}

DomainStep Trainer::step_confuse(std::span<const LabeledWindow* const> batch, std::span<const int> sources) {
  if (!traits(variant_).adapts()) throw Error(ErrorKind::PreconditionViolated, "variant has no discriminators");
  require_both_sources(sources);
  const auto cache = engine_.forward(state_, engine::make_batch(batch, engine_.config()), {false, true});
  const BatchLoss loss = domain_loss(cache, sources, config_.lambda);
  require_finite(loss.value, "domain loss");
  DomainStep out;
  out.loss = loss.value;
  out.global_accuracy = cache.global ? batch_accuracy(cache.global->probs, sources) : kNaN;
  out.local_accuracy = local_accuracy(cache, sources);
  NetworkState grad = state_.zeros_like();
  engine_.backward(state_, cache, loss.seeds, {kConfuseGroups, config_.detach_query}, grad);
  confuse_opt_.step(state_, grad, config_.learning_rate, -1.0);
  return out;
}

bool has_converged(std::span<const double> losses, const TrainConfig& config) {
  const std::size_t w = config.convergence_window;
  const std::size_t s = config.convergence_span;
  if (w == 0 || losses.size() < w + s) return false;
  const std::size_t n = losses.size();
  auto mean = [&](std::size_t end) {
    double sum = 0.0;
    for (std::size_t i = end - w; i < end; ++i) sum += losses[i];
    return sum / static_cast<double>(w);
  };
  return std::abs(mean(n) - mean(n - s)) < config.convergence_tolerance;
}

TrainResult train(const NetworkConfig& network, Variant variant, const TrainConfig& config,
                  std::span<const LabeledWindow> training, std::span<const LabeledWindow> adaptation,
                  const TrainHooks& hooks) {
  config.validate();
  Trainer trainer(network, variant, config);
  TrainResult result;
  if (config.max_iterations == 0) {
    result.state = trainer.state();
    return result;
  }
  if (training.empty()) throw Error(ErrorKind::EmptyInput, "no training windows");
  const bool adapts = traits(variant).adapts();
  if (adapts && adaptation.empty()) throw Error(ErrorKind::EmptyInput, "no adaptation windows");

  Rng rng(config.seed ^ 0x5A17E4CEULL);
  Sampler classify_sampler(training.size(), rng.fork(1));
  Sampler mixed_train_sampler(training.size(), rng.fork(2));
  std::optional<Sampler> mixed_adapt_sampler;
  if (adapts) mixed_adapt_sampler.emplace(adaptation.size(), rng.fork(3));

  const std::size_t B = config.batch_size;
  const std::size_t half = B / 2;
  std::vector<const LabeledWindow*> batch;
  std::vector<int> sources;
  auto draw_mixed = [&]() {
    batch.clear();
    sources.clear();
    for (std::size_t i = 0; i < half; ++i) {
      const LabeledWindow& w = training[mixed_train_sampler.draw()];
      result.audit.training.insert(w.id());
      batch.push_back(&w);
      sources.push_back(kTrainingSource);
    }
    for (std::size_t i = half; i < B; ++i) {
      const LabeledWindow& w = adaptation[mixed_adapt_sampler->draw()];
      result.audit.adaptation.insert(w.id());
      batch.push_back(&w);
      sources.push_back(kNewUserSource);
    }
  };

  std::vector<double> losses;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t it = 0; it < config.max_iterations; ++it) {
    trainer.set_iteration(it);
    batch.clear();
    for (std::size_t i = 0; i < B; ++i) {
      const LabeledWindow& w = training[classify_sampler.draw()];
      result.audit.training.insert(w.id());
      batch.push_back(&w);
    }
    LogRecord rec;
    rec.iteration = it;
    rec.classification_loss = trainer.step_classify(batch);
    rec.domain_loss = rec.global_accuracy = rec.local_accuracy = kNaN;
    if (adapts) {
      draw_mixed();
      const DomainStep d = trainer.step_discriminate(batch, sources);
      rec.domain_loss = d.loss;
      rec.global_accuracy = d.global_accuracy;
      rec.local_accuracy = d.local_accuracy;
      draw_mixed();
      trainer.step_confuse(batch, sources);
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.records.push_back(rec);
    result.log.wall_seconds.push_back(wall);
    if (hooks.on_record) hooks.on_record(rec, wall);
    if (hooks.on_checkpoint && config.checkpoint_every > 0 && (it + 1) % config.checkpoint_every == 0) {
      hooks.on_checkpoint(it + 1, trainer.state());
    }
    losses.push_back(rec.classification_loss);
    result.iterations = it + 1;
    if (has_converged(losses, config)) {
      result.converged = true;
      break;
    }
  }
  result.state = std::move(trainer.state());
  return result;
}

}  // namespace salience
