#include "salience/losses.hpp"

#include <cmath>
#include <string>

#include "salience/error.hpp"

namespace salience {

namespace {

void check_target(int target, Eigen::Index classes) {
  if (target < 0 || target >= classes) {
    throw Error(ErrorKind::IndexOutOfRange, "target " + std::to_string(target) + " outside " +
                                                std::to_string(classes) + " classes");
  }
}

void check_sources(std::span<const int> sources, std::size_t batch) {
  if (sources.size() != batch) {
    throw Error(ErrorKind::MissingSourceLabels, std::to_string(sources.size()) + " source labels for " +
                                                    std::to_string(batch) + " windows");
  }
  for (int s : sources) {
    if (s != kTrainingSource && s != kNewUserSource) {
      throw Error(ErrorKind::MissingSourceLabels, "source label must be 0 or 1, got " + std::to_string(s));
    }
  }
}

}  // namespace

double cross_entropy(const Eigen::VectorXd& probs, int target) {
  check_target(target, probs.size());
  return -std::log(probs(target));
}

LogitLoss softmax_cross_entropy(const Eigen::MatrixXd& logits, std::span<const int> targets, double weight) {
  const Eigen::Index B = logits.rows();
  if (B == 0) throw Error(ErrorKind::EmptyInput, "no logits");
  if (static_cast<std::size_t>(B) != targets.size()) {
    throw Error(ErrorKind::LengthMismatch, "logit rows and targets differ");
  }
  LogitLoss out;
  out.d_logits.resize(B, logits.cols());
  const double scale = weight / static_cast<double>(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    const int y = targets[static_cast<std::size_t>(b)];
    check_target(y, logits.cols());
    const double m = logits.row(b).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(b).array() - m).exp().matrix();
    const double z = e.sum();
    out.value += (std::log(z) + m - logits(b, y)) * scale;
    out.d_logits.row(b) = e / z * scale;
    out.d_logits(b, y) -= scale;
  }
  return out;
}

std::vector<int> class_targets(std::span<const LabeledWindow* const> windows) {
  std::vector<int> out;
  out.reserve(windows.size());
  for (const LabeledWindow* w : windows) {
    if (!w->label) {
      throw Error(ErrorKind::UnlabeledSample, "window " + w->user_id + "#" + std::to_string(w->index) + " has no label");
    }
    out.push_back(*w->label);
  }
  return out;
}

double classification_loss(std::span<const LabeledWindow> batch, std::span<const ForwardTrace> traces) {
  if (batch.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
  if (batch.size() != traces.size()) throw Error(ErrorKind::LengthMismatch, "batch and traces differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i].label) throw Error(ErrorKind::UnlabeledSample, "window " + batch[i].user_id + " has no label");
    sum += cross_entropy(traces[i].class_probs, *batch[i].label);
  }
  return sum / static_cast<double>(batch.size());
}

DomainWeights domain_weights(double lambda, bool has_global, bool has_local) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(ErrorKind::InvalidConfig, "lambda must lie in [0, 1]");
  if (has_global && has_local) return {lambda, 1.0 - lambda};
  if (has_global) return {1.0, 0.0};
  if (has_local) return {0.0, 1.0};
  return {};
}

double domain_loss(std::span<const int> sources, std::span<const ForwardTrace> traces, double lambda) {
  if (traces.empty()) throw Error(ErrorKind::EmptyInput, "empty batch");
  check_sources(sources, traces.size());
  const bool has_global = traces[0].global_probs.size() > 0;
  const bool has_local = traces[0].local_probs.size() > 0;
  const DomainWeights w = domain_weights(lambda, has_global, has_local);
  double sum = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const ForwardTrace& tr = traces[i];
    if (has_global) sum += w.global * cross_entropy(tr.global_probs, sources[i]);
    if (has_local) {
      const Eigen::Index K = tr.local_probs.rows();
      double local = 0.0;
      for (Eigen::Index k = 0; k < K; ++k) local += cross_entropy(tr.local_probs.row(k).transpose(), sources[i]);
      sum += w.local * local / static_cast<double>(K);
    }
  }
  return sum / static_cast<double>(traces.size());
}

BatchLoss classification_loss(const engine::ForwardCache& cache, std::span<const int> targets) {
  LogitLoss ce = softmax_cross_entropy(cache.classifier.logits, targets);
  BatchLoss out;
  out.value = ce.value;
  out.seeds.classifier = std::move(ce.d_logits);
  return out;
}

BatchLoss domain_loss(const engine::ForwardCache& cache, std::span<const int> sources, double lambda) {
  check_sources(sources, cache.batch_size());
  const bool has_global = cache.global.has_value();
  const bool has_local = !cache.locals.empty();
  const DomainWeights w = domain_weights(lambda, has_global, has_local);
  BatchLoss out;
  if (has_global) {
    LogitLoss g = softmax_cross_entropy(cache.global->logits, sources, w.global);
    out.value += g.value;
    out.seeds.global = std::move(g.d_logits);
  }
  if (has_local) {
    const double per_sensor = w.local / static_cast<double>(cache.locals.size());
    for (const auto& head : cache.locals) {
      LogitLoss l = softmax_cross_entropy(head.logits, sources, per_sensor);
      out.value += l.value;
      out.seeds.local.push_back(std::move(l.d_logits));
    }
  }
  return out;
}

double batch_accuracy(const Eigen::MatrixXd& probs, std::span<const int> targets) {
  if (probs.rows() == 0) throw Error(ErrorKind::EmptyInput, "no predictions");
  std::size_t hits = 0;
  for (Eigen::Index b = 0; b < probs.rows(); ++b) {
    Eigen::Index arg = 0;
    probs.row(b).maxCoeff(&arg);
    if (arg == targets[static_cast<std::size_t>(b)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(probs.rows());
}

}  // namespace salience
