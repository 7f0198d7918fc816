#include "salience/metrics.hpp"

#include <string>

#include "salience/error.hpp"

namespace salience {

namespace {

void check_lengths(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(predictions.size()) + " predictions for " +
                                               std::to_string(labels.size()) + " labels");
  }
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t sum = 0;
  for (auto c : counts) sum += c;
  return sum;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t sum = 0;
  for (std::size_t c = 0; c < classes; ++c) sum += at(c, c);
  return sum;
}

std::uint64_t ConfusionMatrix::support(std::size_t truth) const {
  std::uint64_t sum = 0;
  for (std::size_t p = 0; p < classes; ++p) sum += at(truth, p);
  return sum;
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const {
  std::vector<std::vector<double>> out(classes, std::vector<double>(classes, 0.0));
  for (std::size_t t = 0; t < classes; ++t) {
    const auto s = support(t);
    if (s == 0) continue;
    for (std::size_t p = 0; p < classes; ++p) out[t][p] = static_cast<double>(at(t, p)) / static_cast<double>(s);
  }
  return out;
}

ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, std::size_t classes) {
  check_lengths(predictions, labels);
  ConfusionMatrix m(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i];
    const int p = predictions[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= classes || static_cast<std::size_t>(p) >= classes) {
      throw Error(ErrorKind::IndexOutOfRange, "class index outside [0, " + std::to_string(classes) + ")");
    }
    ++m.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return m;
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  check_lengths(predictions, labels);
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of an empty set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double accuracy(const ConfusionMatrix& m) {
  const auto n = m.total();
  if (n == 0) throw Error(ErrorKind::EmptyInput, "accuracy of an empty confusion matrix");
  return static_cast<double>(m.trace()) / static_cast<double>(n);
}

double macro_f1(const ConfusionMatrix& m) {
  if (m.total() == 0) throw Error(ErrorKind::EmptyInput, "macro F1 of an empty set");
  double sum = 0.0;
  for (std::size_t c = 0; c < m.classes; ++c) {
    std::uint64_t predicted = 0;
    for (std::size_t t = 0; t < m.classes; ++t) predicted += m.at(t, c);
    const auto support = m.support(c);
    const double tp = static_cast<double>(m.at(c, c));
    const double precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
    const double recall = support ? tp / static_cast<double>(support) : 0.0;
    if (precision + recall > 0.0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(m.classes);
}

double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t classes) {
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "macro F1 of an empty set");
  return macro_f1(confusion_matrix(predictions, labels, classes));
}

}  // namespace salience
