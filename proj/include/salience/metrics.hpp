#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace salience {

/// C x C counts indexed [true][predicted].
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t c = 0) : classes(c), counts(c * c, 0) {}

  std::uint64_t& at(std::size_t truth, std::size_t predicted) { return counts[truth * classes + predicted]; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * classes + predicted]; }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t support(std::size_t truth) const;

  /// Rows divided by their sums (zero rows stay zero).
  std::vector<std::vector<double>> row_normalized() const;
};

double accuracy(std::span<const int> predictions, std::span<const int> labels);
/// Mean over all C classes of the per-class F1; classes with
/// precision + recall = 0 contribute 0.
double macro_f1(std::span<const int> predictions, std::span<const int> labels, std::size_t classes);
ConfusionMatrix confusion_matrix(std::span<const int> predictions, std::span<const int> labels, std::size_t classes);

double accuracy(const ConfusionMatrix& m);
double macro_f1(const ConfusionMatrix& m);

}  // namespace salience
