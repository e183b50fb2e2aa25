#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "spikegraphormer/tensor.hpp"

namespace sgf {

enum class Metric { accuracy, rocauc };

/// Fraction of `index` rows whose argmax (first maximum) equals the label.
inline double accuracy(const Tensor& logits, std::span<const std::int64_t> labels, std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("accuracy: empty split");
  std::size_t hit = 0;
  for (std::size_t i : index) {
    auto row = logits.row(i);
    const auto best = static_cast<std::int64_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(index.size());
}

/// Area under the ROC curve via the rank-sum statistic, ties sharing
/// their average rank. Empty when only one class is present.
inline std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i]) {
      ++pos;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

/// Mean per-task ROC-AUC over `index`. `targets` is [N x C] 0/1; tasks with
/// a single class present in the split are skipped.
inline double mean_roc_auc(const Tensor& scores, const Tensor& targets, std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("rocauc: empty split");
  if (scores.cols() != targets.cols()) throw DimensionError("rocauc: score and target widths differ");
  double total = 0;
  std::size_t tasks = 0;
  std::vector<double> s(index.size());
  std::vector<int> y(index.size());
  for (std::size_t c = 0; c < scores.cols(); ++c) {
    for (std::size_t k = 0; k < index.size(); ++k) {
      s[k] = scores(index[k], c);
      y[k] = targets(index[k], c) != 0.0f ? 1 : 0;
    }
    if (auto auc = roc_auc(s, y)) {
      total += *auc;
      ++tasks;
    }
  }
  if (tasks == 0) throw DataError("rocauc: every task has a single class in this split");
  return total / static_cast<double>(tasks);
}

}  // namespace sgf
