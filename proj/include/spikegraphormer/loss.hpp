#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spikegraphormer/autograd.hpp"

namespace sgf {

enum class LossKind { nll, bce };

namespace ag {

/// Mean negative log-likelihood of log_softmax(logits) over the rows in
/// `index`. `labels` holds one class id per node.
template <typename Real>
Var<Real> nll_loss(Tape<Real>& tape, const Var<Real>& logits, std::span<const std::int64_t> labels,
                   std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("nll_loss: empty batch");
  const BasicTensor<Real>& z = logits.value();
  const std::size_t c = z.cols();
  auto probs = std::make_shared<BasicTensor<Real>>(Shape{index.size(), c});
  double total = 0.0;
  for (std::size_t b = 0; b < index.size(); ++b) {
    const std::size_t i = index[b];
    if (i >= z.rows()) throw DimensionError("nll_loss: index out of range");
    const std::int64_t y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw DimensionError("nll_loss: label " + std::to_string(y) + " out of range for " + std::to_string(c) +
                           " classes");
    double mx = z(i, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max<double>(mx, z(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(static_cast<double>(z(i, j)) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - static_cast<double>(z(i, static_cast<std::size_t>(y)));
    for (std::size_t j = 0; j < c; ++j) (*probs)(b, j) = static_cast<Real>(std::exp(static_cast<double>(z(i, j)) - log_z));
  }
  const double mean = total / static_cast<double>(index.size());
  if (!std::isfinite(mean)) throw NumericError("nll_loss: non-finite loss");
  auto ln = logits.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<std::int64_t> ys;
  ys.reserve(idx.size());
  for (std::size_t i : idx) ys.push_back(labels[i]);
  return tape.record(tape.make_dense(BasicTensor<Real>(Shape{1}, static_cast<Real>(mean))),
                     [ln, probs, idx = std::move(idx), ys = std::move(ys), c](Node<Real>& self) {
                       if (!ln->needs_grad) return;
                       const Real scale = self.grad[0] / static_cast<Real>(idx.size());
                       BasicTensor<Real> g(ln->shape());
                       for (std::size_t b = 0; b < idx.size(); ++b)
                         for (std::size_t j = 0; j < c; ++j) {
                           const Real target = static_cast<std::int64_t>(j) == ys[b] ? Real(1) : Real(0);
                           g(idx[b], j) += ((*probs)(b, j) - target) * scale;
                         }
                       ln->add_grad(g);
                     });
}

/// Mean elementwise binary cross-entropy with logits over rows in `index`
/// and every column. `targets` is [N x C] of 0/1.
template <typename Real>
Var<Real> bce_loss(Tape<Real>& tape, const Var<Real>& logits, const BasicTensor<Real>& targets,
                   std::span<const std::size_t> index) {
  if (index.empty()) throw DimensionError("bce_loss: empty batch");
  const BasicTensor<Real>& z = logits.value();
  if (targets.cols() != z.cols()) throw DimensionError("bce_loss: target width");
  const std::size_t c = z.cols();
  double total = 0.0;
  for (std::size_t i : index) {
    if (i >= z.rows() || i >= targets.rows()) throw DimensionError("bce_loss: index out of range");
    for (std::size_t j = 0; j < c; ++j) {
      const double x = z(i, j), y = targets(i, j);
      if (y != 0.0 && y != 1.0) throw DimensionError("bce_loss: targets must be 0/1");
      total += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    }
  }
  const double denom = static_cast<double>(index.size() * c);
  auto ln = logits.node();
  std::vector<std::size_t> idx(index.begin(), index.end());
  auto tg = std::make_shared<BasicTensor<Real>>(targets);
  return tape.record(tape.make_dense(BasicTensor<Real>(Shape{1}, static_cast<Real>(total / denom))),
                     [ln, tg, idx = std::move(idx), c, denom](Node<Real>& self) {
                       if (!ln->needs_grad) return;
                       BasicTensor<Real> g(ln->shape());
                       const double scale = static_cast<double>(self.grad[0]) / denom;
                       for (std::size_t i : idx)
                         for (std::size_t j = 0; j < c; ++j) {
                           const double x = ln->value(i, j);
                           const double sig = 1.0 / (1.0 + std::exp(-x));
                           g(i, j) = static_cast<Real>((sig - (*tg)(i, j)) * scale);
                         }
                       ln->add_grad(g);
                     });
}

}  // namespace ag
}  // namespace sgf
