#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "spikegraphormer/rng.hpp"
#include "spikegraphormer/tensor.hpp"

namespace sgf {

/// Trainable tensor with its gradient accumulator.
template <typename Real>
struct Parameter {
  BasicTensor<Real> value;
  BasicTensor<Real> grad;

  Parameter() = default;
  explicit Parameter(BasicTensor<Real> v) : value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = BasicTensor<Real>(value.shape()); }
  void accumulate(const BasicTensor<Real>& g) {
    if (grad.shape() != value.shape()) zero_grad();
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }

  template <typename Other>
  Parameter<Other> cast() const {
    return Parameter<Other>(value.template cast<Other>());
  }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and bias.
template <typename Real>
struct LinearLayer {
  Parameter<Real> weight;  // [in x out]
  Parameter<Real> bias;    // [out]
  bool has_bias = true;

  LinearLayer() = default;
  LinearLayer(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true) : has_bias(with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    BasicTensor<Real> w(Shape{in, out});
    for (auto& v : w.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
    weight = Parameter<Real>(std::move(w));
    BasicTensor<Real> b(Shape{out});
    if (with_bias)
      for (auto& v : b.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
    bias = Parameter<Real>(std::move(b));
  }

  std::size_t in_dim() const { return weight.value.shape()[0]; }
  std::size_t out_dim() const { return weight.value.shape()[1]; }
  const BasicTensor<Real>* bias_ptr() const { return has_bias ? &bias.value : nullptr; }

  template <typename Other>
  LinearLayer<Other> cast() const {
    LinearLayer<Other> l;
    l.weight = weight.template cast<Other>();
    l.bias = bias.template cast<Other>();
    l.has_bias = has_bias;
    return l;
  }
};

/// Dense linear map on the matrix view of `x`, bias added last.
template <typename Real>
BasicTensor<Real> linear_forward(const BasicTensor<Real>& x, const LinearLayer<Real>& layer) {
  BasicTensor<Real> out = matmul(x, layer.weight.value);
  if (layer.has_bias) {
    const std::size_t d = out.cols();
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t j = 0; j < d; ++j) out(r, j) += layer.bias.value[j];
  }
  return out;
}

template <typename Real>
struct BatchNormLayer {
  Parameter<Real> gamma;
  Parameter<Real> beta;
  BasicTensor<Real> running_mean;
  BasicTensor<Real> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  BatchNormLayer() = default;
  explicit BatchNormLayer(std::size_t d)
      : gamma(BasicTensor<Real>(Shape{d}, Real(1))), beta(BasicTensor<Real>(Shape{d})),
        running_mean(Shape{d}), running_var(Shape{d}, Real(1)) {}

  std::size_t dim() const { return gamma.value.size(); }

  template <typename Other>
  BatchNormLayer<Other> cast() const {
    BatchNormLayer<Other> b;
    b.gamma = gamma.template cast<Other>();
    b.beta = beta.template cast<Other>();
    b.running_mean = running_mean.template cast<Other>();
    b.running_var = running_var.template cast<Other>();
    b.eps = eps;
    b.momentum = momentum;
    return b;
  }
};

/// Saved state for the batch-norm backward pass (training mode only).
template <typename Real>
struct BatchNormCache {
  BasicTensor<Real> x_hat;  // normalized input, matrix view of the input
  BasicTensor<Real> inv_std;  // [D]
};

/// Batch normalization over every row of the matrix view (the node axis,
/// flattened with the time axis for [T x N x D] inputs). Training mode
/// uses biased batch variance and updates the running estimates with the
/// unbiased one.
template <typename Real>
BasicTensor<Real> batchnorm_forward(const BasicTensor<Real>& x, BatchNormLayer<Real>& layer, bool training,
                                    BatchNormCache<Real>* cache = nullptr) {
  const std::size_t rows = x.rows(), d = x.cols();
  if (d != layer.dim()) throw DimensionError("batchnorm: channel extent " + std::to_string(d));
  if (rows < 1) throw DimensionError("batchnorm: empty batch");
  BasicTensor<Real> out(x.shape());
  if (!training) {
    std::vector<Real> inv(d), g(d), b(d), mu(d);
    for (std::size_t c = 0; c < d; ++c) {
      inv[c] = Real(1) / std::sqrt(layer.running_var[c] + static_cast<Real>(layer.eps));
      g[c] = layer.gamma.value[c];
      b[c] = layer.beta.value[c];
      mu[c] = layer.running_mean[c];
    }
    for (std::size_t r = 0; r < rows; ++r) {
      const Real* __restrict xr = x.data() + r * d;
      Real* __restrict o = out.data() + r * d;
      for (std::size_t c = 0; c < d; ++c) o[c] = (xr[c] - mu[c]) * inv[c] * g[c] + b[c];
    }
    check_finite(out, "batchnorm");
    return out;
  }
  if (rows < 2) throw DimensionError("batchnorm: training mode needs a batch of at least 2 rows");
  BasicTensor<Real> mean(Shape{d}), var(Shape{d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x(r, c);
  for (std::size_t c = 0; c < d; ++c) mean[c] /= static_cast<Real>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const Real dv = x(r, c) - mean[c];
      var[c] += dv * dv;
    }
  BasicTensor<Real> x_hat(x.shape()), inv_std(Shape{d});
  const Real m = static_cast<Real>(layer.momentum);
  for (std::size_t c = 0; c < d; ++c) {
    const Real biased = var[c] / static_cast<Real>(rows);
    const Real unbiased = var[c] / static_cast<Real>(rows - 1);
    inv_std[c] = Real(1) / std::sqrt(biased + static_cast<Real>(layer.eps));
    layer.running_mean[c] = (Real(1) - m) * layer.running_mean[c] + m * mean[c];
    layer.running_var[c] = (Real(1) - m) * layer.running_var[c] + m * unbiased;
  }
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const Real xh = (x(r, c) - mean[c]) * inv_std[c];
      x_hat(r, c) = xh;
      out(r, c) = xh * layer.gamma.value[c] + layer.beta.value[c];
    }
  check_finite(out, "batchnorm");
  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

/// Returns dL/dx and accumulates dL/dgamma, dL/dbeta into the layer.
template <typename Real>
BasicTensor<Real> batchnorm_backward(const BasicTensor<Real>& grad_out, const BatchNormCache<Real>& cache,
                                     BatchNormLayer<Real>& layer) {
  const std::size_t rows = grad_out.rows(), d = grad_out.cols();
  if (cache.x_hat.shape() != grad_out.shape()) throw DimensionError("batchnorm_backward: cache shape");
  BasicTensor<Real> dgamma(Shape{d}), dbeta(Shape{d}), sum_dxh(Shape{d}), sum_dxh_xh(Shape{d});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const Real g = grad_out(r, c), xh = cache.x_hat(r, c);
      dgamma[c] += g * xh;
      dbeta[c] += g;
      const Real dxh = g * layer.gamma.value[c];
      sum_dxh[c] += dxh;
      sum_dxh_xh[c] += dxh * xh;
    }
  layer.gamma.accumulate(dgamma);
  layer.beta.accumulate(dbeta);
  BasicTensor<Real> dx(grad_out.shape());
  const Real n = static_cast<Real>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const Real dxh = grad_out(r, c) * layer.gamma.value[c];
      dx(r, c) = cache.inv_std[c] / n * (n * dxh - sum_dxh[c] - cache.x_hat(r, c) * sum_dxh_xh[c]);
    }
  return dx;
}

}  // namespace sgf
