#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spikegraphormer/layers.hpp"

namespace sgf {

/// Textbook Adam with bias correction and no weight decay. Moment buffers
/// are created lazily in parameter-visit order.
template <typename Real>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<BasicTensor<Real>> m;
  std::vector<BasicTensor<Real>> v;
};

/// One update over `params` (matched positionally with the state's
/// moments). A non-finite gradient aborts before anything is modified.
template <typename Real>
void adam_step(std::vector<Parameter<Real>*>& params, AdamState<Real>& state, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<Real>& p = *params[i];
    if (p.grad.shape() != p.value.shape()) throw DimensionError("adam: gradient shape differs from parameter");
    if (!all_finite(p.grad)) throw NumericError("adam: non-finite gradient in parameter #" + std::to_string(i));
  }
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.shape());
      state.v.emplace_back(p->value.shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam: parameter count changed");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<Real>& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = p.grad[j];
      const double mj = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      const double vj = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      m[j] = static_cast<Real>(mj);
      v[j] = static_cast<Real>(vj);
      const double m_hat = mj / bc1, v_hat = vj / bc2;
      p.value[j] = static_cast<Real>(p.value[j] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

}  // namespace sgf
