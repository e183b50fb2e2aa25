#pragma once

// Leaky integrate-and-fire layer, iterated over the leading time axis:
//
//   U[t] = H[t-1] + X[t]
//   S[t] = Hea(U[t] - u_th)            (Hea(0) = 1)
//   H[t] = v_reset * S[t] + beta * U[t] * (1 - S[t]),   H[-1] = v_reset
//
// The backward pass replaces dHea/du with the rectangular surrogate
// (1/a) * 1{|u - u_th| < a/2}. The "relaxed" forward swaps Hea for that
// surrogate's integral, a clamped ramp, and is what finite-difference
// gradient checks differentiate.

#include <cmath>
#include <string>

#include "spikegraphormer/errors.hpp"
#include "spikegraphormer/tensor.hpp"

namespace sgf {

struct LifParams {
  double u_th = 1.0;
  double v_reset = 0.0;
  double beta = 0.5;
  double surrogate_width = 1.0;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("lif: beta must lie in (0, 1)");
    if (!(u_th > v_reset)) throw ConfigError("lif: threshold must exceed the reset potential");
    if (!(surrogate_width > 0.0)) throw ConfigError("lif: surrogate width must be positive");
  }
};

enum class SpikeMode { binary, relaxed };

/// Derivative of the spike nonlinearity used in backward.
inline double surrogate_grad(double u, const LifParams& p) {
  const double a = p.surrogate_width;
  return std::abs(u - p.u_th) < a / 2.0 ? 1.0 / a : 0.0;
}

/// Integral of surrogate_grad: the relaxed spike value in [0, 1].
inline double surrogate_ramp(double u, const LifParams& p) {
  const double a = p.surrogate_width;
  const double r = (u - p.u_th) / a + 0.5;
  return r < 0.0 ? 0.0 : (r > 1.0 ? 1.0 : r);
}

template <typename Real>
struct LifOutput {
  SpikeTensor spikes;           // binary mode
  BasicTensor<Real> relaxed;    // relaxed mode: ramp values in [0, 1]
  BasicTensor<Real> membrane;   // U trace, same shape as the input (if kept)
};

namespace detail {
inline void check_lif_input(const Shape& s) {
  if (s.rank() != 3) throw DimensionError("lif expects [T x N x D] input, got " + s.str());
  if (s[0] < 1) throw DimensionError("lif needs at least one time step");
}
}  // namespace detail

template <typename Real>
LifOutput<Real> lif_forward(const BasicTensor<Real>& x, const LifParams& p, SpikeMode mode = SpikeMode::binary,
                            bool keep_membrane = true) {
  detail::check_lif_input(x.shape());
  check_finite(x, "lif input");
  const std::size_t t_steps = x.shape()[0];
  const std::size_t per_step = x.shape()[1] * x.shape()[2];
  const std::size_t d = x.shape()[2];
  LifOutput<Real> out;
  if (keep_membrane) out.membrane = BasicTensor<Real>(x.shape());
  if (mode == SpikeMode::binary)
    out.spikes = SpikeTensor(x.shape());
  else
    out.relaxed = BasicTensor<Real>(x.shape());

  const Real u_th = static_cast<Real>(p.u_th), v_reset = static_cast<Real>(p.v_reset);
  const Real beta = static_cast<Real>(p.beta);
  BasicTensor<Real> h(Shape{per_step}, v_reset);
  for (std::size_t t = 0; t < t_steps; ++t) {
    const Real* xt = x.data() + t * per_step;
    for (std::size_t i = 0; i < per_step; ++i) {
      const Real u = h[i] + xt[i];
      if (keep_membrane) out.membrane[t * per_step + i] = u;
      Real s;
      if (mode == SpikeMode::binary) {
        const bool fire = u >= u_th;
        if (fire) out.spikes.set(t * (per_step / d) + i / d, i % d, true);
        s = fire ? Real(1) : Real(0);
        h[i] = fire ? v_reset : beta * u;
      } else {
        s = static_cast<Real>(surrogate_ramp(static_cast<double>(u), p));
        out.relaxed[t * per_step + i] = s;
        h[i] = v_reset * s + beta * u * (Real(1) - s);
      }
    }
  }
  return out;
}

/// Backpropagation through time; grad_out is dL/dS, returns dL/dX.
/// The reset recurrence is differentiated exactly, with dS/dU taken
/// from the surrogate.
template <typename Real>
BasicTensor<Real> lif_backward(const BasicTensor<Real>& grad_out, const BasicTensor<Real>& membrane,
                               const LifParams& p, SpikeMode mode = SpikeMode::binary) {
  if (grad_out.shape() != membrane.shape())
    throw DimensionError("lif_backward: gradient " + grad_out.shape().str() + " vs trace " +
                         membrane.shape().str());
  detail::check_lif_input(membrane.shape());
  const std::size_t t_steps = membrane.shape()[0];
  const std::size_t per_step = membrane.shape()[1] * membrane.shape()[2];
  const Real u_th = static_cast<Real>(p.u_th), v_reset = static_cast<Real>(p.v_reset);
  const Real beta = static_cast<Real>(p.beta);
  BasicTensor<Real> grad_in(membrane.shape());
  BasicTensor<Real> grad_h(Shape{per_step});  // dL/dH[t], zero past the last step
  for (std::size_t tt = t_steps; tt-- > 0;) {
    for (std::size_t i = 0; i < per_step; ++i) {
      const std::size_t idx = tt * per_step + i;
      const Real u = membrane[idx];
      const Real s = mode == SpikeMode::binary ? (u >= u_th ? Real(1) : Real(0))
                                               : static_cast<Real>(surrogate_ramp(static_cast<double>(u), p));
      const Real ds = static_cast<Real>(surrogate_grad(static_cast<double>(u), p));
      const Real gh = grad_h[i];
      const Real gu = (grad_out[idx] + gh * (v_reset - beta * u)) * ds + gh * beta * (Real(1) - s);
      grad_in[idx] = gu;
      grad_h[i] = gu;
    }
  }
  return grad_in;
}

/// Stacks T copies of x [N x D] into [T x N x D].
template <typename Real>
BasicTensor<Real> repeat_time(const BasicTensor<Real>& x, std::size_t t_steps) {
  if (t_steps == 0) throw DimensionError("repeat_time: T must be at least 1");
  if (x.shape().rank() != 2) throw DimensionError("repeat_time expects [N x D], got " + x.shape().str());
  BasicTensor<Real> out(Shape{t_steps, x.shape()[0], x.shape()[1]});
  for (std::size_t t = 0; t < t_steps; ++t)
    std::copy(x.data(), x.data() + x.size(), out.data() + t * x.size());
  return out;
}

}  // namespace sgf
