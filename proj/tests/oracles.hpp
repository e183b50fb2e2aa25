#pragma once

// Loop-level reference implementations shared by the unit tests and the
// acceptance runner.

#include <array>
#include <utility>
#include <vector>

#include "test_util.hpp"

namespace sgf::testing {

// Literal per-element evaluation: count K AND V per head, run the scalar
// neuron over t, then AND the mask into Q.
inline SpikeTensor attend_oracle(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, const LifParams& p,
                          std::size_t heads) {
  const std::size_t t_steps = q.shape()[0], n = q.shape()[1], d = q.shape()[2];
  const std::size_t h = heads == 0 ? d : heads, per = d / h;
  SpikeTensor out(q.shape());
  for (std::size_t g = 0; g < h; ++g) {
    double carry = p.v_reset;
    for (std::size_t t = 0; t < t_steps; ++t) {
      double c = 0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch)
          if (k.get(t * n + i, ch) && v.get(t * n + i, ch)) c += 1;
      const double u = carry + c;
      const bool fire = u >= p.u_th;
      carry = fire ? p.v_reset : p.beta * u;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = g * per; ch < (g + 1) * per; ++ch)
          out.set(t * n + i, ch, fire && q.get(t * n + i, ch));
    }
  }
  return out;
}

struct AttentionInstance {
  SpikeTensor q, k, v;
  LifParams lif;
  std::size_t heads;
};

/// T in {1, 2, 4}, N <= 32, D <= 16, sparse K/V, random threshold and a
/// random divisor of D as the head count.
inline AttentionInstance random_attention_instance(Rng& rng) {
  const std::size_t t = std::array<std::size_t, 3>{1, 2, 4}[rng.below(3)];
  const std::size_t n = 1 + rng.below(32), d = 1 + rng.below(16);
  const Shape s{t, n, d};
  const double rho = rng.uniform(0.0, 0.4);
  AttentionInstance r;
  r.q = random_spikes(s, rng, rng.uniform());
  r.k = random_spikes(s, rng, rho);
  r.v = random_spikes(s, rng, rho);
  r.lif.u_th = rng.uniform(0.5, 4.0);
  std::vector<std::size_t> divisors;
  for (std::size_t h = 1; h <= d; ++h)
    if (d % h == 0) divisors.push_back(h);
  r.heads = divisors[rng.below(divisors.size())];
  return r;
}

/// Dense product of the unpacked 0/1 matrix with `w`, plus bias, through
/// the reference triple loop.
inline Tensor dense_spike_product(const SpikeTensor& s, const Tensor& w, const Tensor* bias) {
  Tensor out = naive_matmul(s.unpack<float>().reshaped(Shape{s.rows(), s.cols()}), w);
  if (bias)
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t j = 0; j < out.cols(); ++j) out(r, j) += (*bias)[j];
  return std::move(out).reshaped(s.shape().with_cols(w.cols()));
}

}  // namespace sgf::testing
