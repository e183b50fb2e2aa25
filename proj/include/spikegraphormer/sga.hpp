#pragma once

// Spiking graph attention.
//
// Q, K, V are binary [T x N x D] spike tensors. For every time step t and
// channel i the attention reduces to
//
//   c[t,i] = sum_n K[t,n,i] AND V[t,n,i]          (a column count)
//   m[t,:] = LIF over t of c[:, head]              (binary per-head mask)
//   out[t,n,i] = Q[t,n,i] AND m[t, head(i)]
//
// so the whole layer is O(T*N*D) and allocates nothing of size N x N.
// With heads == D every channel is its own head; with fewer heads the
// counts of a head's channels are summed before the mask neuron.

#include <bit>
#include <cstdint>
#include <memory>
#include <vector>

#include "spikegraphormer/autograd.hpp"
#include "spikegraphormer/layers.hpp"
#include "spikegraphormer/lif.hpp"
#include "spikegraphormer/tensor.hpp"

namespace sgf {

template <typename Real>
struct SgaLayer {
  LinearLayer<Real> lin_q, lin_k, lin_v;
  BatchNormLayer<Real> bn_q, bn_k, bn_v;
  LifParams lif_in, lif_q, lif_k, lif_v, lif_attn;
  std::size_t heads = 0;

  SgaLayer() = default;
  SgaLayer(std::size_t d, std::size_t n_heads, Rng& rng, const LifParams& lif = {})
      : lin_q(d, d, rng), lin_k(d, d, rng), lin_v(d, d, rng), bn_q(d), bn_k(d), bn_v(d), lif_in(lif), lif_q(lif),
        lif_k(lif), lif_v(lif), lif_attn(lif), heads(n_heads == 0 ? d : n_heads) {
    if (d % heads != 0) throw ConfigError("sga: heads must divide the embedding dimension");
  }

  std::size_t dim() const { return lin_q.in_dim(); }

  template <typename Other>
  SgaLayer<Other> cast() const {
    SgaLayer<Other> o;
    o.lin_q = lin_q.template cast<Other>();
    o.lin_k = lin_k.template cast<Other>();
    o.lin_v = lin_v.template cast<Other>();
    o.bn_q = bn_q.template cast<Other>();
    o.bn_k = bn_k.template cast<Other>();
    o.bn_v = bn_v.template cast<Other>();
    o.lif_in = lif_in;
    o.lif_q = lif_q;
    o.lif_k = lif_k;
    o.lif_v = lif_v;
    o.lif_attn = lif_attn;
    o.heads = heads;
    return o;
  }
};

struct AttnCounters {
  std::uint64_t additions = 0;
  double spike_density_q = 0.0;
  double spike_density_k = 0.0;
  double spike_density_v = 0.0;
  double mask_fire_rate = 0.0;
};

namespace detail {
inline std::size_t resolve_heads(std::size_t heads, std::size_t d) {
  const std::size_t h = heads == 0 ? d : heads;
  if (h == 0 || d % h != 0) throw DimensionError("sga: heads must divide the channel count");
  return h;
}
}  // namespace detail

/// Adds per-channel counts of K AND V into `counts` ([T x D], row-major).
/// Returns the number of additions performed (one per coincident spike).
/// Exposed so full-graph inference can accumulate over node chunks.
inline std::uint64_t accumulate_kv_counts(const SpikeTensor& k, const SpikeTensor& v,
                                          std::vector<std::uint64_t>& counts) {
  if (!(k.shape() == v.shape())) throw DimensionError("sga: K and V shapes differ");
  detail::require_time_major(k.shape(), "sga");
  const std::size_t t_steps = k.shape()[0], n = k.shape()[1], d = k.shape()[2];
  if (counts.size() != t_steps * d) throw DimensionError("sga: count buffer size");
  const std::size_t wpr = k.words_per_row();
  std::uint64_t adds = 0;
  for (std::size_t t = 0; t < t_steps; ++t) {
    std::uint64_t* ct = counts.data() + t * d;
    for (std::size_t i = 0; i < n; ++i) {
      const auto* kw = k.row_words(t * n + i);
      const auto* vw = v.row_words(t * n + i);
      for (std::size_t w = 0; w < wpr; ++w) {
        std::uint64_t bits = kw[w] & vw[w];
        while (bits) {
          ++ct[w * SpikeTensor::kWordBits + static_cast<std::size_t>(std::countr_zero(bits))];
          ++adds;
          bits &= bits - 1;
        }
      }
    }
  }
  count_adds(adds);
  return adds;
}

/// Per-head mask from channel counts: sums channels within each head and
/// runs the mask neuron over the time axis. Returns a [T x 1 x D] spike
/// tensor (each head's bit replicated over its channels), the per-head
/// membrane trace [T x 1 x H] and the number of additions performed.
struct MaskResult {
  SpikeTensor mask;       // [T x 1 x D]
  Tensor head_counts;     // [T x 1 x H]
  Tensor membrane;        // [T x 1 x H]
  std::uint64_t additions = 0;
};

inline MaskResult attention_mask(const std::vector<std::uint64_t>& counts, std::size_t t_steps, std::size_t d,
                                 std::size_t heads, const LifParams& lif_attn) {
  const std::size_t h = detail::resolve_heads(heads, d);
  const std::size_t per_head = d / h;
  MaskResult r;
  r.head_counts = Tensor(Shape{t_steps, 1, h});
  // Head sums as exact integers; D - H additions per step.
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t g = 0; g < h; ++g) {
      std::uint64_t s = 0;
      for (std::size_t i = 0; i < per_head; ++i) s += counts[t * d + g * per_head + i];
      r.head_counts(t, 0, g) = static_cast<float>(s);
    }
  r.additions = t_steps * (d - h);
  LifOutput<float> m = lif_forward(r.head_counts, lif_attn, SpikeMode::binary, true);
  r.additions += t_steps * h;  // membrane integration
  r.membrane = std::move(m.membrane);
  r.mask = SpikeTensor(Shape{t_steps, 1, d});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t g = 0; g < h; ++g)
      if (m.spikes.get(t, g))
        for (std::size_t i = 0; i < per_head; ++i) r.mask.set(t, g * per_head + i, true);
  count_adds(r.additions);
  return r;
}

/// out = Q AND mask, word by word (mask broadcast over nodes).
inline SpikeTensor apply_mask(const SpikeTensor& q, const SpikeTensor& mask) {
  detail::require_time_major(q.shape(), "sga");
  const std::size_t t_steps = q.shape()[0], n = q.shape()[1];
  if (mask.shape()[0] != t_steps || mask.cols() != q.cols()) throw DimensionError("sga: mask shape");
  SpikeTensor out(q.shape());
  const std::size_t wpr = q.words_per_row();
  for (std::size_t t = 0; t < t_steps; ++t) {
    const auto* mw = mask.row_words(t);
    for (std::size_t i = 0; i < n; ++i) {
      const auto* qw = q.row_words(t * n + i);
      auto* ow = out.row_words(t * n + i);
      for (std::size_t w = 0; w < wpr; ++w) ow[w] = qw[w] & mw[w];
    }
  }
  return out;
}

struct SgaAttention {
  SpikeTensor out;
  AttnCounters counters;
  MaskResult mask;
};

/// Binary attention core: counts, mask neuron, masking. Additions and bit
/// operations only.
inline SgaAttention sga_attend(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                               const LifParams& lif_attn, std::size_t heads = 0) {
  if (!(q.shape() == k.shape()) || !(q.shape() == v.shape()))
    throw DimensionError("sga_attend: Q, K, V shapes differ");
  detail::require_time_major(q.shape(), "sga_attend");
  const std::size_t t_steps = q.shape()[0], d = q.shape()[2];
  std::vector<std::uint64_t> counts(t_steps * d, 0);
  SgaAttention r;
  r.counters.additions = accumulate_kv_counts(k, v, counts);
  r.mask = attention_mask(counts, t_steps, d, heads, lif_attn);
  r.counters.additions += r.mask.additions;
  r.out = apply_mask(q, r.mask.mask);
  r.counters.spike_density_q = q.density();
  r.counters.spike_density_k = k.density();
  r.counters.spike_density_v = v.density();
  r.counters.mask_fire_rate = r.mask.mask.density();
  return r;
}

/// Gradients of the attention core with respect to Q, K, V, computed on
/// dense values (0/1 in binary mode, ramps in relaxed mode).
template <typename Real>
struct SgaAttendGrads {
  BasicTensor<Real> dq, dk, dv;
};

template <typename Real>
SgaAttendGrads<Real> sga_attend_backward(const BasicTensor<Real>& grad_out, const BasicTensor<Real>& q,
                                         const BasicTensor<Real>& k, const BasicTensor<Real>& v,
                                         const BasicTensor<Real>& mask_heads,     // [T x 1 x H]
                                         const BasicTensor<Real>& mask_membrane,  // [T x 1 x H]
                                         const LifParams& lif_attn, SpikeMode mode) {
  const std::size_t t_steps = q.shape()[0], n = q.shape()[1], d = q.shape()[2];
  const std::size_t h = mask_heads.shape()[2], per_head = d / h;
  SgaAttendGrads<Real> g{BasicTensor<Real>(q.shape()), BasicTensor<Real>(k.shape()), BasicTensor<Real>(v.shape())};
  BasicTensor<Real> dm(mask_heads.shape());
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        const Real go = grad_out(t, i, c);
        g.dq(t, i, c) = go * mask_heads(t, 0, c / per_head);
        dm(t, 0, c / per_head) += go * q(t, i, c);
      }
  const BasicTensor<Real> dc = lif_backward(dm, mask_membrane, lif_attn, mode);
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        const Real gc = dc(t, 0, c / per_head);
        g.dk(t, i, c) = gc * v(t, i, c);
        g.dv(t, i, c) = gc * k(t, i, c);
      }
  return g;
}

namespace ag {

/// Differentiable attention core. Binary mode runs the packed kernel;
/// relaxed mode evaluates the same formula on ramp values.
template <typename Real>
Var<Real> sga_attend(Tape<Real>& tape, const Var<Real>& q, const Var<Real>& k, const Var<Real>& v,
                     const LifParams& lif_attn, std::size_t heads, AttnCounters* counters = nullptr) {
  const SpikeMode mode = tape.mode();
  const Shape shape = q.shape();
  detail::require_time_major(shape, "sga_attend");
  const std::size_t t_steps = shape[0], n = shape[1], d = shape[2];
  const std::size_t h = detail::resolve_heads(heads, d), per_head = d / h;

  auto mask_heads = std::make_shared<BasicTensor<Real>>(Shape{t_steps, 1, h});
  auto mask_membrane = std::make_shared<BasicTensor<Real>>();
  NodePtr<Real> node;
  if (mode == SpikeMode::binary) {
    if (!q.is_packed() || !k.is_packed() || !v.is_packed())
      throw NumericError("sga_attend: binary mode requires spike inputs");
    SgaAttention r = sgf::sga_attend(q.spikes(), k.spikes(), v.spikes(), lif_attn, h);
    if (counters) *counters = r.counters;
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t g = 0; g < h; ++g) (*mask_heads)(t, 0, g) = r.mask.mask.get(t, g * per_head) ? 1 : 0;
    *mask_membrane = r.mask.membrane.template cast<Real>();
    node = tape.make_spikes(std::move(r.out));
  } else {
    const BasicTensor<Real> kv = k.dense(), vv = v.dense(), qv = q.dense();
    BasicTensor<Real> c(Shape{t_steps, 1, h});
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < d; ++ch) c(t, 0, ch / per_head) += kv(t, i, ch) * vv(t, i, ch);
    LifOutput<Real> m = lif_forward(c, lif_attn, SpikeMode::relaxed, true);
    *mask_heads = m.relaxed;
    *mask_membrane = std::move(m.membrane);
    BasicTensor<Real> out(shape);
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < d; ++ch) out(t, i, ch) = qv(t, i, ch) * (*mask_heads)(t, 0, ch / per_head);
    node = tape.make_relaxed_spikes(std::move(out));
  }
  auto qn = q.node(), kn = k.node(), vn = v.node();
  Var<Real> out =
      tape.record(std::move(node), [qn, kn, vn, mask_heads, mask_membrane, lif_attn, mode](Node<Real>& self) {
        auto grads = sga_attend_backward(self.grad, qn->dense(), kn->dense(), vn->dense(), *mask_heads,
                                         *mask_membrane, lif_attn, mode);
        if (qn->needs_grad) qn->add_grad(grads.dq);
        if (kn->needs_grad) kn->add_grad(grads.dk);
        if (vn->needs_grad) vn->add_grad(grads.dv);
      });
  tape.notify_spikes("attn", out);
  return out;
}

template <typename Real>
struct QkvVars {
  Var<Real> q, k, v;
};

/// Spike-form Q, K, V from spikes s: lif(bn(spike_linear(s))).
template <typename Real>
QkvVars<Real> sga_qkv_from_spikes(Tape<Real>& tape, const Var<Real>& s, SgaLayer<Real>& layer) {
  QkvVars<Real> r;
  r.q = lif(tape, batchnorm(tape, linear(tape, s, layer.lin_q), layer.bn_q), layer.lif_q, "q");
  r.k = lif(tape, batchnorm(tape, linear(tape, s, layer.lin_k), layer.bn_k), layer.lif_k, "k");
  r.v = lif(tape, batchnorm(tape, linear(tape, s, layer.lin_v), layer.bn_v), layer.lif_v, "v");
  return r;
}

/// Full SGA from membrane input u: s = lif_in(u), then Q/K/V and the core.
template <typename Real>
Var<Real> sga(Tape<Real>& tape, const Var<Real>& u, SgaLayer<Real>& layer, AttnCounters* counters = nullptr) {
  Var<Real> s = lif(tape, u, layer.lif_in, "sga_in");
  QkvVars<Real> qkv = sga_qkv_from_spikes(tape, s, layer);
  return sga_attend(tape, qkv.q, qkv.k, qkv.v, layer.lif_attn, layer.heads, counters);
}

}  // namespace ag

/// Spike-form Q, K, V for membrane input u [T x N x D] (binary mode).
struct QkvSpikes {
  SpikeTensor q, k, v;
};

inline QkvSpikes sga_qkv(const Tensor& u, SgaLayer<float>& layer, bool training = false) {
  ag::Tape<float> tape(false);
  tape.training = training;
  auto s = ag::lif(tape, tape.constant(u), layer.lif_in);
  auto r = ag::sga_qkv_from_spikes(tape, s, layer);
  return {r.q.spikes(), r.k.spikes(), r.v.spikes()};
}

}  // namespace sgf
