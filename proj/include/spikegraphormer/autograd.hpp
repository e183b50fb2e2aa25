#pragma once

// Minimal reverse-mode differentiation over tensors.
//
// A Tape records op nodes in creation order while recording is on; the
// reverse of that order is a valid topological order for backward. With
// recording off no node keeps references to its inputs, so intermediates
// are released as soon as the caller drops them (streaming inference).
//
// Spike-valued nodes hold a packed SpikeTensor in binary mode and a dense
// tensor of relaxed (ramp) values in relaxed mode. Backward formulas are
// written once against dense values and serve both modes.

#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spikegraphormer/layers.hpp"
#include "spikegraphormer/lif.hpp"
#include "spikegraphormer/rng.hpp"
#include "spikegraphormer/tensor.hpp"

namespace sgf::ag {

template <typename Real>
struct Node {
  BasicTensor<Real> value;  // dense value, or relaxed spikes
  SpikeTensor spikes;       // binary spikes (packed)
  bool packed = false;
  bool spike = false;
  bool needs_grad = false;
  BasicTensor<Real> grad;
  std::function<void(Node&)> backward;

  const Shape& shape() const { return packed ? spikes.shape() : value.shape(); }

  BasicTensor<Real> dense() const { return packed ? spikes.template unpack<Real>() : value; }

  void add_grad(const BasicTensor<Real>& g) {
    if (grad.empty()) {
      grad = g.reshaped(shape());
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
  }
};

template <typename Real>
using NodePtr = std::shared_ptr<Node<Real>>;

template <typename Real>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<Real> n) : node_(std::move(n)) {}

  const NodePtr<Real>& node() const { return node_; }
  const Shape& shape() const { return node_->shape(); }
  bool is_spike() const { return node_->spike; }
  bool is_packed() const { return node_->packed; }
  const BasicTensor<Real>& value() const { return node_->value; }
  const SpikeTensor& spikes() const { return node_->spikes; }
  BasicTensor<Real> dense() const { return node_->dense(); }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  NodePtr<Real> node_;
};

template <typename Real>
class Tape {
 public:
  using SpikeHook = std::function<void(std::string_view site, const Var<Real>&)>;

  explicit Tape(bool recording = true, SpikeMode mode = SpikeMode::binary) : recording_(recording), mode_(mode) {}

  bool recording() const { return recording_; }
  SpikeMode mode() const { return mode_; }

  bool training = false;
  Rng* rng = nullptr;
  SpikeHook spike_hook;
  std::string site_prefix;  // prepended to spike-site names passed to the hook

  Var<Real> constant(BasicTensor<Real> v) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(v);
    return Var<Real>(n);
  }

  NodePtr<Real> make_dense(BasicTensor<Real> v) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(v);
    return n;
  }

  NodePtr<Real> make_spikes(SpikeTensor s) {
    auto n = std::make_shared<Node<Real>>();
    n->spikes = std::move(s);
    n->packed = true;
    n->spike = true;
    return n;
  }

  NodePtr<Real> make_relaxed_spikes(BasicTensor<Real> v) {
    auto n = make_dense(std::move(v));
    n->spike = true;
    return n;
  }

  /// Attaches a backward closure and puts the node on the tape. No-op when
  /// recording is off.
  Var<Real> record(NodePtr<Real> n, std::function<void(Node<Real>&)> fn) {
    if (recording_) {
      n->needs_grad = true;
      n->backward = std::move(fn);
      nodes_.push_back(n);
    }
    return Var<Real>(std::move(n));
  }

  void notify_spikes(std::string_view site, const Var<Real>& v) {
    if (!spike_hook) return;
    if (site_prefix.empty())
      spike_hook(site, v);
    else
      spike_hook(site_prefix + std::string(site), v);
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  /// Node gradients and values are released once consumed.
  void backward(const Var<Real>& loss) {
    if (!recording_) throw std::logic_error("backward on a non-recording tape");
    if (loss.shape().numel() != 1) throw DimensionError("backward needs a scalar loss");
    loss.node()->grad = BasicTensor<Real>(loss.shape(), Real(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<Real>& n = **it;
      if (!n.grad.empty() && n.backward) n.backward(n);
      n.backward = nullptr;
      n.grad = BasicTensor<Real>();
    }
    nodes_.clear();
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  bool recording_;
  SpikeMode mode_;
  std::vector<NodePtr<Real>> nodes_;
};

// ---------------------------------------------------------------------------
// Generic ops.

template <typename Real>
Var<Real> linear(Tape<Real>& tape, const Var<Real>& x, LinearLayer<Real>& layer) {
  BasicTensor<Real> out = x.is_packed() ? spike_linear(x.spikes(), layer.weight.value, layer.bias_ptr())
                                        : linear_forward(x.value(), layer);
  auto xn = x.node();
  return tape.record(tape.make_dense(std::move(out)), [xn, &layer](Node<Real>& self) {
    const BasicTensor<Real>& g = self.grad;
    const std::size_t out_dim = layer.out_dim();
    BasicTensor<Real> dw(layer.weight.value.shape());
    if (xn->packed) {
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const Real* gr = g.data() + r * out_dim;
        for_each_spike(xn->spikes, r, [&](std::size_t c) {
          Real* w = dw.data() + c * out_dim;
          for (std::size_t j = 0; j < out_dim; ++j) w[j] += gr[j];
        });
      }
    } else {
      dw = matmul_tn(xn->value, g);
    }
    layer.weight.accumulate(dw);
    if (layer.has_bias) {
      BasicTensor<Real> db(Shape{out_dim});
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t j = 0; j < out_dim; ++j) db[j] += g(r, j);
      layer.bias.accumulate(db);
    }
    if (xn->needs_grad) xn->add_grad(matmul_nt(g, layer.weight.value));
  });
}

template <typename Real>
Var<Real> batchnorm(Tape<Real>& tape, const Var<Real>& x, BatchNormLayer<Real>& layer) {
  const bool training = tape.training;
  auto cache = std::make_shared<BatchNormCache<Real>>();
  BasicTensor<Real> out =
      batchnorm_forward(x.value(), layer, training, training && tape.recording() ? cache.get() : nullptr);
  auto xn = x.node();
  return tape.record(tape.make_dense(std::move(out)), [xn, cache, training, &layer](Node<Real>& self) {
    if (!training) {
      // Running statistics are constants: the map is affine per channel.
      const std::size_t d = layer.dim();
      BasicTensor<Real> dgamma(Shape{d}), dbeta(Shape{d}), dx(self.grad.shape());
      for (std::size_t r = 0; r < self.grad.rows(); ++r)
        for (std::size_t c = 0; c < d; ++c) {
          const Real inv = Real(1) / std::sqrt(layer.running_var[c] + static_cast<Real>(layer.eps));
          const Real g = self.grad(r, c);
          dgamma[c] += g * (xn->value(r, c) - layer.running_mean[c]) * inv;
          dbeta[c] += g;
          dx(r, c) = g * layer.gamma.value[c] * inv;
        }
      layer.gamma.accumulate(dgamma);
      layer.beta.accumulate(dbeta);
      if (xn->needs_grad) xn->add_grad(dx);
      return;
    }
    BasicTensor<Real> dx = batchnorm_backward(self.grad, *cache, layer);
    if (xn->needs_grad) xn->add_grad(dx);
  });
}

/// LIF layer over a [T x N x D] membrane input; emits spikes.
template <typename Real>
Var<Real> lif(Tape<Real>& tape, const Var<Real>& x, const LifParams& p, std::string_view site = "lif") {
  const SpikeMode mode = tape.mode();
  LifOutput<Real> r = lif_forward(x.value(), p, mode, tape.recording());
  NodePtr<Real> n = mode == SpikeMode::binary ? tape.make_spikes(std::move(r.spikes))
                                              : tape.make_relaxed_spikes(std::move(r.relaxed));
  auto xn = x.node();
  auto membrane = std::make_shared<BasicTensor<Real>>(std::move(r.membrane));
  Var<Real> out = tape.record(std::move(n), [xn, membrane, p, mode](Node<Real>& self) {
    if (xn->needs_grad) xn->add_grad(lif_backward(self.grad, *membrane, p, mode));
  });
  tape.notify_spikes(site, out);
  return out;
}

template <typename Real>
Var<Real> repeat_time(Tape<Real>& tape, const Var<Real>& x, std::size_t t_steps) {
  auto xn = x.node();
  return tape.record(tape.make_dense(sgf::repeat_time(x.value(), t_steps)), [xn, t_steps](Node<Real>& self) {
    if (!xn->needs_grad) return;
    const std::size_t slice = xn->value.size();
    BasicTensor<Real> g(xn->value.shape());
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < slice; ++i) g[i] += self.grad[t * slice + i];
    xn->add_grad(g);
  });
}

/// Elementwise sum of two same-shaped tensors; either side may be spikes.
template <typename Real>
Var<Real> add(Tape<Real>& tape, const Var<Real>& a, const Var<Real>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("add: shapes " + a.shape().str() + " and " + b.shape().str());
  BasicTensor<Real> out;
  if (a.is_packed() && !b.is_packed()) {
    out = b.value();
    for (std::size_t r = 0; r < out.rows(); ++r)
      for_each_spike(a.spikes(), r, [&](std::size_t c) { out(r, c) = Real(1) + out(r, c); });
  } else if (b.is_packed() && !a.is_packed()) {
    out = a.value();
    for (std::size_t r = 0; r < out.rows(); ++r)
      for_each_spike(b.spikes(), r, [&](std::size_t c) { out(r, c) += Real(1); });
  } else {
    out = sgf::add(a.dense(), b.dense());
  }
  check_finite(out, "add");
  auto an = a.node(), bn = b.node();
  return tape.record(tape.make_dense(std::move(out)), [an, bn](Node<Real>& self) {
    if (an->needs_grad) an->add_grad(self.grad);
    if (bn->needs_grad) bn->add_grad(self.grad);
  });
}

template <typename Real>
Var<Real> scale(Tape<Real>& tape, const Var<Real>& x, Real c) {
  BasicTensor<Real> out = x.dense();
  for (auto& v : out.values()) v *= c;
  auto xn = x.node();
  return tape.record(tape.make_dense(std::move(out)), [xn, c](Node<Real>& self) {
    if (!xn->needs_grad) return;
    BasicTensor<Real> g = self.grad;
    for (auto& v : g.values()) v *= c;
    xn->add_grad(g);
  });
}

/// Mean over the leading time axis: [T x N x D] -> [N x D].
template <typename Real>
Var<Real> mean_time(Tape<Real>& tape, const Var<Real>& s) {
  const Shape& sh = s.shape();
  if (sh.rank() != 3) throw DimensionError("mean_time expects [T x N x D]");
  const std::size_t t_steps = sh[0], slice = sh[1] * sh[2];
  BasicTensor<Real> out(Shape{sh[1], sh[2]});
  if (s.is_packed()) {
    const std::size_t d = sh[2];
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t n = 0; n < sh[1]; ++n)
        for_each_spike(s.spikes(), t * sh[1] + n, [&](std::size_t c) { out[n * d + c] += Real(1); });
  } else {
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < slice; ++i) out[i] += s.value()[t * slice + i];
  }
  const Real inv = Real(1) / static_cast<Real>(t_steps);
  for (auto& v : out.values()) v *= inv;
  auto sn = s.node();
  return tape.record(tape.make_dense(std::move(out)), [sn, t_steps, slice, inv](Node<Real>& self) {
    if (!sn->needs_grad) return;
    BasicTensor<Real> g(sn->shape());
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < slice; ++i) g[t * slice + i] = self.grad[i] * inv;
    sn->add_grad(g);
  });
}

/// [N x A] ++ [N x B] -> [N x (A+B)].
template <typename Real>
Var<Real> concat_cols(Tape<Real>& tape, const Var<Real>& a, const Var<Real>& b) {
  const BasicTensor<Real> av = a.dense(), bv = b.dense();
  if (av.rows() != bv.rows()) throw DimensionError("concat_cols: row counts differ");
  const std::size_t ca = av.cols(), cb = bv.cols(), rows = av.rows();
  BasicTensor<Real> out(Shape{rows, ca + cb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(av.row(r).begin(), av.row(r).end(), out.data() + r * (ca + cb));
    std::copy(bv.row(r).begin(), bv.row(r).end(), out.data() + r * (ca + cb) + ca);
  }
  auto an = a.node(), bn = b.node();
  return tape.record(tape.make_dense(std::move(out)), [an, bn, ca, cb, rows](Node<Real>& self) {
    BasicTensor<Real> ga(Shape{rows, ca}), gb(Shape{rows, cb});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < ca; ++j) ga(r, j) = self.grad(r, j);
      for (std::size_t j = 0; j < cb; ++j) gb(r, j) = self.grad(r, ca + j);
    }
    if (an->needs_grad) an->add_grad(ga);
    if (bn->needs_grad) bn->add_grad(gb);
  });
}

/// Inverted dropout; identity outside training mode or at rate 0.
template <typename Real>
Var<Real> dropout(Tape<Real>& tape, const Var<Real>& x, double rate) {
  if (!tape.training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be below 1");
  if (!tape.rng) throw std::logic_error("dropout in training mode needs an rng");
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  auto keep = std::make_shared<BasicTensor<Real>>(x.shape());
  BasicTensor<Real> out = x.dense();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real m = tape.rng->uniform() >= rate ? keep_scale : Real(0);
    (*keep)[i] = m;
    out[i] *= m;
  }
  auto xn = x.node();
  return tape.record(tape.make_dense(std::move(out)), [xn, keep](Node<Real>& self) {
    if (!xn->needs_grad) return;
    BasicTensor<Real> g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= (*keep)[i];
    xn->add_grad(g);
  });
}

template <typename Real>
Var<Real> relu(Tape<Real>& tape, const Var<Real>& x) {
  BasicTensor<Real> out = x.value();
  for (auto& v : out.values()) v = v > Real(0) ? v : Real(0);
  auto xn = x.node();
  return tape.record(tape.make_dense(std::move(out)), [xn](Node<Real>& self) {
    if (!xn->needs_grad) return;
    BasicTensor<Real> g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!(xn->value[i] > Real(0))) g[i] = Real(0);
    xn->add_grad(g);
  });
}

/// tanh-approximation GELU.
template <typename Real>
Var<Real> gelu(Tape<Real>& tape, const Var<Real>& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  BasicTensor<Real> out = x.value();
  for (auto& v : out.values()) {
    const double z = v;
    v = static_cast<Real>(0.5 * z * (1.0 + std::tanh(k * (z + 0.044715 * z * z * z))));
  }
  auto xn = x.node();
  return tape.record(tape.make_dense(std::move(out)), [xn](Node<Real>& self) {
    if (!xn->needs_grad) return;
    BasicTensor<Real> g = self.grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = xn->value[i];
      const double inner = k * (z + 0.044715 * z * z * z);
      const double th = std::tanh(inner);
      const double d = 0.5 * (1.0 + th) + 0.5 * z * (1.0 - th * th) * k * (1.0 + 3.0 * 0.044715 * z * z);
      g[i] = static_cast<Real>(g[i] * d);
    }
    xn->add_grad(g);
  });
}

}  // namespace sgf::ag
