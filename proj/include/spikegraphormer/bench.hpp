#pragma once

// Scaling harness: a dense softmax-attention baseline with the same block
// layout as the spiking encoder, wall-time / memory-proxy / op-count
// measurement per node count, and CSV output.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "spikegraphormer/data.hpp"
#include "spikegraphormer/loss.hpp"
#include "spikegraphormer/memory.hpp"
#include "spikegraphormer/model.hpp"
#include "spikegraphormer/optim.hpp"
#include "spikegraphormer/trainer.hpp"

namespace sgf {

template <typename Real>
struct VanillaAttention {
  LinearLayer<Real> lin_q, lin_k, lin_v;
  double scale = 1.0;

  VanillaAttention() = default;
  VanillaAttention(std::size_t d, Rng& rng)
      : lin_q(d, d, rng), lin_k(d, d, rng), lin_v(d, d, rng), scale(1.0 / std::sqrt(static_cast<double>(d))) {}
};

namespace ag {

/// softmax(q k^T * scale) v with an explicit [N x N] probability matrix,
/// kept for backward. Rows use max-subtraction before exponentiation.
template <typename Real>
Var<Real> softmax_attention(Tape<Real>& tape, const Var<Real>& q, const Var<Real>& k, const Var<Real>& v,
                            double scale) {
  if (q.shape().rank() != 2 || q.shape() != k.shape() || k.shape() != v.shape())
    throw DimensionError("softmax_attention: q, k, v must share an [N x D] shape");
  const std::size_t n = q.shape()[0];
  auto p = std::make_shared<BasicTensor<Real>>(matmul_nt(q.value(), k.value()));
  for (std::size_t i = 0; i < n; ++i) {
    Real* row = p->data() + i * n;
    Real mx = row[0] * static_cast<Real>(scale);
    for (std::size_t j = 0; j < n; ++j) {
      row[j] *= static_cast<Real>(scale);
      mx = std::max(mx, row[j]);
    }
    Real sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const Real inv = Real(1) / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
  }
  BasicTensor<Real> out = matmul(*p, v.value());
  auto qn = q.node(), kn = k.node(), vn = v.node();
  if (!tape.recording()) p.reset();
  return tape.record(tape.make_dense(std::move(out)), [qn, kn, vn, p, scale](Node<Real>& self) {
    const BasicTensor<Real>& go = self.grad;
    const std::size_t rows = p->rows();
    if (vn->needs_grad) vn->add_grad(matmul_tn(*p, go));
    // dS = P * (dP - rowsum(dP * P)), computed in place over dP.
    BasicTensor<Real> ds = matmul_nt(go, vn->value);
    for (std::size_t i = 0; i < rows; ++i) {
      Real* d = ds.data() + i * rows;
      const Real* pr = p->data() + i * rows;
      Real dot = 0;
      for (std::size_t j = 0; j < rows; ++j) dot += d[j] * pr[j];
      for (std::size_t j = 0; j < rows; ++j) d[j] = pr[j] * (d[j] - dot) * static_cast<Real>(scale);
    }
    if (qn->needs_grad) qn->add_grad(matmul(ds, kn->value));
    if (kn->needs_grad) kn->add_grad(matmul_tn(ds, qn->value));
  });
}

template <typename Real>
Var<Real> vanilla_attention(Tape<Real>& tape, const Var<Real>& x, VanillaAttention<Real>& layer) {
  return softmax_attention(tape, linear(tape, x, layer.lin_q), linear(tape, x, layer.lin_k),
                           linear(tape, x, layer.lin_v), layer.scale);
}

}  // namespace ag

/// Dense attention on plain tensors (inference).
template <typename Real>
BasicTensor<Real> vanilla_attend(const BasicTensor<Real>& x, VanillaAttention<Real>& layer) {
  ag::Tape<Real> tape(false);
  return ag::vanilla_attention(tape, tape.constant(x), layer).value();
}

/// Dense-activation counterpart of the spiking encoder: same residual and
/// MLP layout, GELU in place of spiking neurons, softmax attention.
struct VanillaTransformer {
  struct Block {
    VanillaAttention<float> attn;
    LinearLayer<float> mlp1, mlp2;
    BatchNormLayer<float> mlp_bn1, mlp_bn2;
  };

  LinearLayer<float> in_proj;
  BatchNormLayer<float> in_bn;
  std::vector<Block> blocks;
  LinearLayer<float> classifier;

  VanillaTransformer(std::size_t in_dim, std::size_t dim, std::size_t classes, std::size_t layers,
                     std::uint64_t seed) {
    Rng rng(seed);
    in_proj = LinearLayer<float>(in_dim, dim, rng);
    in_bn = BatchNormLayer<float>(dim);
    for (std::size_t l = 0; l < layers; ++l)
      blocks.push_back({VanillaAttention<float>(dim, rng), LinearLayer<float>(dim, dim, rng),
                        LinearLayer<float>(dim, dim, rng), BatchNormLayer<float>(dim), BatchNormLayer<float>(dim)});
    classifier = LinearLayer<float>(dim, classes, rng);
  }

  std::vector<Parameter<float>*> parameters() {
    std::vector<Parameter<float>*> out;
    auto lin = [&](LinearLayer<float>& l) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    };
    auto bn = [&](BatchNormLayer<float>& b) {
      out.push_back(&b.gamma);
      out.push_back(&b.beta);
    };
    lin(in_proj);
    bn(in_bn);
    for (auto& b : blocks) {
      lin(b.attn.lin_q);
      lin(b.attn.lin_k);
      lin(b.attn.lin_v);
      lin(b.mlp1);
      bn(b.mlp_bn1);
      lin(b.mlp2);
      bn(b.mlp_bn2);
    }
    lin(classifier);
    return out;
  }
};

namespace ag {

inline Var<float> forward(Tape<float>& tape, VanillaTransformer& m, const Tensor& x, OpCounts* attention_ops = nullptr) {
  Var<float> h = batchnorm(tape, linear(tape, tape.constant(x), m.in_proj), m.in_bn);
  for (auto& b : m.blocks) {
    CounterScope scope;
    Var<float> a = vanilla_attention(tape, h, b.attn);
    if (attention_ops) *attention_ops += scope.delta();
    h = add(tape, a, h);
    Var<float> mlp = batchnorm(tape, linear(tape, gelu(tape, batchnorm(tape, linear(tape, h, b.mlp1), b.mlp_bn1)), b.mlp2),
                               b.mlp_bn2);
    h = add(tape, mlp, h);
  }
  return linear(tape, h, m.classifier);
}

}  // namespace ag

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("loglog_slope: need two or more paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

struct BenchRow {
  std::string method;
  std::size_t n = 0, d = 0, t = 0;
  bool oom = false;
  double forward_ms = 0, train_step_ms = 0;
  std::size_t mem_bytes = 0;
  std::uint64_t adds = 0, muls = 0;
  double spike_density = 0;
  std::vector<double> forward_samples, train_samples;
};

struct BenchReport {
  std::vector<BenchRow> rows;

  std::vector<const BenchRow*> method_rows(const std::string& method) const {
    std::vector<const BenchRow*> out;
    for (const auto& r : rows)
      if (r.method == method) out.push_back(&r);
    return out;
  }

  std::string csv() const {
    std::string out = "method,n,d,t,forward_ms,train_step_ms,mem_bytes,adds,muls,spike_density\n";
    char buf[64];
    for (const auto& r : rows) {
      out += r.method + ',' + std::to_string(r.n) + ',' + std::to_string(r.d) + ',' + std::to_string(r.t) + ',';
      if (r.oom) {
        out += "OOM,OOM,OOM,OOM,OOM,OOM\n";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.3f,%.3f,", r.forward_ms, r.train_step_ms);
      out += buf;
      out += std::to_string(r.mem_bytes) + ',' + std::to_string(r.adds) + ',' + std::to_string(r.muls) + ',';
      std::snprintf(buf, sizeof buf, "%.4f\n", r.spike_density);
      out += buf;
    }
    return out;
  }
};

struct BenchConfig {
  std::vector<std::string> methods = {"sga", "vanilla"};
  std::vector<std::size_t> n_list = {1024, 2048, 4096, 8192};
  std::size_t d = 64;
  std::size_t t_steps = 1;
  std::size_t repeats = 5;
  std::uint64_t seed = 0;
  std::size_t classes = 4;
  std::size_t mem_cap = 0;  // bytes; 0 = uncapped

  void validate() const {
    if (methods.empty()) throw ConfigError("bench: no methods");
    for (const auto& m : methods)
      if (m != "sga" && m != "vanilla") throw ConfigError("bench: unknown method '" + m + "'");
    if (n_list.empty()) throw ConfigError("bench: empty node list");
    for (std::size_t i = 0; i < n_list.size(); ++i) {
      if (n_list[i] < 2) throw ConfigError("bench: node counts must be at least 2");
      if (i && n_list[i] <= n_list[i - 1]) throw ConfigError("bench: node counts must be ascending");
    }
    if (d == 0 || t_steps == 0 || repeats == 0) throw ConfigError("bench: d, t and repeats must be positive");
  }
};

namespace detail {

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <typename Fn>
double time_ms(Fn&& fn) {
  const auto start = std::chrono::steady_clock::now();
  fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

/// Peak live bytes (absolute) while `fn` runs.
template <typename Fn>
std::size_t peak_bytes(Fn&& fn) {
  auto& acct = MemAccountant::instance();
  acct.reset_peak();
  fn();
  return acct.peak();
}

}  // namespace detail

/// Fraction of set bits per spike site for one eval-mode forward pass, in
/// order of first appearance. Repeated visits to a site are pooled.
inline std::vector<std::pair<std::string, double>> sparsity_probe(SpikeGraphormer& m, const Tensor& x,
                                                                   std::shared_ptr<const CsrGraph> graph) {
  std::vector<std::string> order;
  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> totals;
  predict(m, x, std::move(graph), nullptr, [&](std::string_view site, const ag::Var<float>& v) {
    const std::string key(site);
    auto [it, fresh] = totals.try_emplace(key, 0, 0);
    if (fresh) order.push_back(key);
    it->second.first += v.spikes().count_ones();
    it->second.second += v.shape().numel();
  });
  std::vector<std::pair<std::string, double>> out;
  for (const auto& key : order) {
    const auto& [ones, bits] = totals[key];
    out.emplace_back(key, bits ? static_cast<double>(ones) / static_cast<double>(bits) : 0.0);
  }
  return out;
}

/// Per node count and method: forward (eval) and one Adam training step on
/// synthetic features, each timed as the median of `repeats` runs after a
/// warm-up. The warm-up run also supplies memory peak, attention op counts
/// and spike density. A method hitting the memory cap becomes an OOM row.
inline BenchReport run_scaling(const BenchConfig& cfg, const std::function<void(const BenchRow&)>& on_row = {}) {
  cfg.validate();
  BenchReport report;
  for (std::size_t n : cfg.n_list) {
    const GraphDataset ds = synth_graph(n, 0.0, cfg.d, cfg.classes, 0.5, cfg.seed + n);
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    for (const auto& method : cfg.methods) {
      BenchRow row;
      row.method = method;
      row.n = n;
      row.d = cfg.d;
      row.t = method == "sga" ? cfg.t_steps : 1;
      try {
        std::optional<MemCapGuard> cap;
        if (cfg.mem_cap) cap.emplace(cfg.mem_cap);
        std::function<void()> forward_fn, train_fn;
        OpCounts ops;
        std::uint64_t ones = 0, bits = 0;
        bool instrument = true;
        if (method == "sga") {
          ModelConfig mc;
          mc.in_dim = cfg.d;
          mc.dim = cfg.d;
          mc.num_classes = cfg.classes;
          mc.time_steps = cfg.t_steps;
          mc.encoder_blocks = 1;
          mc.gnn_layers = 0;
          mc.alpha = 0.0;
          auto model = std::make_shared<SpikeGraphormer>(mc, cfg.seed);
          auto adam = std::make_shared<AdamState<float>>();
          auto params = std::make_shared<std::vector<Parameter<float>*>>(parameter_list(*model));
          forward_fn = [&, model] {
            ForwardStats stats;
            typename ag::Tape<float>::SpikeHook hook;
            if (instrument)
              hook = [&](std::string_view, const ag::Var<float>& v) {
                ones += v.spikes().count_ones();
                bits += v.shape().numel();
              };
            predict(*model, ds.x, nullptr, &stats, hook);
            ops = stats.attention_ops;
          };
          train_fn = [&, model, adam, params] {
            model->zero_grad();
            loss_and_grad(*model, ds.x, nullptr, all, LossKind::nll, ds.labels);
            adam_step(*params, *adam, 1e-3);
          };
        } else {
          auto model = std::make_shared<VanillaTransformer>(cfg.d, cfg.d, cfg.classes, 1, cfg.seed);
          auto adam = std::make_shared<AdamState<float>>();
          auto params = std::make_shared<std::vector<Parameter<float>*>>(model->parameters());
          forward_fn = [&, model] {
            ag::Tape<float> tape(false);
            OpCounts local;
            ag::forward(tape, *model, ds.x, &local);
            ops = local;
          };
          train_fn = [&, model, adam, params] {
            for (auto* p : *params) p->zero_grad();
            ag::Tape<float> tape(true);
            tape.training = true;
            auto logits = ag::forward(tape, *model, ds.x);
            tape.backward(ag::nll_loss(tape, logits, std::span<const std::int64_t>(ds.labels), all));
            adam_step(*params, *adam, 1e-3);
          };
        }
        const std::size_t fwd_peak = detail::peak_bytes(forward_fn);
        row.adds = ops.adds;
        row.muls = ops.muls;
        row.spike_density = bits ? static_cast<double>(ones) / static_cast<double>(bits) : 0.0;
        instrument = false;
        const std::size_t train_peak = detail::peak_bytes(train_fn);
        row.mem_bytes = std::max(fwd_peak, train_peak);
        for (std::size_t r = 0; r < cfg.repeats; ++r) {
          row.forward_samples.push_back(detail::time_ms(forward_fn));
          row.train_samples.push_back(detail::time_ms(train_fn));
        }
        row.forward_ms = detail::median(row.forward_samples);
        row.train_step_ms = detail::median(row.train_samples);
      } catch (const std::bad_alloc&) {
        BenchRow oom;
        oom.method = method;
        oom.n = n;
        oom.d = cfg.d;
        oom.t = row.t;
        oom.oom = true;
        row = std::move(oom);
      }
      if (on_row) on_row(row);
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

}  // namespace sgf
