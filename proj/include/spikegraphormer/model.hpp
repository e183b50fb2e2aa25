#pragma once

// Dual-branch model: spiking transformer encoder over all nodes, sparse
// GCN over the input graph, convex fusion and a linear classifier.
//
// Encoder recurrence on membrane potentials (residuals add potentials,
// never spikes):
//
//   U_0  = repeat_T(BN(Linear(X)))
//   U'_l = SGA(lif(U_{l-1})) + U_{l-1}
//   U_l  = MLP(lif(U'_l)) + U'_l
//   S_L  = lif(U_L)
//
// Writing U_l for the MLP residual sum makes S_l = lif(U_l) for every
// block, so the attention input lif(U_{l-1}) is exactly S_{l-1}.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spikegraphormer/autograd.hpp"
#include "spikegraphormer/gcn.hpp"
#include "spikegraphormer/layers.hpp"
#include "spikegraphormer/lif.hpp"
#include "spikegraphormer/sga.hpp"

namespace sgf {

enum class Fusion { add, concat };

struct ModelConfig {
  std::size_t in_dim = 0;
  std::size_t dim = 64;
  std::size_t num_classes = 2;
  std::size_t time_steps = 2;
  std::size_t encoder_blocks = 1;
  std::size_t gnn_layers = 2;
  std::size_t heads = 0;  // 0 = one head per channel
  double alpha = 0.5;
  double dropout = 0.0;
  Fusion fusion = Fusion::add;
  LifParams lif;

  std::size_t resolved_heads() const { return heads == 0 ? dim : heads; }
  std::size_t classifier_in() const { return fusion == Fusion::concat ? 2 * dim : dim; }

  void validate() const {
    if (in_dim == 0) throw ConfigError("model: input dimension must be positive");
    if (dim == 0) throw ConfigError("model: embedding dimension must be positive");
    if (num_classes == 0) throw ConfigError("model: need at least one output");
    if (time_steps == 0) throw ConfigError("model: time steps must be at least 1");
    if (dim % resolved_heads() != 0) throw ConfigError("model: heads must divide the embedding dimension");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("model: alpha must lie in [0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
    if (alpha > 0.0 && gnn_layers == 0 && in_dim != dim)
      throw ConfigError("model: zero GNN layers requires in_dim == dim");
    lif.validate();
  }
};

template <typename Real>
struct EncoderBlock {
  SgaLayer<Real> sga;
  LinearLayer<Real> mlp1, mlp2;
  BatchNormLayer<Real> mlp_bn1, mlp_bn2;
  LifParams lif_res, lif_hidden;

  EncoderBlock() = default;
  EncoderBlock(std::size_t d, std::size_t heads, Rng& rng, const LifParams& lif)
      : sga(d, heads, rng, lif), mlp1(d, d, rng), mlp2(d, d, rng), mlp_bn1(d), mlp_bn2(d), lif_res(lif),
        lif_hidden(lif) {}

  template <typename Other>
  EncoderBlock<Other> cast() const {
    EncoderBlock<Other> o;
    o.sga = sga.template cast<Other>();
    o.mlp1 = mlp1.template cast<Other>();
    o.mlp2 = mlp2.template cast<Other>();
    o.mlp_bn1 = mlp_bn1.template cast<Other>();
    o.mlp_bn2 = mlp_bn2.template cast<Other>();
    o.lif_res = lif_res;
    o.lif_hidden = lif_hidden;
    return o;
  }
};

template <typename Real>
class BasicSpikeGraphormer {
 public:
  ModelConfig config;
  LinearLayer<Real> in_proj;
  BatchNormLayer<Real> in_bn;
  std::vector<EncoderBlock<Real>> blocks;
  std::vector<GcnLayer<Real>> gnn;
  LinearLayer<Real> classifier;
  LifParams lif_out;

  BasicSpikeGraphormer() = default;

  BasicSpikeGraphormer(const ModelConfig& cfg, std::uint64_t seed) : config(cfg), lif_out(cfg.lif) {
    cfg.validate();
    Rng rng(seed);
    in_proj = LinearLayer<Real>(cfg.in_dim, cfg.dim, rng);
    in_bn = BatchNormLayer<Real>(cfg.dim);
    for (std::size_t l = 0; l < cfg.encoder_blocks; ++l)
      blocks.emplace_back(cfg.dim, cfg.resolved_heads(), rng, cfg.lif);
    for (std::size_t l = 0; l < cfg.gnn_layers; ++l) {
      const std::size_t in = l == 0 ? cfg.in_dim : cfg.dim;
      gnn.emplace_back(in, cfg.dim, rng, l + 1 < cfg.gnn_layers, cfg.dropout);
    }
    classifier = LinearLayer<Real>(cfg.classifier_in(), cfg.num_classes, rng);
  }

  /// Visits every trainable parameter with a stable name.
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    auto lin = [&](const std::string& p, LinearLayer<Real>& l) {
      fn(p + ".weight", l.weight);
      if (l.has_bias) fn(p + ".bias", l.bias);
    };
    auto bn = [&](const std::string& p, BatchNormLayer<Real>& b) {
      fn(p + ".gamma", b.gamma);
      fn(p + ".beta", b.beta);
    };
    lin("in_proj", in_proj);
    bn("in_bn", in_bn);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l);
      auto& b = blocks[l];
      lin(p + ".sga.lin_q", b.sga.lin_q);
      lin(p + ".sga.lin_k", b.sga.lin_k);
      lin(p + ".sga.lin_v", b.sga.lin_v);
      bn(p + ".sga.bn_q", b.sga.bn_q);
      bn(p + ".sga.bn_k", b.sga.bn_k);
      bn(p + ".sga.bn_v", b.sga.bn_v);
      lin(p + ".mlp1", b.mlp1);
      bn(p + ".mlp_bn1", b.mlp_bn1);
      lin(p + ".mlp2", b.mlp2);
      bn(p + ".mlp_bn2", b.mlp_bn2);
    }
    for (std::size_t l = 0; l < gnn.size(); ++l) lin("gnn." + std::to_string(l), gnn[l].lin);
    lin("classifier", classifier);
  }

  /// Visits the non-trainable batch-norm running statistics.
  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    auto bn = [&](const std::string& p, BatchNormLayer<Real>& b) {
      fn(p + ".running_mean", b.running_mean);
      fn(p + ".running_var", b.running_var);
    };
    bn("in_bn", in_bn);
    for (std::size_t l = 0; l < blocks.size(); ++l) {
      const std::string p = "blocks." + std::to_string(l);
      auto& b = blocks[l];
      bn(p + ".sga.bn_q", b.sga.bn_q);
      bn(p + ".sga.bn_k", b.sga.bn_k);
      bn(p + ".sga.bn_v", b.sga.bn_v);
      bn(p + ".mlp_bn1", b.mlp_bn1);
      bn(p + ".mlp_bn2", b.mlp_bn2);
    }
  }

  void zero_grad() {
    for_each_parameter([](const std::string&, Parameter<Real>& p) { p.zero_grad(); });
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for_each_parameter([&](const std::string&, Parameter<Real>& p) { n += p.value.size(); });
    return n;
  }

  template <typename Other>
  BasicSpikeGraphormer<Other> cast() const {
    BasicSpikeGraphormer<Other> o;
    o.config = config;
    o.in_proj = in_proj.template cast<Other>();
    o.in_bn = in_bn.template cast<Other>();
    for (const auto& b : blocks) o.blocks.push_back(b.template cast<Other>());
    for (const auto& g : gnn) o.gnn.push_back(g.template cast<Other>());
    o.classifier = classifier.template cast<Other>();
    o.lif_out = lif_out;
    return o;
  }
};

using SpikeGraphormer = BasicSpikeGraphormer<float>;

/// Per-forward instrumentation: attention counters per block and the
/// arithmetic spent inside the attention modules (projections + core).
struct ForwardStats {
  std::vector<AttnCounters> attention;
  OpCounts attention_ops;
};

namespace ag {

/// U_0 = repeat_T(BN(Linear(x))).
template <typename Real>
Var<Real> input_membrane(Tape<Real>& tape, BasicSpikeGraphormer<Real>& m, const Var<Real>& x) {
  Var<Real> h = batchnorm(tape, linear(tape, x, m.in_proj), m.in_bn);
  return repeat_time(tape, h, m.config.time_steps);
}

/// Residual tail of a block given the attention output spikes.
template <typename Real>
Var<Real> block_tail(Tape<Real>& tape, EncoderBlock<Real>& b, const Var<Real>& attn, const Var<Real>& u) {
  Var<Real> u_res = add(tape, attn, u);
  Var<Real> s_res = lif(tape, u_res, b.lif_res, "res");
  Var<Real> hidden = lif(tape, batchnorm(tape, linear(tape, s_res, b.mlp1), b.mlp_bn1), b.lif_hidden, "mlp_hidden");
  Var<Real> mlp_out = batchnorm(tape, linear(tape, hidden, b.mlp2), b.mlp_bn2);
  return add(tape, mlp_out, u_res);
}

template <typename Real>
Var<Real> encoder_block(Tape<Real>& tape, EncoderBlock<Real>& b, const Var<Real>& u, ForwardStats* stats = nullptr) {
  AttnCounters counters;
  CounterScope scope;
  Var<Real> attn = sga(tape, u, b.sga, &counters);
  if (stats) {
    stats->attention.push_back(counters);
    stats->attention_ops += scope.delta();
  }
  return block_tail(tape, b, attn, u);
}

/// Transformer branch: returns S_L as [T x N x D] spikes.
template <typename Real>
Var<Real> encode(Tape<Real>& tape, BasicSpikeGraphormer<Real>& m, const Var<Real>& x, ForwardStats* stats = nullptr) {
  if (x.shape().rank() != 2 || x.shape()[1] != m.config.in_dim)
    throw DimensionError("encode: features " + x.shape().str() + " do not match input dimension " +
                         std::to_string(m.config.in_dim));
  const std::string outer = tape.site_prefix;
  tape.site_prefix = outer + "input.";
  Var<Real> u = input_membrane(tape, m, x);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    tape.site_prefix = outer + "block" + std::to_string(l) + ".";
    u = encoder_block(tape, m.blocks[l], u, stats);
  }
  tape.site_prefix = outer + "encoder.";
  Var<Real> s = lif(tape, u, m.lif_out, "out");
  tape.site_prefix = outer;
  return s;
}

/// Fusion of the time-averaged spike branch with the GNN branch. Either
/// branch may be absent when its weight is zero.
template <typename Real>
Var<Real> fuse(Tape<Real>& tape, const Var<Real>& s, const Var<Real>& g, double alpha, Fusion mode,
               std::size_t n, std::size_t d) {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("fuse: alpha must lie in [0, 1]");
  Var<Real> sm, gm;
  if (alpha < 1.0) {
    if (!s) throw DimensionError("fuse: spike branch missing");
    sm = mean_time(tape, s);
    if (sm.shape()[0] != n) throw DimensionError("fuse: node counts differ");
    if (alpha > 0.0) sm = scale(tape, sm, static_cast<Real>(1.0 - alpha));
  }
  if (alpha > 0.0) {
    if (!g) throw DimensionError("fuse: graph branch missing");
    if (g.shape()[0] != n) throw DimensionError("fuse: node counts differ");
    gm = alpha < 1.0 ? scale(tape, g, static_cast<Real>(alpha)) : g;
  }
  if (mode == Fusion::add) {
    if (sm && gm) {
      if (sm.shape() != gm.shape()) throw DimensionError("fuse: branch shapes differ");
      return add(tape, sm, gm);
    }
    return sm ? sm : gm;
  }
  if (!sm) sm = tape.constant(BasicTensor<Real>(Shape{n, d}));
  if (!gm) gm = tape.constant(BasicTensor<Real>(Shape{n, d}));
  return concat_cols(tape, sm, gm);
}

template <typename Real>
Var<Real> classify(Tape<Real>& tape, BasicSpikeGraphormer<Real>& m, const Var<Real>& z) {
  if (z.shape().cols() != m.classifier.in_dim())
    throw DimensionError("classify: input width " + std::to_string(z.shape().cols()) + " vs classifier " +
                         std::to_string(m.classifier.in_dim()));
  return linear(tape, z, m.classifier);
}

/// Full forward to logits. Branches with zero fusion weight are skipped
/// entirely, so their parameters cannot influence the output.
template <typename Real>
Var<Real> forward(Tape<Real>& tape, BasicSpikeGraphormer<Real>& m, const BasicTensor<Real>& x,
                  std::shared_ptr<const CsrGraph> graph, ForwardStats* stats = nullptr) {
  const double alpha = m.config.alpha;
  if (alpha > 0.0 && !graph) throw ConfigError("forward: alpha > 0 needs a graph");
  const std::size_t n = x.rows();
  Var<Real> xv = tape.constant(x);
  Var<Real> s, g;
  if (alpha < 1.0) s = encode(tape, m, xv, stats);
  if (alpha > 0.0) g = gcn(tape, graph, xv, m.gnn);
  Var<Real> z = fuse(tape, s, g, alpha, m.config.fusion, n, m.config.dim);
  z = dropout(tape, z, m.config.dropout);
  return classify(tape, m, z);
}

}  // namespace ag

/// Eval-mode logits on plain tensors.
template <typename Real>
BasicTensor<Real> predict(BasicSpikeGraphormer<Real>& m, const BasicTensor<Real>& x,
                          std::shared_ptr<const CsrGraph> graph, ForwardStats* stats = nullptr,
                          typename ag::Tape<Real>::SpikeHook hook = {}) {
  ag::Tape<Real> tape(false);
  tape.training = false;
  tape.spike_hook = std::move(hook);
  return ag::forward(tape, m, x, std::move(graph), stats).value();
}

/// Eval-mode logits computed over node chunks in O(chunk) transient
/// memory for the transformer branch. Attention masks are global: each
/// block first accumulates K AND V counts over all chunks, then applies
/// the mask chunk by chunk. Output equals predict() exactly.
inline Tensor predict_chunked(SpikeGraphormer& m, const Tensor& x, std::shared_ptr<const CsrGraph> graph,
                              std::size_t chunk_size) {
  if (chunk_size == 0) throw ConfigError("predict_chunked: chunk size must be positive");
  const ModelConfig& cfg = m.config;
  if (cfg.alpha > 0.0 && !graph) throw ConfigError("forward: alpha > 0 needs a graph");
  if (x.shape().rank() != 2 || x.cols() != cfg.in_dim) throw DimensionError("predict_chunked: feature shape");
  const std::size_t n = x.rows(), d = cfg.dim, t_steps = cfg.time_steps;
  ag::Tape<float> tape(false);

  Tensor gnn_out;
  if (cfg.alpha > 0.0) gnn_out = gcn_forward(*graph, x, m.gnn, false);

  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t b = 0; b < n; b += chunk_size) chunks.emplace_back(b, std::min(n, b + chunk_size));

  auto rows_of = [&](const Tensor& src, std::size_t b, std::size_t e) {
    Tensor out(Shape{e - b, src.cols()});
    std::copy(src.data() + b * src.cols(), src.data() + e * src.cols(), out.data());
    return out;
  };

  std::vector<ag::Var<float>> u_chunks;
  if (cfg.alpha < 1.0) {
    for (auto [b, e] : chunks) u_chunks.push_back(ag::input_membrane(tape, m, tape.constant(rows_of(x, b, e))));
    for (auto& block : m.blocks) {
      std::vector<std::uint64_t> counts(t_steps * d, 0);
      for (auto& u : u_chunks) {
        auto s = ag::lif(tape, u, block.sga.lif_in);
        auto qkv = ag::sga_qkv_from_spikes(tape, s, block.sga);
        accumulate_kv_counts(qkv.k.spikes(), qkv.v.spikes(), counts);
      }
      MaskResult mask = attention_mask(counts, t_steps, d, block.sga.heads, block.sga.lif_attn);
      for (auto& u : u_chunks) {
        auto s = ag::lif(tape, u, block.sga.lif_in);
        auto qkv = ag::sga_qkv_from_spikes(tape, s, block.sga);
        ag::Var<float> attn(tape.make_spikes(apply_mask(qkv.q.spikes(), mask.mask)));
        u = ag::block_tail(tape, block, attn, u);
      }
    }
  }

  Tensor logits(Shape{n, cfg.num_classes});
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    auto [b, e] = chunks[c];
    ag::Var<float> s, g;
    if (cfg.alpha < 1.0) s = ag::lif(tape, u_chunks[c], m.lif_out);
    if (cfg.alpha > 0.0) g = tape.constant(rows_of(gnn_out, b, e));
    auto z = ag::fuse(tape, s, g, cfg.alpha, cfg.fusion, e - b, d);
    Tensor part = ag::classify(tape, m, z).value();
    std::copy(part.data(), part.data() + part.size(), logits.data() + b * cfg.num_classes);
  }
  return logits;
}

}  // namespace sgf
