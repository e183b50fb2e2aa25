#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "spikegraphormer/autograd.hpp"
#include "spikegraphormer/layers.hpp"
#include "spikegraphormer/tensor.hpp"

namespace sgf {

using Edge = std::pair<std::size_t, std::size_t>;

/// Symmetric sparse adjacency in compressed-row form with GCN weights.
struct CsrGraph {
  std::size_t n = 0;
  std::vector<std::size_t> row_ptr;  // n + 1
  std::vector<std::size_t> col_idx;  // E
  std::vector<double> weights;       // E

  std::size_t num_edges() const { return col_idx.size(); }

  void validate() const {
    if (row_ptr.size() != n + 1 || row_ptr.front() != 0 || row_ptr.back() != col_idx.size())
      throw DimensionError("csr: row pointer inconsistent");
    for (std::size_t i = 0; i < n; ++i)
      if (row_ptr[i] > row_ptr[i + 1]) throw DimensionError("csr: row pointer decreasing");
    for (std::size_t c : col_idx)
      if (c >= n) throw DimensionError("csr: column index out of range");
    if (weights.size() != col_idx.size()) throw DimensionError("csr: weight count");
  }
};

/// D^-1/2 (A [+ I]) D^-1/2 over the symmetrized, deduplicated edge set.
/// Degrees are counted after self-loop insertion; nodes left with degree
/// zero get empty rows.
inline CsrGraph normalize_adjacency(const std::vector<Edge>& edges, std::size_t n, bool add_self_loops = true) {
  if (n == 0) throw DimensionError("normalize_adjacency: empty graph");
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& [u, v] : edges) {
    if (u >= n || v >= n)
      throw DimensionError("normalize_adjacency: edge (" + std::to_string(u) + ", " + std::to_string(v) +
                           ") out of range for " + std::to_string(n) + " nodes");
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  if (add_self_loops)
    for (std::size_t i = 0; i < n; ++i) adj[i].push_back(i);
  CsrGraph g;
  g.n = n;
  g.row_ptr.assign(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& a = adj[i];
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    g.row_ptr[i + 1] = g.row_ptr[i] + a.size();
  }
  g.col_idx.reserve(g.row_ptr[n]);
  g.weights.reserve(g.row_ptr[n]);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : adj[i]) {
      g.col_idx.push_back(j);
      g.weights.push_back(1.0 / std::sqrt(static_cast<double>(adj[i].size()) * static_cast<double>(adj[j].size())));
    }
  }
  return g;
}

/// out[u] = sum over row u of weight * x[col], in CSR order.
template <typename Real>
BasicTensor<Real> spmm(const CsrGraph& g, const BasicTensor<Real>& x) {
  if (x.shape().rank() != 2 || x.rows() != g.n)
    throw DimensionError("spmm: graph has " + std::to_string(g.n) + " nodes, features " + x.shape().str());
  const std::size_t d = x.cols();
  BasicTensor<Real> out(x.shape());
  for (std::size_t u = 0; u < g.n; ++u) {
    Real* __restrict o = out.data() + u * d;
    for (std::size_t e = g.row_ptr[u]; e < g.row_ptr[u + 1]; ++e) {
      const Real w = static_cast<Real>(g.weights[e]);
      const Real* __restrict xr = x.data() + g.col_idx[e] * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += w * xr[j];
    }
  }
  count_muls(g.num_edges() * d);
  count_adds(g.num_edges() * d);
  return out;
}

/// Transpose product, used by backward. The normalized adjacency is
/// symmetric, but the transpose is spelled out so that directed inputs
/// built by hand stay correct.
template <typename Real>
BasicTensor<Real> spmm_transposed(const CsrGraph& g, const BasicTensor<Real>& x) {
  const std::size_t d = x.cols();
  BasicTensor<Real> out(x.shape());
  for (std::size_t u = 0; u < g.n; ++u) {
    const Real* xr = x.data() + u * d;
    for (std::size_t e = g.row_ptr[u]; e < g.row_ptr[u + 1]; ++e) {
      const Real w = static_cast<Real>(g.weights[e]);
      Real* o = out.data() + g.col_idx[e] * d;
      for (std::size_t j = 0; j < d; ++j) o[j] += w * xr[j];
    }
  }
  count_muls(g.num_edges() * d);
  count_adds(g.num_edges() * d);
  return out;
}

template <typename Real>
struct GcnLayer {
  LinearLayer<Real> lin;
  bool activation = true;
  double dropout_rate = 0.0;

  GcnLayer() = default;
  GcnLayer(std::size_t in, std::size_t out, Rng& rng, bool relu, double dropout)
      : lin(in, out, rng), activation(relu), dropout_rate(dropout) {}

  template <typename Other>
  GcnLayer<Other> cast() const {
    GcnLayer<Other> o;
    o.lin = lin.template cast<Other>();
    o.activation = activation;
    o.dropout_rate = dropout_rate;
    return o;
  }
};

namespace ag {

template <typename Real>
Var<Real> spmm(Tape<Real>& tape, std::shared_ptr<const CsrGraph> g, const Var<Real>& x) {
  auto xn = x.node();
  return tape.record(tape.make_dense(sgf::spmm(*g, x.value())), [xn, g](Node<Real>& self) {
    if (xn->needs_grad) xn->add_grad(spmm_transposed(*g, self.grad));
  });
}

/// Per layer: dropout -> aggregate -> linear -> ReLU (not on the last).
template <typename Real>
Var<Real> gcn(Tape<Real>& tape, std::shared_ptr<const CsrGraph> g, const Var<Real>& x,
              std::vector<GcnLayer<Real>>& layers) {
  Var<Real> h = x;
  for (auto& layer : layers) {
    h = dropout(tape, h, layer.dropout_rate);
    h = spmm(tape, g, h);
    h = linear(tape, h, layer.lin);
    if (layer.activation) h = relu(tape, h);
  }
  return h;
}

}  // namespace ag

/// Inference-style GCN stack on plain tensors.
template <typename Real>
BasicTensor<Real> gcn_forward(const CsrGraph& g, const BasicTensor<Real>& x, std::vector<GcnLayer<Real>>& layers,
                              bool training = false, Rng* rng = nullptr) {
  for (std::size_t i = 0; i + 1 < layers.size(); ++i)
    if (layers[i].lin.out_dim() != layers[i + 1].lin.in_dim()) throw DimensionError("gcn: layer dimensions do not chain");
  if (!layers.empty() && layers.front().lin.in_dim() != x.cols()) throw DimensionError("gcn: input dimension");
  ag::Tape<Real> tape(false);
  tape.training = training;
  tape.rng = rng;
  auto graph = std::make_shared<const CsrGraph>(g);
  return ag::gcn(tape, graph, tape.constant(x), layers).value();
}

}  // namespace sgf
