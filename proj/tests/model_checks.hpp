#pragma once

// Model-level checks shared by the unit tests and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "test_util.hpp"

namespace sgf::testing {

inline ModelConfig tiny_config(std::size_t in_dim, std::size_t dim, std::size_t classes, std::size_t t_steps,
                               std::size_t blocks, std::size_t gnn_layers, double alpha) {
  ModelConfig c;
  c.in_dim = in_dim;
  c.dim = dim;
  c.num_classes = classes;
  c.time_steps = t_steps;
  c.encoder_blocks = blocks;
  c.gnn_layers = gnn_layers;
  c.alpha = alpha;
  return c;
}

inline std::vector<Edge> ring_edges(std::size_t n) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  if (n > 2) e.emplace_back(n - 1, 0);
  return e;
}

/// Relaxed-network gradient check: NLL over all nodes, BN in batch mode,
/// analytic gradients from one backward pass against central differences
/// on every trainable scalar.
inline GradCheck model_gradient_check(std::uint64_t seed, double h = 1e-3, double tol = 1e-3) {
  const std::size_t n = 4, d_in = 3, d = 4, classes = 3;
  ModelConfig cfg = tiny_config(d_in, d, classes, 1, 1, 1, 0.5);
  BasicSpikeGraphormer<double> m = SpikeGraphormer(cfg, seed).cast<double>();
  Rng rng(seed + 1);
  BasicTensor<double> x = random_tensor(Shape{n, d_in}, rng, -2.0, 2.0).cast<double>();
  std::vector<std::int64_t> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back(static_cast<std::int64_t>(rng.below(classes)));
  std::vector<std::size_t> index{0, 1, 2, 3};
  auto graph = std::make_shared<const CsrGraph>(normalize_adjacency(ring_edges(n), n));

  m.zero_grad();
  loss_and_grad<double>(m, x, graph, index, LossKind::nll, labels, nullptr, nullptr, SpikeMode::relaxed);
  std::vector<BasicTensor<double>> analytic;
  m.for_each_parameter([&](const std::string&, Parameter<double>& p) { analytic.push_back(p.grad); });

  auto objective = [&]() {
    ag::Tape<double> tape(false, SpikeMode::relaxed);
    tape.training = true;
    auto logits = ag::forward(tape, m, x, graph);
    return ag::nll_loss(tape, logits, labels, index).value()[0];
  };
  GradCheck acc;
  std::size_t i = 0;
  m.for_each_parameter([&](const std::string&, Parameter<double>& p) {
    finite_difference_check(acc, p.value, analytic[i++], objective, h, tol);
  });
  return acc;
}

/// Coordinates pooled over seeds 1..seeds. Ramp kinks inside the
/// difference stencil can sink a single instance, so one seed is not a
/// representative sample at h = 1e-3.
inline GradCheck pooled_gradient_check(std::uint64_t seeds, double h = 1e-3, double tol = 1e-3) {
  GradCheck total;
  for (std::uint64_t s = 1; s <= seeds; ++s) {
    GradCheck one = model_gradient_check(s, h, tol);
    total.checked += one.checked;
    total.good += one.good;
    total.worst = std::max(total.worst, one.worst);
  }
  return total;
}

/// Largest |logit difference| after `perturb` edits the model, over
/// `trials` random perturbations.
inline float perturbation_effect(SpikeGraphormer base, const Tensor& x, std::shared_ptr<const CsrGraph> graph,
                                 const std::function<void(SpikeGraphormer&, Rng&)>& perturb, int trials,
                                 std::uint64_t seed) {
  const Tensor ref = predict(base, x, graph);
  Rng rng(seed);
  float worst = 0;
  for (int t = 0; t < trials; ++t) {
    SpikeGraphormer m = base;
    perturb(m, rng);
    const Tensor out = predict(m, x, graph);
    for (std::size_t i = 0; i < out.size(); ++i) worst = std::max(worst, std::abs(out[i] - ref[i]));
  }
  return worst;
}

inline void perturb_gnn(SpikeGraphormer& m, Rng& rng) {
  for (auto& g : m.gnn) {
    for (auto& v : g.lin.weight.value.values()) v += static_cast<float>(rng.normal());
    for (auto& v : g.lin.bias.value.values()) v += static_cast<float>(rng.normal());
  }
}

inline void perturb_encoder(SpikeGraphormer& m, Rng& rng) {
  auto lin = [&](LinearLayer<float>& l) {
    for (auto& v : l.weight.value.values()) v += static_cast<float>(rng.normal());
    for (auto& v : l.bias.value.values()) v += static_cast<float>(rng.normal());
  };
  auto bn = [&](BatchNormLayer<float>& b) {
    for (auto& v : b.gamma.value.values()) v += static_cast<float>(rng.normal());
    for (auto& v : b.beta.value.values()) v += static_cast<float>(rng.normal());
    for (auto& v : b.running_mean.values()) v += static_cast<float>(rng.normal());
  };
  lin(m.in_proj);
  bn(m.in_bn);
  for (auto& b : m.blocks) {
    lin(b.sga.lin_q);
    lin(b.sga.lin_k);
    lin(b.sga.lin_v);
    bn(b.sga.bn_q);
    bn(b.sga.bn_k);
    bn(b.sga.bn_v);
    lin(b.mlp1);
    lin(b.mlp2);
    bn(b.mlp_bn1);
    bn(b.mlp_bn2);
  }
}

}  // namespace sgf::testing
