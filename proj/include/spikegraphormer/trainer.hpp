#pragma once

// Training loops: full-batch over the whole graph, or mini-batches of
// shuffled nodes with per-batch induced subgraphs. Both track the
// validation metric each epoch, keep a copy of the best model and stop
// after `patience` epochs without strict improvement.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "spikegraphormer/data.hpp"
#include "spikegraphormer/gcn.hpp"
#include "spikegraphormer/loss.hpp"
#include "spikegraphormer/metrics.hpp"
#include "spikegraphormer/model.hpp"
#include "spikegraphormer/optim.hpp"

namespace sgf {

struct TrainConfig {
  double lr = 0.01;
  std::size_t max_epochs = 1000;
  std::size_t patience = 30;
  std::optional<std::size_t> batch_size;  // absent = full batch
  std::uint64_t seed = 0;
  std::optional<LossKind> loss;           // absent = nll, or bce for multilabel data
  std::optional<Metric> metric;           // absent = accuracy, or rocauc for multilabel data
  bool record_timing = true;              // false writes 0 into epoch_ms
  std::size_t eval_chunk = 4096;          // node chunk for streaming evaluation
  ModelConfig model;                      // in_dim / num_classes are taken from the dataset

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
    validate_loop();
  }

  /// Everything except the lr sign, which train_full also accepts as 0.
  void validate_loop() const {
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train: lr must be finite and non-negative");
    if (patience < 1) throw ConfigError("train: patience must be at least 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be at least 1");
    if (batch_size && *batch_size < 2) throw ConfigError("train: batch_size must be at least 2");
    if (eval_chunk < 1) throw ConfigError("train: eval_chunk must be positive");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double valid_metric = 0;
  double test_metric = 0;
  double epoch_ms = 0;
};

struct TrainResult {
  SpikeGraphormer best_model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_valid = 0;
  double test_at_best = 0;
};

inline LossKind resolve_loss(const TrainConfig& cfg, const GraphDataset& ds) {
  const LossKind k = cfg.loss.value_or(ds.multilabel ? LossKind::bce : LossKind::nll);
  if (k == LossKind::nll && ds.multilabel) throw ConfigError("train: nll loss needs single-label data");
  return k;
}

inline Metric resolve_metric(const TrainConfig& cfg, const GraphDataset& ds) {
  const Metric m = cfg.metric.value_or(ds.multilabel ? Metric::rocauc : Metric::accuracy);
  if (m == Metric::accuracy && ds.multilabel) throw ConfigError("train: accuracy needs single-label data");
  return m;
}

/// Model hyperparameters with the dataset-determined extents filled in.
inline ModelConfig model_config_for(const TrainConfig& cfg, const GraphDataset& ds) {
  ModelConfig m = cfg.model;
  m.in_dim = ds.num_features();
  m.num_classes = ds.num_classes;
  m.validate();
  return m;
}

inline std::shared_ptr<const CsrGraph> full_graph(const GraphDataset& ds) {
  return std::make_shared<const CsrGraph>(normalize_adjacency(ds.edges, ds.num_nodes()));
}

/// Metric of `logits` over `index`. For single-label rocauc, two classes
/// score with logit1 - logit0; more classes average one-vs-rest AUCs.
inline double score_logits(const Tensor& logits, const GraphDataset& ds, std::span<const std::size_t> index,
                           Metric metric) {
  if (index.empty()) throw DimensionError("evaluate: empty split");
  if (metric == Metric::accuracy) {
    if (ds.multilabel) throw ConfigError("evaluate: accuracy needs single-label data");
    return accuracy(logits, ds.labels, index);
  }
  if (!ds.multilabel && ds.num_classes == 2) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i : index) {
      s.push_back(static_cast<double>(logits(i, 1)) - logits(i, 0));
      y.push_back(ds.labels[i] == 1 ? 1 : 0);
    }
    auto auc = roc_auc(s, y);
    if (!auc) throw DataError("rocauc: split contains a single class");
    return *auc;
  }
  return mean_roc_auc(logits, ds.bce_targets(), index);
}

inline double evaluate(SpikeGraphormer& m, const GraphDataset& ds, std::span<const std::size_t> index, Metric metric,
                       std::shared_ptr<const CsrGraph> graph = nullptr) {
  if (!graph && m.config.alpha > 0.0) graph = full_graph(ds);
  return score_logits(predict(m, ds.x, graph), ds, index, metric);
}

/// Loss over `index` and its gradients, accumulated into the parameters'
/// grad buffers (which the caller zeroes). NLL reads `labels`; BCE reads
/// the [N x C] `targets`.
template <typename Real>
double loss_and_grad(BasicSpikeGraphormer<Real>& m, const BasicTensor<Real>& x, std::shared_ptr<const CsrGraph> graph,
                     std::span<const std::size_t> index, LossKind kind, std::span<const std::int64_t> labels,
                     const BasicTensor<Real>* targets = nullptr, Rng* rng = nullptr,
                     SpikeMode mode = SpikeMode::binary) {
  ag::Tape<Real> tape(true, mode);
  tape.training = true;
  tape.rng = rng;
  auto logits = ag::forward(tape, m, x, std::move(graph));
  ag::Var<Real> loss;
  if (kind == LossKind::nll) {
    loss = ag::nll_loss(tape, logits, labels, index);
  } else {
    if (!targets) throw DimensionError("loss_and_grad: bce needs targets");
    loss = ag::bce_loss(tape, logits, *targets, index);
  }
  const double value = static_cast<double>(loss.value()[0]);
  tape.backward(loss);
  return value;
}

inline std::vector<Parameter<float>*> parameter_list(SpikeGraphormer& m) {
  std::vector<Parameter<float>*> out;
  m.for_each_parameter([&](const std::string&, Parameter<float>& p) { out.push_back(&p); });
  return out;
}

/// Shuffled partition of [0, n) into consecutive batches of `batch_size`;
/// a trailing singleton joins the previous batch.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < n; b += batch_size)
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  if (batches.size() > 1 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back()[0]);
    batches.pop_back();
  }
  return batches;
}

/// Edges with both endpoints in `nodes`, relabelled to positions in `nodes`.
inline std::vector<Edge> induced_subgraph(const std::vector<Edge>& edges, std::span<const std::size_t> nodes) {
  std::unordered_map<std::size_t, std::size_t> local;
  local.reserve(nodes.size() * 2);
  for (std::size_t i = 0; i < nodes.size(); ++i) local.emplace(nodes[i], i);
  std::vector<Edge> out;
  for (const auto& [u, v] : edges) {
    auto iu = local.find(u);
    if (iu == local.end()) continue;
    auto iv = local.find(v);
    if (iv == local.end()) continue;
    out.emplace_back(iu->second, iv->second);
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,train_loss,valid_metric,test_metric,epoch_ms\n";
  for (const auto& r : history)
    out += std::to_string(r.epoch) + ',' + format_double(r.train_loss) + ',' + format_double(r.valid_metric) + ',' +
           format_double(r.test_metric) + ',' + format_double(r.epoch_ms) + '\n';
  return out;
}

namespace detail {

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  /// Returns true when the model at this epoch is the new best.
  bool observe(double metric) {
    if (metric > best_) {
      best_ = metric;
      stale_ = 0;
      return true;
    }
    ++stale_;
    return false;
  }
  bool should_stop() const { return stale_ >= patience_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  double best_ = -std::numeric_limits<double>::infinity();
};

inline void check_splits(const GraphDataset& ds) {
  if (ds.splits.train.empty() || ds.splits.valid.empty() || ds.splits.test.empty())
    throw DataError("train: dataset needs non-empty train/valid/test splits");
}

inline double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

template <typename EpochFn>
TrainResult run_epochs(SpikeGraphormer& model, const GraphDataset& ds, const TrainConfig& cfg, Metric metric,
                       EpochFn&& epoch_fn) {
  TrainResult result;
  detail::EarlyStopper stopper(cfg.patience);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    Tensor logits;
    rec.train_loss = epoch_fn(logits);
    rec.valid_metric = score_logits(logits, ds, ds.splits.valid, metric);
    rec.test_metric = score_logits(logits, ds, ds.splits.test, metric);
    rec.epoch_ms = cfg.record_timing ? elapsed_ms(start) : 0.0;
    result.history.push_back(rec);
    if (stopper.observe(rec.valid_metric)) {
      result.best_model = model;
      result.best_epoch = epoch;
      result.best_valid = rec.valid_metric;
      result.test_at_best = rec.test_metric;
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

}  // namespace detail

/// Full-graph training. `model` is trained in place; the returned result
/// holds a copy of the parameters from the best validation epoch.
inline TrainResult train_full(SpikeGraphormer& model, const GraphDataset& ds, const TrainConfig& cfg) {
  cfg.validate_loop();
  detail::check_splits(ds);
  const LossKind loss_kind = resolve_loss(cfg, ds);
  const Metric metric = resolve_metric(cfg, ds);
  const auto graph = full_graph(ds);
  const Tensor targets = loss_kind == LossKind::bce ? ds.bce_targets() : Tensor();
  Rng rng(cfg.seed ^ 0x5DEECE66DULL);
  AdamState<float> adam;
  auto params = parameter_list(model);
  return detail::run_epochs(model, ds, cfg, metric, [&](Tensor& logits) {
    model.zero_grad();
    const double loss =
        loss_and_grad(model, ds.x, graph, ds.splits.train, loss_kind, ds.labels, &targets, &rng);
    adam_step(params, adam, cfg.lr);
    logits = predict(model, ds.x, graph);
    return loss;
  });
}

/// Node-sampled training: each batch runs both branches on its own nodes
/// only (induced subgraph for the GCN, within-batch attention for SGA).
/// Evaluation streams over node chunks with globally computed masks.
inline TrainResult train_minibatch(SpikeGraphormer& model, const GraphDataset& ds, const TrainConfig& cfg) {
  cfg.validate_loop();
  if (!cfg.batch_size) throw ConfigError("train_minibatch: batch_size required");
  detail::check_splits(ds);
  const LossKind loss_kind = resolve_loss(cfg, ds);
  const Metric metric = resolve_metric(cfg, ds);
  const auto graph = full_graph(ds);
  const Tensor all_targets = loss_kind == LossKind::bce ? ds.bce_targets() : Tensor();
  std::vector<char> is_train(ds.num_nodes(), 0);
  for (std::size_t i : ds.splits.train) is_train[i] = 1;
  Rng rng(cfg.seed ^ 0x5DEECE66DULL);
  AdamState<float> adam;
  auto params = parameter_list(model);
  const std::size_t d_in = ds.num_features();

  return detail::run_epochs(model, ds, cfg, metric, [&](Tensor& logits) {
    double weighted = 0.0;
    std::size_t counted = 0;
    for (const auto& batch : make_batches(ds.num_nodes(), *cfg.batch_size, rng)) {
      std::vector<std::size_t> local_train;
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (is_train[batch[i]]) local_train.push_back(i);
      if (local_train.empty()) continue;
      Tensor xb(Shape{batch.size(), d_in});
      std::vector<std::int64_t> yb;
      Tensor tb;
      if (loss_kind == LossKind::bce) tb = Tensor(Shape{batch.size(), all_targets.cols()});
      for (std::size_t i = 0; i < batch.size(); ++i) {
        std::copy(ds.x.data() + batch[i] * d_in, ds.x.data() + (batch[i] + 1) * d_in, xb.data() + i * d_in);
        if (loss_kind == LossKind::nll)
          yb.push_back(ds.labels[batch[i]]);
        else
          for (std::size_t c = 0; c < tb.cols(); ++c) tb(i, c) = all_targets(batch[i], c);
      }
      auto sub = std::make_shared<const CsrGraph>(normalize_adjacency(induced_subgraph(ds.edges, batch), batch.size()));
      model.zero_grad();
      const double loss = loss_and_grad(model, xb, sub, local_train, loss_kind, yb, &tb, &rng);
      adam_step(params, adam, cfg.lr);
      weighted += loss * static_cast<double>(local_train.size());
      counted += local_train.size();
    }
    logits = predict_chunked(model, ds.x, graph, cfg.eval_chunk);
    return counted ? weighted / static_cast<double>(counted) : 0.0;
  });
}

/// Dispatches on cfg.batch_size.
inline TrainResult train(SpikeGraphormer& model, const GraphDataset& ds, const TrainConfig& cfg) {
  return cfg.batch_size ? train_minibatch(model, ds, cfg) : train_full(model, ds, cfg);
}

}  // namespace sgf
