// Command-line front end. Results go to stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 runtime failure, 2 configuration error,
// 3 data error.

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spikegraphormer/spikegraphormer.hpp"

namespace fs = std::filesystem;
using namespace sgf;

namespace {

enum Exit { kOk = 0, kRuntime = 1, kConfig = 2, kData = 3 };

std::size_t parse_size(const std::string& s) {
  if (s.empty()) throw ConfigError("empty size");
  std::size_t mult = 1;
  std::string digits = s;
  const char last = s.back();
  if (last == 'k' || last == 'K') mult = 1024;
  else if (last == 'm' || last == 'M') mult = 1024 * 1024;
  else if (last == 'g' || last == 'G') mult = std::size_t{1} << 30;
  if (mult != 1) digits.pop_back();
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty())
    throw ConfigError("bad size '" + s + "'");
  return value * mult;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t p = s.find(',', start);
    const std::string tok = s.substr(start, p == std::string::npos ? std::string::npos : p - start);
    if (!tok.empty()) out.push_back(tok);
    if (p == std::string::npos) break;
    start = p + 1;
  }
  return out;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

std::span<const std::size_t> split_by_name(const GraphDataset& ds, const std::string& name) {
  if (name == "train") return ds.splits.train;
  if (name == "valid") return ds.splits.valid;
  if (name == "test") return ds.splits.test;
  throw ConfigError("unknown split '" + name + "'");
}

void check_model_fits(const ModelConfig& mc, const GraphDataset& ds) {
  if (mc.in_dim != ds.num_features())
    throw ConfigError("checkpoint expects " + std::to_string(mc.in_dim) + " features, dataset has " +
                      std::to_string(ds.num_features()));
  if (mc.num_classes != ds.num_classes)
    throw ConfigError("checkpoint predicts " + std::to_string(mc.num_classes) + " classes, dataset has " +
                      std::to_string(ds.num_classes));
}

struct TrainArgs {
  std::string data, config, out = "run";
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
};

int cmd_train(TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) apply_config_file(cfg, a.config);
  for (const auto& [key, value] : a.flags) apply_setting(cfg, key, value);
  for (const auto& kv : a.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  const GraphDataset ds = load_dataset(a.data);
  SpikeGraphormer model(model_config_for(cfg, ds), cfg.seed);
  const auto start = std::chrono::steady_clock::now();
  TrainResult r = train(model, ds, cfg);
  const double wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  fs::create_directories(a.out);
  save_checkpoint(r.best_model, fs::path(a.out) / "model.ckpt");
  write_file(fs::path(a.out) / "history.csv", history_csv(r.history));
  nlohmann::json result = {{"test_metric", r.test_at_best},
                           {"valid_metric", r.best_valid},
                           {"epochs", r.history.size()},
                           {"best_epoch", r.best_epoch},
                           {"wall_s", wall_s},
                           {"config", train_config_to_json(cfg)}};
  write_file(fs::path(a.out) / "result.json", result.dump(2) + "\n");
  std::cout << result.dump() << "\n";
  std::cerr << "trained " << r.history.size() << " epochs, best epoch " << r.best_epoch << ", test metric "
            << r.test_at_best << "\n";
  return kOk;
}

int cmd_eval(const std::string& data, const std::string& ckpt, const std::string& split, const std::string& metric) {
  SpikeGraphormer model = load_checkpoint(ckpt);
  const GraphDataset ds = load_dataset(data);
  check_model_fits(model.config, ds);
  TrainConfig cfg;
  if (metric != "auto") apply_setting(cfg, "metric", metric);
  const double v = evaluate(model, ds, split_by_name(ds, split), resolve_metric(cfg, ds));
  std::printf("%.6f\n", v);
  return kOk;
}

int cmd_bench(const std::string& methods, const std::string& nodes, std::size_t dim, std::size_t t,
              std::size_t repeats, std::uint64_t seed, const std::string& mem_cap, const std::string& out) {
  BenchConfig cfg;
  cfg.methods = split_list(methods);
  cfg.n_list.clear();
  for (const auto& s : split_list(nodes)) cfg.n_list.push_back(parse_size(s));
  cfg.d = dim;
  cfg.t_steps = t;
  cfg.repeats = repeats;
  cfg.seed = seed;
  if (!mem_cap.empty()) cfg.mem_cap = parse_size(mem_cap);
  const BenchReport report = run_scaling(cfg, [](const BenchRow& r) {
    std::cerr << r.method << " n=" << r.n << (r.oom ? " OOM" : "") << " forward_ms=" << r.forward_ms
              << " train_step_ms=" << r.train_step_ms << " mem_bytes=" << r.mem_bytes << "\n";
  });
  if (out.empty())
    std::cout << report.csv();
  else
    write_file(out, report.csv());
  return kOk;
}

int cmd_knn(const std::string& features, std::size_t k, const std::string& metric, const std::string& out) {
  if (metric != "cosine" && metric != "euclidean") throw ConfigError("metric must be cosine or euclidean");
  const Tensor x = read_features(features);
  std::vector<std::size_t> fallback;
  const auto edges = knn_graph(x, k, metric == "cosine" ? KnnMetric::cosine : KnnMetric::euclidean, &fallback);
  for (std::size_t r : fallback) std::cerr << "row " << r << " has zero norm; using euclidean distance\n";
  if (!fs::is_directory(out)) throw DataError("output directory " + out + " does not exist");
  write_file(fs::path(out) / "edges.tsv", edges_tsv(edges));
  std::cout << edges.size() << "\n";
  return kOk;
}

int cmd_synth(std::size_t n, double degree, std::size_t d_in, std::size_t classes, double homophily,
              std::uint64_t seed, const std::string& out) {
  GraphDataset ds = synth_graph(n, degree, d_in, classes, homophily, seed);
  save_dataset(ds, out);
  std::cout << ds.num_nodes() << "," << ds.edges.size() << "\n";
  return kOk;
}

int cmd_probe(const std::string& data, const std::string& ckpt, std::uint64_t seed) {
  const GraphDataset ds = load_dataset(data);
  SpikeGraphormer model;
  if (!ckpt.empty()) {
    model = load_checkpoint(ckpt);
    check_model_fits(model.config, ds);
  } else {
    TrainConfig cfg;
    model = SpikeGraphormer(model_config_for(cfg, ds), seed);
  }
  std::shared_ptr<const CsrGraph> graph = model.config.alpha > 0.0 ? full_graph(ds) : nullptr;
  for (const auto& [site, density] : sparsity_probe(model, ds.x, graph)) std::printf("%s,%.4f\n", site.c_str(), density);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spiking graph transformer: training, evaluation and benchmarking"};
  app.require_subcommand(1);

  TrainArgs targs;
  auto* train = app.add_subcommand("train", "Train a model and write checkpoint, history.csv and result.json");
  train->add_option("--data", targs.data, "Dataset directory")->required();
  train->add_option("--config", targs.config, "key = value configuration file");
  train->add_option("--out", targs.out, "Output directory")->capture_default_str();
  train->add_option("--set", targs.sets, "Override any configuration key (key=value), repeatable");
  for (const auto& key : config_keys()) {
    std::string flag = key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    train->add_option_function<std::string>(
        "--" + flag, [&targs, key](const std::string& v) { targs.flags[key] = v; }, "Override " + key);
  }

  std::string e_data, e_ckpt, e_split = "test", e_metric = "auto";
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--data", e_data, "Dataset directory")->required();
  eval->add_option("--checkpoint", e_ckpt, "Checkpoint file")->required();
  eval->add_option("--split", e_split, "train, valid or test")->capture_default_str();
  eval->add_option("--metric", e_metric, "accuracy, rocauc or auto")->capture_default_str();

  std::string b_methods = "sga,vanilla", b_nodes = "1k,2k,4k,8k", b_cap, b_out;
  std::size_t b_dim = 64, b_t = 1, b_repeats = 5;
  std::uint64_t b_seed = 0;
  auto* bench = app.add_subcommand("bench", "Scaling benchmark, CSV report");
  bench->add_option("--methods", b_methods, "Comma-separated: sga, vanilla")->capture_default_str();
  bench->add_option("--nodes", b_nodes, "Ascending node counts; k suffix = x1024")->capture_default_str();
  bench->add_option("--dim", b_dim, "Embedding dimension")->capture_default_str();
  bench->add_option("--t", b_t, "Time steps for the spiking model")->capture_default_str();
  bench->add_option("--repeats", b_repeats, "Timed repeats after one warm-up")->capture_default_str();
  bench->add_option("--seed", b_seed, "Seed")->capture_default_str();
  bench->add_option("--mem-cap", b_cap, "Memory-proxy cap in bytes (k/M/G suffixes); exceeding it reports OOM");
  bench->add_option("--out", b_out, "CSV output file (stdout when omitted)");

  std::string k_features, k_metric = "cosine", k_out;
  std::size_t k_k = 5;
  auto* knn = app.add_subcommand("knn-build", "Build a k-NN graph into DIR/edges.tsv");
  knn->add_option("--features", k_features, "features.csv")->required();
  knn->add_option("--k", k_k, "Neighbours per node")->capture_default_str();
  knn->add_option("--metric", k_metric, "cosine or euclidean")->capture_default_str();
  knn->add_option("--out", k_out, "Existing dataset directory")->required();

  std::size_t s_n = 1000, s_d = 16, s_classes = 4;
  double s_degree = 10, s_h = 0.8;
  std::uint64_t s_seed = 0;
  std::string s_out;
  auto* synth = app.add_subcommand("synth", "Generate a planted-partition dataset");
  synth->add_option("--n", s_n, "Nodes")->capture_default_str();
  synth->add_option("--avg-degree", s_degree, "Average degree")->capture_default_str();
  synth->add_option("--d-in", s_d, "Feature dimension")->capture_default_str();
  synth->add_option("--classes", s_classes, "Classes")->capture_default_str();
  synth->add_option("--homophily", s_h, "Intra-class edge fraction")->capture_default_str();
  synth->add_option("--seed", s_seed, "Seed")->capture_default_str();
  synth->add_option("--out", s_out, "Output directory")->required();

  std::string p_data, p_ckpt;
  std::uint64_t p_seed = 0;
  auto* probe = app.add_subcommand("probe", "Spike density per site for one forward pass");
  probe->add_option("--data", p_data, "Dataset directory")->required();
  probe->add_option("--checkpoint", p_ckpt, "Checkpoint (fresh default model when omitted)");
  probe->add_option("--seed", p_seed, "Initialization seed without a checkpoint")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*train) return cmd_train(targs);
    if (*eval) return cmd_eval(e_data, e_ckpt, e_split, e_metric);
    if (*bench) return cmd_bench(b_methods, b_nodes, b_dim, b_t, b_repeats, b_seed, b_cap, b_out);
    if (*knn) return cmd_knn(k_features, k_k, k_metric, k_out);
    if (*synth) return cmd_synth(s_n, s_degree, s_d, s_classes, s_h, s_seed, s_out);
    if (*probe) return cmd_probe(p_data, p_ckpt, p_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kRuntime;
}
