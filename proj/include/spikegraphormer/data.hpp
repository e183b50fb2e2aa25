#pragma once

// Graph datasets on disk and in memory, split generation, k-NN graph
// construction and a planted-partition generator.
//
// Directory layout (UTF-8 text, LF line endings):
//   meta.json    {"name", "num_nodes", "num_features", "num_classes", "multilabel"}
//   features.csv N lines of D comma-separated floats
//   labels.csv   N lines: one class id, or C comma-separated 0/1 (multilabel)
//   edges.tsv    "u<TAB>v" per line, 0-based
//   splits.json  {"train": [...], "valid": [...], "test": [...]}

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "spikegraphormer/errors.hpp"
#include "spikegraphormer/gcn.hpp"
#include "spikegraphormer/rng.hpp"
#include "spikegraphormer/tensor.hpp"

namespace sgf {

struct Splits {
  std::vector<std::size_t> train, valid, test;

  bool operator==(const Splits&) const = default;
};

struct GraphDataset {
  std::string name = "dataset";
  Tensor x;                            // [N x D_in]
  std::vector<std::int64_t> labels;    // single-label class ids
  Tensor targets;                      // multilabel [N x C] of 0/1
  bool multilabel = false;
  std::size_t num_classes = 0;
  bool directed = false;
  std::vector<Edge> edges;
  Splits splits;

  std::size_t num_nodes() const { return x.rows(); }
  std::size_t num_features() const { return x.cols(); }

  /// 0/1 targets for the BCE loss: the multilabel matrix, or a one-hot
  /// encoding of single labels.
  Tensor bce_targets() const {
    if (multilabel) return targets;
    Tensor t(Shape{num_nodes(), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) t(i, static_cast<std::size_t>(labels[i])) = 1.0f;
    return t;
  }

  void validate() const {
    const std::size_t n = num_nodes();
    if (x.shape().rank() != 2) throw DataError("dataset: feature matrix must be 2-D");
    if (multilabel) {
      if (targets.rows() != n || targets.cols() != num_classes) throw DataError("dataset: multilabel target shape");
    } else {
      if (labels.size() != n) throw DataError("dataset: label count differs from node count");
      for (std::size_t i = 0; i < n; ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
          throw DataError("dataset: label of node " + std::to_string(i) + " out of range");
    }
    for (const auto& [u, v] : edges)
      if (u >= n || v >= n) throw DataError("dataset: edge index out of range");
    std::vector<char> seen(n, 0);
    for (const auto* part : {&splits.train, &splits.valid, &splits.test})
      for (std::size_t i : *part) {
        if (i >= n) throw DataError("dataset: split index " + std::to_string(i) + " out of range");
        if (seen[i]) throw DataError("dataset: splits overlap at node " + std::to_string(i));
        seen[i] = 1;
      }
  }
};

namespace detail {

inline std::string read_text(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw DataError("missing file: " + p.string());
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view tok, const std::string& where) {
  tok = trim(tok);
  T value{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), value);
  if (ec != std::errc() || ptr != tok.data() + tok.size())
    throw DataError(where + ": cannot parse '" + std::string(tok) + "'");
  return value;
}

inline std::vector<std::string_view> split_on(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t p = line.find(sep, start);
    out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
    if (p == std::string_view::npos) break;
    start = p + 1;
  }
  return out;
}

inline std::string format_float(float v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out << text;
}

}  // namespace detail

/// Reads a features CSV ([N x D] floats), reporting the offending line on
/// malformed input.
inline Tensor read_features(const std::filesystem::path& path) {
  const std::string text = detail::read_text(path);
  const auto lines = detail::split_lines(text);
  const std::string fname = path.filename().string();
  if (lines.empty()) throw DataError(fname + ": no rows");
  const std::size_t d = detail::split_on(lines[0], ',').size();
  Tensor x(Shape{lines.size(), d});
  for (std::size_t r = 0; r < lines.size(); ++r) {
    const std::string where = fname + ":" + std::to_string(r + 1);
    const auto toks = detail::split_on(lines[r], ',');
    if (toks.size() != d)
      throw DataError(where + ": expected " + std::to_string(d) + " values, found " + std::to_string(toks.size()));
    for (std::size_t c = 0; c < d; ++c) {
      const float v = detail::parse_number<float>(toks[c], where);
      if (!std::isfinite(v)) throw DataError(where + ": non-finite feature");
      x(r, c) = v;
    }
  }
  return x;
}

inline std::string features_csv(const Tensor& x) {
  std::string out;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (c) out += ',';
      out += detail::format_float(x(r, c));
    }
    out += '\n';
  }
  return out;
}

inline std::string edges_tsv(const std::vector<Edge>& edges) {
  std::string out;
  for (const auto& [u, v] : edges) out += std::to_string(u) + '\t' + std::to_string(v) + '\n';
  return out;
}

inline GraphDataset load_dataset(const std::filesystem::path& dir) {
  using nlohmann::json;
  GraphDataset ds;
  json meta;
  try {
    meta = json::parse(detail::read_text(dir / "meta.json"));
    ds.name = meta.at("name").get<std::string>();
    ds.num_classes = meta.at("num_classes").get<std::size_t>();
    ds.multilabel = meta.at("multilabel").get<bool>();
    ds.directed = meta.value("directed", false);
  } catch (const json::exception& e) {
    throw DataError(std::string("meta.json: ") + e.what());
  }
  const std::size_t n = meta.at("num_nodes").get<std::size_t>();
  const std::size_t d = meta.at("num_features").get<std::size_t>();

  ds.x = read_features(dir / "features.csv");
  if (ds.x.rows() != n)
    throw DataError("features.csv: " + std::to_string(ds.x.rows()) + " rows but meta.json declares " +
                    std::to_string(n) + " nodes");
  if (ds.x.cols() != d)
    throw DataError("features.csv: " + std::to_string(ds.x.cols()) + " columns but meta.json declares " +
                    std::to_string(d));

  {
    const std::string text = detail::read_text(dir / "labels.csv");
    const auto lines = detail::split_lines(text);
    if (lines.size() != n)
      throw DataError("labels.csv: " + std::to_string(lines.size()) + " lines but " + std::to_string(n) + " nodes");
    if (ds.multilabel) ds.targets = Tensor(Shape{n, ds.num_classes});
    ds.labels.reserve(n);
    for (std::size_t r = 0; r < n; ++r) {
      const std::string where = "labels.csv:" + std::to_string(r + 1);
      if (ds.multilabel) {
        const auto toks = detail::split_on(lines[r], ',');
        if (toks.size() != ds.num_classes) throw DataError(where + ": expected " + std::to_string(ds.num_classes) + " columns");
        for (std::size_t c = 0; c < toks.size(); ++c) {
          const int v = detail::parse_number<int>(toks[c], where);
          if (v != 0 && v != 1) throw DataError(where + ": multilabel entries must be 0 or 1");
          ds.targets(r, c) = static_cast<float>(v);
        }
      } else {
        const auto y = detail::parse_number<std::int64_t>(lines[r], where);
        if (y < 0 || static_cast<std::size_t>(y) >= ds.num_classes)
          throw DataError(where + ": class " + std::to_string(y) + " outside [0, " + std::to_string(ds.num_classes) + ")");
        ds.labels.push_back(y);
      }
    }
  }

  {
    const std::string text = detail::read_text(dir / "edges.tsv");
    const auto lines = detail::split_lines(text);
    ds.edges.reserve(lines.size());
    for (std::size_t r = 0; r < lines.size(); ++r) {
      const std::string where = "edges.tsv:" + std::to_string(r + 1);
      if (detail::trim(lines[r]).empty()) continue;
      const auto toks = detail::split_on(lines[r], '\t');
      if (toks.size() != 2) throw DataError(where + ": expected 'u<TAB>v'");
      const auto u = detail::parse_number<std::size_t>(toks[0], where);
      const auto v = detail::parse_number<std::size_t>(toks[1], where);
      if (u >= n || v >= n)
        throw DataError(where + ": node index " + std::to_string(std::max(u, v)) + " out of range for " +
                        std::to_string(n) + " nodes");
      ds.edges.emplace_back(u, v);
    }
  }

  try {
    const json sp = json::parse(detail::read_text(dir / "splits.json"));
    ds.splits.train = sp.at("train").get<std::vector<std::size_t>>();
    ds.splits.valid = sp.at("valid").get<std::vector<std::size_t>>();
    ds.splits.test = sp.at("test").get<std::vector<std::size_t>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("splits.json: ") + e.what());
  }
  ds.validate();
  return ds;
}

inline void save_dataset(const GraphDataset& ds, const std::filesystem::path& dir) {
  using nlohmann::json;
  ds.validate();
  std::filesystem::create_directories(dir);
  json meta = {{"name", ds.name},
               {"num_nodes", ds.num_nodes()},
               {"num_features", ds.num_features()},
               {"num_classes", ds.num_classes},
               {"multilabel", ds.multilabel}};
  if (ds.directed) meta["directed"] = true;
  detail::write_text(dir / "meta.json", meta.dump(2) + "\n");
  detail::write_text(dir / "features.csv", features_csv(ds.x));
  std::string labels;
  for (std::size_t r = 0; r < ds.num_nodes(); ++r) {
    if (ds.multilabel) {
      for (std::size_t c = 0; c < ds.num_classes; ++c) {
        if (c) labels += ',';
        labels += ds.targets(r, c) != 0.0f ? '1' : '0';
      }
    } else {
      labels += std::to_string(ds.labels[r]);
    }
    labels += '\n';
  }
  detail::write_text(dir / "labels.csv", labels);
  detail::write_text(dir / "edges.tsv", edges_tsv(ds.edges));
  json sp = {{"train", ds.splits.train}, {"valid", ds.splits.valid}, {"test", ds.splits.test}};
  detail::write_text(dir / "splits.json", sp.dump() + "\n");
}

inline Splits random_split(std::size_t n, std::array<double, 3> fractions, std::uint64_t seed) {
  if (n < 4) throw ConfigError("random_split: need at least 4 nodes");
  for (double f : fractions)
    if (f < 0.0) throw ConfigError("random_split: negative fraction");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw ConfigError("random_split: fractions must sum to 1");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n)));
  const auto n_valid = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));
  Splits s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.valid.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), perm.end());
  return s;
}

inline Splits random_split(std::size_t n, std::uint64_t seed) { return random_split(n, {0.5, 0.25, 0.25}, seed); }

enum class KnnMetric { cosine, euclidean };

/// k nearest neighbours per node (self excluded, ties to the lower index),
/// symmetrized as the union of directed picks. Returned as sorted (u < v)
/// pairs. Under cosine, a zero-norm query row falls back to euclidean
/// distance; its index is appended to `fallback_rows` when given.
inline std::vector<Edge> knn_graph(const Tensor& x, std::size_t k, KnnMetric metric = KnnMetric::cosine,
                                   std::vector<std::size_t>* fallback_rows = nullptr) {
  const std::size_t n = x.rows(), d = x.cols();
  if (k == 0) throw ConfigError("knn_graph: k must be positive");
  if (k >= n) throw ConfigError("knn_graph: k = " + std::to_string(k) + " must be below the node count " + std::to_string(n));
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += static_cast<double>(x(i, c)) * x(i, c);
    norms[i] = std::sqrt(s);
  }
  std::vector<Edge> directed;
  directed.reserve(n * k);
  std::vector<std::pair<double, std::size_t>> cand;
  for (std::size_t i = 0; i < n; ++i) {
    const bool cosine = metric == KnnMetric::cosine && norms[i] > 0.0;
    if (metric == KnnMetric::cosine && !cosine && fallback_rows) fallback_rows->push_back(i);
    cand.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dist;
      if (cosine) {
        double dot = 0;
        for (std::size_t c = 0; c < d; ++c) dot += static_cast<double>(x(i, c)) * x(j, c);
        dist = norms[j] > 0.0 ? 1.0 - dot / (norms[i] * norms[j]) : 1.0;
      } else {
        double s = 0;
        for (std::size_t c = 0; c < d; ++c) {
          const double diff = static_cast<double>(x(i, c)) - x(j, c);
          s += diff * diff;
        }
        dist = s;
      }
      cand.emplace_back(dist, j);
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end());
    for (std::size_t r = 0; r < k; ++r) {
      const std::size_t j = cand[r].second;
      directed.emplace_back(std::min(i, j), std::max(i, j));
    }
  }
  std::sort(directed.begin(), directed.end());
  directed.erase(std::unique(directed.begin(), directed.end()), directed.end());
  return directed;
}

/// Planted-partition generator. Classes are uniform; each edge is
/// intra-class with probability `homophily`; features are class means
/// (standard normal, scaled by the signal-to-noise constant) plus unit
/// Gaussian noise. Splits are 50/25/25 with the same seed.
inline GraphDataset synth_graph(std::size_t n, double avg_degree, std::size_t d_in, std::size_t classes,
                                double homophily, std::uint64_t seed) {
  constexpr double kSignalToNoise = 1.0;
  if (classes == 0 || d_in == 0) throw ConfigError("synth_graph: classes and features must be positive");
  if (n < classes) throw ConfigError("synth_graph: need at least as many nodes as classes");
  if (!(avg_degree >= 0.0) || !(homophily >= 0.0 && homophily <= 1.0))
    throw ConfigError("synth_graph: avg_degree >= 0 and homophily in [0, 1] required");
  Rng rng(seed);
  GraphDataset ds;
  ds.name = "synth";
  ds.num_classes = classes;
  ds.labels.resize(n);
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<std::int64_t>(rng.below(classes));
    members[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }

  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(n) * avg_degree / 2.0));
  const std::size_t max_pairs = n * (n - 1) / 2;
  if (target > max_pairs) throw ConfigError("synth_graph: average degree too high for the node count");
  std::unordered_set<std::uint64_t> seen;
  const std::size_t max_attempts = 100 * target + 1000;
  for (std::size_t attempt = 0; ds.edges.size() < target && attempt < max_attempts; ++attempt) {
    const std::size_t u = static_cast<std::size_t>(rng.below(n));
    const auto cu = static_cast<std::size_t>(ds.labels[u]);
    std::size_t v;
    if (rng.uniform() < homophily) {
      const auto& pool = members[cu];
      if (pool.size() < 2) continue;
      v = pool[static_cast<std::size_t>(rng.below(pool.size()))];
    } else {
      if (members[cu].size() == n) continue;
      do {
        v = static_cast<std::size_t>(rng.below(n));
      } while (static_cast<std::size_t>(ds.labels[v]) == cu);
    }
    if (u == v) continue;
    const std::size_t a = std::min(u, v), b = std::max(u, v);
    if (!seen.insert(static_cast<std::uint64_t>(a) * n + b).second) continue;
    ds.edges.emplace_back(a, b);
  }

  std::vector<double> means(classes * d_in);
  for (auto& m : means) m = rng.normal() * kSignalToNoise;
  ds.x = Tensor(Shape{n, d_in});
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(ds.labels[i]);
    for (std::size_t j = 0; j < d_in; ++j) ds.x(i, j) = static_cast<float>(means[c * d_in + j] + rng.normal());
  }
  ds.splits = n >= 4 ? random_split(n, seed) : Splits{};
  return ds;
}

}  // namespace sgf
