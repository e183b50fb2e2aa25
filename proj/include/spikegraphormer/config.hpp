#pragma once

// Flat `key = value` configuration text for TrainConfig. Blank lines and
// everything after `#` are ignored. Keys:
//
//   lr max_epochs patience batch_size seed loss metric record_timing eval_chunk
//   dim time_steps encoder_blocks gnn_layers heads alpha dropout fusion
//   u_th v_reset lif_beta surrogate_width
//
// batch_size / loss / metric accept "full" / "auto" to clear them.

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "spikegraphormer/checkpoint.hpp"
#include "spikegraphormer/errors.hpp"
#include "spikegraphormer/trainer.hpp"

namespace sgf {

namespace detail {

inline std::string_view trim_ws(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_config_value(std::string_view key, std::string_view v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config: bad value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean '" + std::string(v) + "' for " + std::string(key));
}

}  // namespace detail

inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "lr",       "max_epochs", "patience",       "batch_size", "seed",  "loss",    "metric",   "record_timing",
      "eval_chunk", "dim",      "time_steps",     "encoder_blocks", "gnn_layers", "heads", "alpha", "dropout",
      "fusion",   "u_th",       "v_reset",        "lif_beta",   "surrogate_width"};
  return keys;
}

/// Sets one field. Unknown keys and unparsable values raise ConfigError.
inline void apply_setting(TrainConfig& cfg, std::string_view key, std::string_view raw) {
  using detail::parse_config_value;
  const std::string_view v = detail::trim_ws(raw);
  ModelConfig& m = cfg.model;
  if (key == "lr") cfg.lr = parse_config_value<double>(key, v);
  else if (key == "max_epochs") cfg.max_epochs = parse_config_value<std::size_t>(key, v);
  else if (key == "patience") cfg.patience = parse_config_value<std::size_t>(key, v);
  else if (key == "batch_size") {
    if (v == "full") cfg.batch_size.reset();
    else cfg.batch_size = parse_config_value<std::size_t>(key, v);
  } else if (key == "seed") cfg.seed = parse_config_value<std::uint64_t>(key, v);
  else if (key == "loss") {
    if (v == "auto") cfg.loss.reset();
    else if (v == "nll") cfg.loss = LossKind::nll;
    else if (v == "bce") cfg.loss = LossKind::bce;
    else throw ConfigError("config: loss must be nll, bce or auto");
  } else if (key == "metric") {
    if (v == "auto") cfg.metric.reset();
    else if (v == "accuracy") cfg.metric = Metric::accuracy;
    else if (v == "rocauc") cfg.metric = Metric::rocauc;
    else throw ConfigError("config: metric must be accuracy, rocauc or auto");
  } else if (key == "record_timing") cfg.record_timing = detail::parse_bool(key, v);
  else if (key == "eval_chunk") cfg.eval_chunk = parse_config_value<std::size_t>(key, v);
  else if (key == "dim") m.dim = parse_config_value<std::size_t>(key, v);
  else if (key == "time_steps") m.time_steps = parse_config_value<std::size_t>(key, v);
  else if (key == "encoder_blocks") m.encoder_blocks = parse_config_value<std::size_t>(key, v);
  else if (key == "gnn_layers") m.gnn_layers = parse_config_value<std::size_t>(key, v);
  else if (key == "heads") m.heads = parse_config_value<std::size_t>(key, v);
  else if (key == "alpha") m.alpha = parse_config_value<double>(key, v);
  else if (key == "dropout") m.dropout = parse_config_value<double>(key, v);
  else if (key == "fusion") {
    if (v == "add") m.fusion = Fusion::add;
    else if (v == "concat") m.fusion = Fusion::concat;
    else throw ConfigError("config: fusion must be add or concat");
  } else if (key == "u_th") m.lif.u_th = parse_config_value<double>(key, v);
  else if (key == "v_reset") m.lif.v_reset = parse_config_value<double>(key, v);
  else if (key == "lif_beta") m.lif.beta = parse_config_value<double>(key, v);
  else if (key == "surrogate_width") m.lif.surrogate_width = parse_config_value<double>(key, v);
  else throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

inline void apply_config_text(TrainConfig& cfg, std::string_view text) {
  std::size_t line_no = 0, start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim_ws(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    const auto key = detail::trim_ws(line.substr(0, eq));
    try {
      apply_setting(cfg, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
    if (end == text.size()) break;
  }
}

inline void apply_config_file(TrainConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str());
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j = config_to_json(cfg.model);
  j.erase("in_dim");
  j.erase("num_classes");
  j["lr"] = cfg.lr;
  j["max_epochs"] = cfg.max_epochs;
  j["patience"] = cfg.patience;
  j["batch_size"] = cfg.batch_size ? nlohmann::json(*cfg.batch_size) : nlohmann::json("full");
  j["seed"] = cfg.seed;
  j["loss"] = !cfg.loss ? "auto" : (*cfg.loss == LossKind::nll ? "nll" : "bce");
  j["metric"] = !cfg.metric ? "auto" : (*cfg.metric == Metric::accuracy ? "accuracy" : "rocauc");
  j["record_timing"] = cfg.record_timing;
  j["eval_chunk"] = cfg.eval_chunk;
  return j;
}

}  // namespace sgf
