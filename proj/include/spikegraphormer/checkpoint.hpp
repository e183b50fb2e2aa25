#pragma once

// Single-file model checkpoint:
//
//   bytes 0..7   magic "SGFCKPT1"
//   bytes 8..15  header length H (uint64, little-endian)
//   next H bytes JSON header: {"config": {...}, "tensors": [{"name", "shape", "offset"}]}
//   remainder    little-endian float32 payload, tensors in manifest order;
//                offsets are relative to the payload start

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikegraphormer/errors.hpp"
#include "spikegraphormer/model.hpp"

namespace sgf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'G', 'F', 'C', 'K', 'P', 'T', '1'};

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"in_dim", c.in_dim},
          {"dim", c.dim},
          {"num_classes", c.num_classes},
          {"time_steps", c.time_steps},
          {"encoder_blocks", c.encoder_blocks},
          {"gnn_layers", c.gnn_layers},
          {"heads", c.heads},
          {"alpha", c.alpha},
          {"dropout", c.dropout},
          {"fusion", c.fusion == Fusion::concat ? "concat" : "add"},
          {"u_th", c.lif.u_th},
          {"v_reset", c.lif.v_reset},
          {"lif_beta", c.lif.beta},
          {"surrogate_width", c.lif.surrogate_width}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.in_dim = j.at("in_dim").get<std::size_t>();
    c.dim = j.at("dim").get<std::size_t>();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.time_steps = j.at("time_steps").get<std::size_t>();
    c.encoder_blocks = j.at("encoder_blocks").get<std::size_t>();
    c.gnn_layers = j.at("gnn_layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.alpha = j.at("alpha").get<double>();
    c.dropout = j.at("dropout").get<double>();
    const auto fusion = j.at("fusion").get<std::string>();
    if (fusion != "add" && fusion != "concat") throw DataError("checkpoint: unknown fusion '" + fusion + "'");
    c.fusion = fusion == "concat" ? Fusion::concat : Fusion::add;
    c.lif.u_th = j.at("u_th").get<double>();
    c.lif.v_reset = j.at("v_reset").get<double>();
    c.lif.beta = j.at("lif_beta").get<double>();
    c.lif.surrogate_width = j.at("surrogate_width").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint config: ") + e.what());
  }
  return c;
}

namespace detail {

template <typename Fn>
void for_each_state_tensor(SpikeGraphormer& m, Fn&& fn) {
  m.for_each_parameter([&](const std::string& name, Parameter<float>& p) { fn(name, p.value); });
  m.for_each_buffer([&](const std::string& name, Tensor& t) { fn(name, t); });
}

}  // namespace detail

inline void save_checkpoint(SpikeGraphormer& m, const std::filesystem::path& path) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  detail::for_each_state_tensor(m, [&](const std::string& name, Tensor& t) {
    std::vector<std::size_t> dims;
    for (std::size_t i = 0; i < t.shape().rank(); ++i) dims.push_back(t.shape()[i]);
    manifest.push_back({{"name", name}, {"shape", dims}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  });
  const nlohmann::json header = {{"config", config_to_json(m.config)}, {"tensors", manifest}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  detail::for_each_state_tensor(m, [&](const std::string&, Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
  });
  if (!out) throw DataError("short write on checkpoint " + path.string());
}

inline SpikeGraphormer load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError("checkpoint: bad magic in " + path.string());
  if (!in.read(reinterpret_cast<char*>(&len), sizeof len) || len > (std::uint64_t{1} << 32))
    throw DataError("checkpoint: bad header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw DataError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header: ") + e.what());
  }
  const ModelConfig cfg = config_from_json(header.at("config"));
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint config invalid: ") + e.what());
  }
  SpikeGraphormer m(cfg, 0);
  const auto& tensors = header.at("tensors");
  const std::streamoff payload = in.tellg();
  std::size_t idx = 0;
  detail::for_each_state_tensor(m, [&](const std::string& name, Tensor& t) {
    if (idx >= tensors.size()) throw DataError("checkpoint: manifest is missing " + name);
    const auto& entry = tensors[idx++];
    if (entry.at("name").get<std::string>() != name)
      throw DataError("checkpoint: expected tensor " + name + ", found " + entry.at("name").get<std::string>());
    const auto dims = entry.at("shape").get<std::vector<std::size_t>>();
    bool same = dims.size() == t.shape().rank();
    for (std::size_t i = 0; same && i < dims.size(); ++i) same = dims[i] == t.shape()[i];
    if (!same)
      throw DataError("checkpoint: shape mismatch for " + name);
    in.seekg(payload + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    if (!in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
      throw DataError("checkpoint: truncated payload at " + name);
  });
  if (idx != tensors.size()) throw DataError("checkpoint: manifest has extra tensors");
  return m;
}

}  // namespace sgf
