#include <gtest/gtest.h>

#include <fstream>

#include "model_checks.hpp"

using namespace sgf;
using namespace sgf::testing;

TEST(Checkpoint, RoundTripPreservesEveryTensorAndLogits) {
  TempDir dir;
  ModelConfig cfg = tiny_config(5, 8, 3, 3, 2, 2, 0.4);
  cfg.heads = 2;
  cfg.fusion = Fusion::concat;
  cfg.lif.u_th = 0.8;
  SpikeGraphormer m(cfg, 17);
  Rng rng(1);
  m.for_each_buffer([&](const std::string&, Tensor& t) {
    for (auto& v : t.values()) v = static_cast<float>(rng.uniform(0.5, 1.5));
  });
  save_checkpoint(m, dir / "m.ckpt");
  SpikeGraphormer back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(config_to_json(back.config), config_to_json(cfg));
  std::vector<Tensor> a, b;
  m.for_each_parameter([&](const std::string&, Parameter<float>& p) { a.push_back(p.value); });
  m.for_each_buffer([&](const std::string&, Tensor& t) { a.push_back(t); });
  back.for_each_parameter([&](const std::string&, Parameter<float>& p) { b.push_back(p.value); });
  back.for_each_buffer([&](const std::string&, Tensor& t) { b.push_back(t); });
  EXPECT_EQ(a, b);
  Tensor x = random_tensor(Shape{9, 5}, rng);
  auto g = std::make_shared<const CsrGraph>(normalize_adjacency(ring_edges(9), 9));
  EXPECT_EQ(predict(back, x, g), predict(m, x, g));
}

TEST(Checkpoint, BadMagicRejected) {
  TempDir dir;
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << "NOTACKPT" << std::string(64, '\0');
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST(Checkpoint, TruncatedPayloadRejected) {
  TempDir dir;
  SpikeGraphormer m(tiny_config(3, 4, 2, 2, 1, 1, 0.5), 1);
  save_checkpoint(m, dir / "m.ckpt");
  const auto size = std::filesystem::file_size(dir / "m.ckpt");
  std::filesystem::resize_file(dir / "m.ckpt", size - 8);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), DataError);
}

TEST(Config, ParsesEveryKey) {
  TrainConfig cfg;
  apply_config_text(cfg, R"(# comment
lr = 0.005
max_epochs = 12   # trailing
patience = 3
batch_size = 64
seed = 99
loss = bce
metric = rocauc
record_timing = false
eval_chunk = 128
dim = 32
time_steps = 4
encoder_blocks = 2
gnn_layers = 3
heads = 4
alpha = 0.25
dropout = 0.1
fusion = concat
u_th = 0.75
v_reset = -0.1
lif_beta = 0.3
surrogate_width = 2
)");
  EXPECT_EQ(cfg.lr, 0.005);
  EXPECT_EQ(cfg.max_epochs, 12u);
  EXPECT_EQ(cfg.patience, 3u);
  EXPECT_EQ(cfg.batch_size, std::optional<std::size_t>(64));
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.loss, std::optional<LossKind>(LossKind::bce));
  EXPECT_EQ(cfg.metric, std::optional<Metric>(Metric::rocauc));
  EXPECT_FALSE(cfg.record_timing);
  EXPECT_EQ(cfg.eval_chunk, 128u);
  EXPECT_EQ(cfg.model.dim, 32u);
  EXPECT_EQ(cfg.model.time_steps, 4u);
  EXPECT_EQ(cfg.model.encoder_blocks, 2u);
  EXPECT_EQ(cfg.model.gnn_layers, 3u);
  EXPECT_EQ(cfg.model.heads, 4u);
  EXPECT_EQ(cfg.model.alpha, 0.25);
  EXPECT_EQ(cfg.model.dropout, 0.1);
  EXPECT_EQ(cfg.model.fusion, Fusion::concat);
  EXPECT_EQ(cfg.model.lif.u_th, 0.75);
  EXPECT_EQ(cfg.model.lif.v_reset, -0.1);
  EXPECT_EQ(cfg.model.lif.beta, 0.3);
  EXPECT_EQ(cfg.model.lif.surrogate_width, 2.0);
}

TEST(Config, ResetKeywords) {
  TrainConfig cfg;
  apply_config_text(cfg, "batch_size = 8\nloss = nll\n");
  apply_config_text(cfg, "batch_size = full\nloss = auto\nmetric = auto");
  EXPECT_FALSE(cfg.batch_size.has_value());
  EXPECT_FALSE(cfg.loss.has_value());
  EXPECT_FALSE(cfg.metric.has_value());
}

TEST(Config, ErrorsNameTheLine) {
  TrainConfig cfg;
  auto message = [&](const char* text) {
    try {
      apply_config_text(cfg, text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("lr = 0.1\nbogus = 3\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("lr = fast").find("line 1"), std::string::npos);
  EXPECT_NE(message("\n\nno equals sign").find("line 3"), std::string::npos);
  EXPECT_FALSE(message("fusion = multiply").empty());
}

TEST(Config, EveryListedKeyIsAccepted) {
  for (const auto& key : config_keys()) {
    TrainConfig cfg;
    const std::string value = key == "loss"           ? "nll"
                              : key == "metric"        ? "accuracy"
                              : key == "fusion"        ? "add"
                              : key == "record_timing" ? "true"
                                                       : "1";
    EXPECT_NO_THROW(apply_setting(cfg, key, value)) << key;
  }
}

TEST(Config, JsonDumpReflectsSettings) {
  TrainConfig cfg;
  apply_config_text(cfg, "batch_size = 16\nalpha = 0.7");
  auto j = train_config_to_json(cfg);
  EXPECT_EQ(j["batch_size"], 16);
  EXPECT_EQ(j["alpha"], 0.7);
  EXPECT_EQ(j["loss"], "auto");
  EXPECT_FALSE(j.contains("in_dim"));
}
