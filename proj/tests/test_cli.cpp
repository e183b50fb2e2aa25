#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "test_util.hpp"

using namespace sgf;
using namespace sgf::testing;

namespace {

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

CliRun run_cli(const std::string& args) {
  TempDir scratch;
  const std::string cmd = std::string("'") + SGF_CLI + "' " + args + " > '" + (scratch / "out").string() + "' 2> '" +
                          (scratch / "err").string() + "'";
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(scratch / "out");
  r.err = slurp(scratch / "err");
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Trains two epochs on the 3-node fixture into `out`.
CliRun smoke_train(const std::filesystem::path& out) {
  return run_cli("train --data " + q(fixture("tiny3")) + " --max-epochs 2 --dim 8 --record-timing false --out " + q(out));
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run_cli("--help").code, 0);
  for (const char* sub : {"train", "eval", "bench", "knn-build", "synth", "probe"})
    EXPECT_EQ(run_cli(std::string(sub) + " --help").code, 0) << sub;
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("fly").code, 2);
  EXPECT_EQ(run_cli("bench --no-such-flag 1").code, 2);
}

TEST(Cli, TrainSmokeWritesArtifacts) {
  TempDir dir;
  CliRun r = smoke_train(dir / "run");
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string history = slurp(dir / "run" / "history.csv");
  EXPECT_EQ(line_count(history), 3u);  // header + 2 epochs
  EXPECT_EQ(history.substr(0, history.find('\n')), "epoch,train_loss,valid_metric,test_metric,epoch_ms");
  auto result = nlohmann::json::parse(slurp(dir / "run" / "result.json"));
  EXPECT_EQ(result["epochs"], 2);
  for (const char* key : {"test_metric", "valid_metric", "wall_s", "config"}) EXPECT_TRUE(result.contains(key)) << key;
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "model.ckpt"));
  EXPECT_EQ(nlohmann::json::parse(r.out)["epochs"], 2);
}

TEST(Cli, TrainIsDeterministic) {
  TempDir dir;
  ASSERT_EQ(smoke_train(dir / "a").code, 0);
  ASSERT_EQ(smoke_train(dir / "b").code, 0);
  EXPECT_EQ(slurp(dir / "a" / "history.csv"), slurp(dir / "b" / "history.csv"));
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "a" / "result.json"))["test_metric"],
            nlohmann::json::parse(slurp(dir / "b" / "result.json"))["test_metric"]);
}

TEST(Cli, ConfigFileAndFlagLayering) {
  TempDir dir;
  std::ofstream(dir / "cfg.txt") << "max_epochs = 5\ndim = 8\nrecord_timing = false\n";
  CliRun r = run_cli("train --data " + q(fixture("tiny3")) + " --config " + q(dir / "cfg.txt") +
                  " --set max_epochs=3 --out " + q(dir / "run"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(slurp(dir / "run" / "history.csv")), 4u);
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "run" / "result.json"))["config"]["dim"], 8);
}

TEST(Cli, TrainErrorsMapToExitCodes) {
  TempDir dir;
  std::filesystem::copy(fixture("tiny3"), dir / "d", std::filesystem::copy_options::recursive);
  std::filesystem::remove(dir / "d" / "labels.csv");
  CliRun missing = run_cli("train --data " + q(dir / "d") + " --max-epochs 2 --out " + q(dir / "run"));
  EXPECT_EQ(missing.code, 3);
  EXPECT_NE(missing.err.find("labels.csv"), std::string::npos) << missing.err;
  EXPECT_EQ(line_count(missing.err), 1u);

  CliRun bad_cfg = run_cli("train --data " + q(fixture("tiny3")) + " --alpha 2 --out " + q(dir / "run"));
  EXPECT_EQ(bad_cfg.code, 2);
  EXPECT_EQ(run_cli("train --data " + q(fixture("tiny3")) + " --set nonsense=1").code, 2);
  EXPECT_EQ(run_cli("train --data " + q(fixture("tiny3")) + " --config " + q(dir / "absent.txt")).code, 2);
}

TEST(Cli, EvalPrintsMetricDeterministically) {
  TempDir dir;
  ASSERT_EQ(smoke_train(dir / "run").code, 0);
  const std::string args = "eval --data " + q(fixture("tiny3")) + " --checkpoint " + q(dir / "run" / "model.ckpt");
  CliRun a = run_cli(args), b = run_cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(line_count(a.out), 1u);
  const double v = std::stod(a.out);
  EXPECT_GE(v, 0.0);
  EXPECT_LE(v, 1.0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(run_cli(args + " --split train --metric accuracy").code, 0);
  EXPECT_EQ(run_cli(args + " --split nowhere").code, 2);
}

TEST(Cli, EvalWrongDimensionCheckpoint) {
  TempDir dir;
  ASSERT_EQ(smoke_train(dir / "run").code, 0);
  ASSERT_EQ(run_cli("synth --n 40 --d-in 5 --classes 2 --out " + q(dir / "other")).code, 0);
  CliRun r = run_cli("eval --data " + q(dir / "other") + " --checkpoint " + q(dir / "run" / "model.ckpt"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("features"), std::string::npos);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  EXPECT_EQ(run_cli("eval --data " + q(fixture("tiny3")) + " --checkpoint " + q(dir / "junk.ckpt")).code, 3);
}

TEST(Cli, KnnBuildMatchesHandCaseAndIsIdempotent) {
  TempDir dir;
  std::filesystem::copy(fixture("tiny3"), dir / "d", std::filesystem::copy_options::recursive);
  std::filesystem::remove(dir / "d" / "edges.tsv");
  const std::string args =
      "knn-build --features " + q(dir / "d" / "features.csv") + " --k 1 --metric euclidean --out " + q(dir / "d");
  ASSERT_EQ(run_cli(args).code, 0);
  const std::string first = slurp(dir / "d" / "edges.tsv");
  EXPECT_EQ(first, "0\t1\n1\t2\n");
  ASSERT_EQ(run_cli(args).code, 0);
  EXPECT_EQ(slurp(dir / "d" / "edges.tsv"), first);
  EXPECT_EQ(load_dataset(dir / "d").edges, load_dataset(fixture("tiny3")).edges);
  EXPECT_EQ(run_cli("knn-build --features " + q(dir / "d" / "features.csv") + " --k 3 --out " + q(dir / "d")).code, 2);
}

TEST(Cli, KnnBuildReportsZeroRowFallback) {
  TempDir dir;
  std::filesystem::create_directories(dir / "d");
  std::ofstream(dir / "f.csv") << "0,0\n1,0\n0,1\n";
  CliRun r = run_cli("knn-build --features " + q(dir / "f.csv") + " --k 1 --out " + q(dir / "d"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("row 0"), std::string::npos);
}

TEST(Cli, BenchRowCounts) {
  TempDir dir;
  CliRun both = run_cli("bench --nodes 64,128 --dim 8 --repeats 1 --out " + q(dir / "b.csv"));
  ASSERT_EQ(both.code, 0) << both.err;
  EXPECT_EQ(line_count(slurp(dir / "b.csv")), 1u + 4u);
  CliRun sga = run_cli("bench --methods sga --nodes 64 --dim 8 --repeats 1");
  ASSERT_EQ(sga.code, 0);
  EXPECT_EQ(line_count(sga.out), 2u);
  EXPECT_EQ(sga.out.rfind("sga,64,8,1,", sga.out.find('\n') + 1), sga.out.find('\n') + 1);
  EXPECT_EQ(run_cli("bench --methods sga,mlp --nodes 64").code, 2);
  EXPECT_EQ(run_cli("bench --nodes 64,32").code, 2);
}

TEST(Cli, SynthAndProbe) {
  TempDir dir;
  CliRun s = run_cli("synth --n 100 --avg-degree 4 --d-in 6 --classes 3 --seed 2 --out " + q(dir / "d"));
  ASSERT_EQ(s.code, 0) << s.err;
  GraphDataset ds = load_dataset(dir / "d");
  EXPECT_EQ(ds.num_nodes(), 100u);
  EXPECT_EQ(s.out, "100," + std::to_string(ds.edges.size()) + "\n");
  CliRun p = run_cli("probe --data " + q(dir / "d"));
  ASSERT_EQ(p.code, 0) << p.err;
  std::istringstream lines(p.out);
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const double density = std::stod(line.substr(line.find(',') + 1));
    EXPECT_GE(density, 0.0);
    EXPECT_LE(density, 1.0);
    ++n;
  }
  EXPECT_EQ(n, 8u);
}
