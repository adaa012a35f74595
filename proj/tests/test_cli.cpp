#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pruneood/cli.hpp"

using namespace pruneood;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = PRUNEOOD_CLI_PATH;
const fs::path kSource = PRUNEOOD_SOURCE_DIR;

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI with `args` (shell syntax), capturing stdout and stderr.
Result run(const std::string& args, const std::string& prefix = "") {
  const fs::path log = fs::temp_directory_path() / ("pruneood_cli_" + std::to_string(::getpid()) + ".log");
  const std::string cmd = prefix + kCli.string() + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  std::ifstream is(log);
  r.out.assign(std::istreambuf_iterator<char>(is), {});
  fs::remove(log);
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

config::KeyValues resolved(const fs::path& dir) {
  std::ifstream is(dir / cli::kResolvedConfigName);
  return config::parse(is);
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("pruneood_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // A small base-shift dataset in <dir>/data.
  fs::path small_data(std::size_t train_size = 30) {
    const fs::path d = dir_ / "data";
    const auto r = run("gen-data --seed 4 --data-dir " + d.string() + " --set train_size=" +
                       std::to_string(train_size) + " --set val_size=15 --set test_size=15");
    EXPECT_EQ(r.code, 0) << r.out;
    return d;
  }

  fs::path train_small(const fs::path& data, const std::string& name, const std::string& extra = "") {
    const fs::path out = dir_ / name;
    const auto r = run("train --seed 4 --data-dir " + data.string() + " --out-dir " + out.string() +
                       " --set epochs=2 --set pretrain_epochs=1 --set width=8 --set batch_size=16 " + extra);
    EXPECT_EQ(r.code, 0) << r.out;
    return out;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, NoSubcommandIsUsageError) {
  EXPECT_EQ(run("").code, cli::kExitUsage);
  EXPECT_EQ(run("train --no-such-flag").code, cli::kExitUsage);
}

TEST_F(Cli, GenDataIsByteIdenticalAcrossRuns) {
  for (const char* name : {"a", "b"}) {
    const auto r = run("gen-data --seed 9 --data-dir " + (dir_ / name).string() + " --set train_size=40");
    ASSERT_EQ(r.code, 0) << r.out;
  }
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "stats.json"}) {
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
    EXPECT_FALSE(slurp(dir_ / "a" / f).empty()) << f;
  }
  const auto kv = resolved(dir_ / "a");
  EXPECT_EQ(kv.at("seed"), "9");
  EXPECT_EQ(kv.at("train_size"), "40");
}

TEST_F(Cli, ConceptStatsShowMatchedPairFrequency) {
  const auto r = run("gen-data --seed 2 --data-dir " + (dir_ / "c").string() +
                     " --set split=concept --set bias=0.9 --set train_size=3000");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto stats = nlohmann::json::parse(slurp(dir_ / "c" / "stats.json"));
  const double matched = stats["train"]["matched_pair_fraction"].get<double>();
  // Binomial standard error at n = 3000 is about 0.0055.
  EXPECT_NEAR(matched, 0.9, 0.03);
  EXPECT_NEAR(stats["test"]["matched_pair_fraction"].get<double>(), 1.0 / 3.0, 0.1);
}

TEST_F(Cli, OutputDirectoryIsCreatedOrReported) {
  const fs::path nested = dir_ / "x" / "y" / "z";
  ASSERT_EQ(run("gen-data --data-dir " + nested.string() + " --set train_size=6 --set val_size=3 --set test_size=3").code,
            0);
  EXPECT_TRUE(fs::exists(nested / "train.jsonl"));
  // A directory below a regular file can never be created.
  std::ofstream(dir_ / "plain").put('x');
  const auto bad = run("gen-data --data-dir " + (dir_ / "plain" / "sub").string() + " --set train_size=6");
  EXPECT_EQ(bad.code, cli::kExitFilesystem);
  EXPECT_NE(bad.out.find("plain"), std::string::npos) << bad.out;
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  const fs::path cfg = dir_ / "run.cfg";
  std::ofstream(cfg) << "# comment\nseed = 5\nepochs = 7\nwidth = 12\ntrain_size = 20\n";
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --data-dir " + (dir_ / "d1").string()).code, 0);
  auto kv = resolved(dir_ / "d1");
  EXPECT_EQ(kv.at("seed"), "5");
  EXPECT_EQ(kv.at("epochs"), "7");
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --set epochs=3 --set seed=6 --seed 8 --data-dir " +
                (dir_ / "d2").string())
                .code,
            0);
  kv = resolved(dir_ / "d2");
  EXPECT_EQ(kv.at("epochs"), "3");
  EXPECT_EQ(kv.at("seed"), "8");  // the dedicated flag beats --set and the file
  EXPECT_EQ(kv.at("width"), "12");
}

TEST_F(Cli, ShippedConfigsResolve) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(kSource / "configs")) {
    if (e.path().extension() != ".cfg") continue;
    ++n;
    const fs::path d = dir_ / e.path().stem();
    const auto r = run("gen-data --config " + e.path().string() + " --data-dir " + d.string() +
                       " --set train_size=3 --set val_size=3 --set test_size=3");
    ASSERT_EQ(r.code, 0) << e.path() << '\n' << r.out;
    const auto kv = resolved(d);
    std::ifstream in(e.path());
    const auto file = config::parse(in, e.path().string());
    for (const auto& [k, v] : file) {
      if (k.ends_with("_size")) continue;  // overridden above
      EXPECT_EQ(kv.at(k), v) << e.path() << " key " << k;
    }
  }
  EXPECT_GE(n, 5u);
}

TEST_F(Cli, UnknownOrMalformedKeysAreUsageErrors) {
  const fs::path cfg = dir_ / "bad.cfg";
  std::ofstream(cfg) << "epochs = 3\nlamda1 = 10\n";
  const auto r = run("gen-data --config " + cfg.string() + " --data-dir " + (dir_ / "d").string());
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.out.find("lamda1"), std::string::npos) << r.out;
  EXPECT_EQ(run("gen-data --set nonsense=1 --data-dir " + (dir_ / "d").string()).code, cli::kExitUsage);
  EXPECT_EQ(run("gen-data --set epochs=many --data-dir " + (dir_ / "d").string()).code, cli::kExitUsage);
  EXPECT_EQ(run("gen-data --set epochs --data-dir " + (dir_ / "d").string()).code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(dir_ / "d"));
}

TEST_F(Cli, TrainWritesDocumentedArtifactsAndLabels) {
  const fs::path data = small_data();
  const fs::path prune = train_small(data, "prune");
  for (const char* f : {"best.ckpt", "last.ckpt", "trainlog.csv", "report.csv", "label.txt", "config.resolved"}) {
    EXPECT_TRUE(fs::exists(prune / f)) << f;
  }
  EXPECT_EQ(slurp(prune / "label.txt"), "prune\n");
  std::istringstream log(slurp(prune / "trainlog.csv"));
  std::string header;
  std::getline(log, header);
  EXPECT_EQ(header, "epoch,train_loss,train_L_e,train_L_s,val_metric,mean_gc_prob,mean_gc_rank");
  std::size_t rows = 0;
  for (std::string line; std::getline(log, line);) ++rows;
  EXPECT_EQ(rows, 2u);
  EXPECT_FALSE(fs::exists(prune / "last.ckpt.tmp"));

  const fs::path erm = train_small(data, "erm", "--set lambda1=0 --set lambda2=0");
  EXPECT_EQ(slurp(erm / "label.txt"), "erm-ablation\n");
  const auto rep = run("report --run-dir " + erm.string());
  ASSERT_EQ(rep.code, 0) << rep.out;
  EXPECT_NE(rep.out.find("(erm-ablation)"), std::string::npos) << rep.out;
  EXPECT_TRUE(fs::exists(erm / "trajectory.svg"));
  EXPECT_EQ(slurp(erm / "trajectory.svg").rfind("<svg", 0), 0u);
}

TEST_F(Cli, GridEnumeratesEveryCombination) {
  cli::RunConfig base;
  base.out_dir = "grid";
  const auto runs = cli::grid_runs(base);
  ASSERT_EQ(runs.size(), 3u * 3u * 2u * 3u);
  std::set<std::string> dirs;
  std::set<std::vector<double>> combos;
  for (const auto& r : runs) {
    dirs.insert(r.out_dir.string());
    const auto& w = r.train.weights;
    combos.insert({w.eta, w.k_percent, w.lambda1, w.lambda2});
  }
  EXPECT_EQ(dirs.size(), 54u);
  EXPECT_EQ(combos.size(), 54u);
  EXPECT_TRUE(combos.count({0.85, 90, 40, 1e-3}));
  EXPECT_TRUE(combos.count({0.5, 50, 10, 1e-1}));
}

TEST_F(Cli, GridRunWritesOneDirectoryPerCombination) {
  const fs::path data = dir_ / "data";
  ASSERT_EQ(run("gen-data --data-dir " + data.string() + " --set train_size=6 --set val_size=3 --set test_size=3").code,
            0);
  const fs::path out = dir_ / "grid";
  const auto r = run("train --grid --data-dir " + data.string() + " --out-dir " + out.string() +
                     " --set epochs=1 --set pretrain_epochs=0 --set width=4 --set grid_workers=2");
  ASSERT_EQ(r.code, 0) << r.out.substr(0, 2000);
  std::size_t run_dirs = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    if (!e.is_directory()) continue;
    ++run_dirs;
    EXPECT_TRUE(fs::exists(e.path() / "best.ckpt")) << e.path();
    EXPECT_TRUE(fs::exists(e.path() / "config.resolved")) << e.path();
  }
  EXPECT_EQ(run_dirs, 54u);
  std::istringstream grid(slurp(out / "grid.csv"));
  std::vector<std::string> lines;
  for (std::string line; std::getline(grid, line);) lines.push_back(line);
  ASSERT_EQ(lines.size(), 55u);
  EXPECT_EQ(lines[0], "run,eta,k_percent,lambda1,lambda2,best_epoch,val_metric,test_accuracy");
  EXPECT_EQ(lines[1].rfind("eta0.5_k50_l1-10_l2-0.1,", 0), 0u) << lines[1];
  // The resolved config of one run carries its own weights.
  const auto kv = resolved(out / "eta0.85_k90_l1-40_l2-0.001");
  EXPECT_EQ(kv.at("eta"), "0.85");
  EXPECT_EQ(kv.at("k_percent"), "90");
  EXPECT_EQ(kv.at("lambda1"), "40");
  EXPECT_EQ(kv.at("lambda2"), "0.001");
}

TEST_F(Cli, EvalMatchesGoldenColumnsAndIsDeterministic) {
  const fs::path data = small_data();
  const fs::path run_dir = train_small(data, "run");
  const std::string args = "eval --checkpoint " + (run_dir / "best.ckpt").string() + " --dataset " +
                           (data / "test.jsonl").string();
  const auto a = run(args);
  const auto b = run(args);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  // Compare "split,metric,k" of every row against the golden schema file.
  std::istringstream rows(a.out);
  std::string got;
  for (std::string line; std::getline(rows, line);) got += line.substr(0, line.rfind(',')) + "\n";
  EXPECT_EQ(got, slurp(kSource / "tests" / "golden" / "eval_columns.txt"));

  const auto to_file = run(args + " --out " + (dir_ / "r.csv").string());
  ASSERT_EQ(to_file.code, 0);
  EXPECT_EQ(slurp(dir_ / "r.csv"), a.out);
}

TEST_F(Cli, EvalRefusesMismatchedDimensions) {
  const fs::path data = small_data();
  const fs::path run_dir = train_small(data, "run");
  const fs::path wide = dir_ / "wide";
  ASSERT_EQ(run("gen-data --data-dir " + wide.string() + " --set feature_dim=6 --set train_size=6 --set val_size=3 "
                "--set test_size=3")
                .code,
            0);
  const auto r = run("eval --checkpoint " + (run_dir / "best.ckpt").string() + " --dataset " +
                     (wide / "test.jsonl").string());
  EXPECT_EQ(r.code, cli::kExitInvalidInput);
  EXPECT_NE(r.out.find("feature dimension"), std::string::npos) << r.out;
}

TEST_F(Cli, OracleCaseStudyCounts) {
  const fs::path data = small_data();
  const fs::path out = dir_ / "cs";
  const auto r = run("case-study --oracle --dataset " + (data / "test.jsonl").string() + " --out-dir " +
                     out.string() + " --multipliers 5 3 1.5 1");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream csv(slurp(out / "case_study.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "k_multiplier,mean_invariant,mean_spurious,mean_gc_size");
  std::vector<std::vector<double>> rows;
  while (std::getline(csv, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  ASSERT_EQ(rows.size(), 4u);
  const double gc = rows[3][3];
  EXPECT_GT(gc, 0.0);
  EXPECT_EQ(rows[3][1], gc);   // K = 1: every top edge is invariant
  EXPECT_EQ(rows[3][2], 0.0);
  EXPECT_EQ(rows[2][1], gc);   // K = 1.5: all invariant edges plus spurious extras
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) EXPECT_GT(rows[i][2], rows[i + 1][2]) << i;
  EXPECT_TRUE(fs::exists(out / "case_study.svg"));

  const fs::path quiet = dir_ / "cs2";
  ASSERT_EQ(run("case-study --oracle --no-plot --dataset " + (data / "test.jsonl").string() + " --out-dir " +
                quiet.string())
                .code,
            0);
  EXPECT_TRUE(fs::exists(quiet / "case_study.csv"));
  EXPECT_FALSE(fs::exists(quiet / "case_study.svg"));
}

TEST_F(Cli, CaseStudyFromCheckpoint) {
  const fs::path data = small_data();
  const fs::path run_dir = train_small(data, "run");
  const auto r = run("case-study --checkpoint " + (run_dir / "best.ckpt").string() + " --dataset " +
                     (data / "val.jsonl").string() + " --out-dir " + (dir_ / "cs").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("k_multiplier,mean_invariant"), std::string::npos);
  EXPECT_EQ(run("case-study --dataset " + (data / "val.jsonl").string()).code, cli::kExitInvalidInput);
}

TEST_F(Cli, GradCheckPassesAndInjectedFaultFails) {
  const auto ok = run("grad-check --seed 1");
  EXPECT_EQ(ok.code, cli::kExitOk) << ok.out;
  EXPECT_NE(ok.out.find("grad-check: PASS"), std::string::npos);
  EXPECT_NE(ok.out.find("max_rel_error="), std::string::npos);
  EXPECT_NE(ok.out.find("PASS matmul"), std::string::npos) << ok.out;

  const auto bad = run("grad-check --seed 1 --inject-fault matmul");
  EXPECT_EQ(bad.code, cli::kExitCheckFailed) << bad.out;
  EXPECT_NE(bad.out.find("FAIL matmul"), std::string::npos) << bad.out;
  EXPECT_NE(bad.out.find("grad-check: FAIL"), std::string::npos);
  EXPECT_EQ(run("grad-check --inject-fault no-such-kernel").code, cli::kExitUsage);
}

TEST_F(Cli, KilledRunLeavesLoadableLastCheckpoint) {
  const fs::path data = small_data(300);
  const fs::path out = dir_ / "killed";
  const auto r = run("train --data-dir " + data.string() + " --out-dir " + out.string() +
                         " --set epochs=100000 --set pretrain_epochs=1 --set width=16 --set patience=0",
                     "timeout -s KILL 4 ");
  ASSERT_EQ(r.code, 128 + 9) << r.out;  // killed, not finished
  ASSERT_TRUE(fs::exists(out / "last.ckpt"));
  const Checkpoint c = load_checkpoint(out / "last.ckpt");
  EXPECT_GT(c.params.size(), 0u);
  const auto ev = run("eval --checkpoint " + (out / "last.ckpt").string() + " --dataset " +
                      (data / "val.jsonl").string());
  EXPECT_EQ(ev.code, 0) << ev.out;
}

TEST_F(Cli, MissingFilesAreFilesystemErrors) {
  EXPECT_EQ(run("train --data-dir " + (dir_ / "nowhere").string() + " --out-dir " + (dir_ / "o").string()).code,
            cli::kExitFilesystem);
  EXPECT_EQ(run("eval --checkpoint " + (dir_ / "none.ckpt").string() + " --dataset " + (dir_ / "none.jsonl").string())
                .code,
            cli::kExitFilesystem);
  EXPECT_EQ(run("report --run-dir " + (dir_ / "nowhere").string()).code, cli::kExitFilesystem);
  EXPECT_EQ(run("gen-data --config " + (dir_ / "none.cfg").string()).code, cli::kExitFilesystem);
}

TEST_F(Cli, CorruptCheckpointIsInvalidInput) {
  const fs::path data = small_data();
  std::ofstream(dir_ / "bad.ckpt") << "pruneood-ckpt v1\nparam x 2 2 1 2\n";
  const auto r = run("eval --checkpoint " + (dir_ / "bad.ckpt").string() + " --dataset " +
                     (data / "test.jsonl").string());
  EXPECT_EQ(r.code, cli::kExitInvalidInput);
  EXPECT_NE(r.out.find("checkpoint"), std::string::npos) << r.out;
}
