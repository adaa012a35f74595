// pruneood: data generation, training, evaluation, case study, gradient
// checking and report emission.
//
// Exit codes: 0 success, 1 grad-check mismatch, 2 usage/config error,
// 3 invalid data or checkpoint, 4 filesystem error, 5 internal error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pruneood/cli.hpp"

namespace {

using namespace pruneood;
namespace fs = std::filesystem;

// Options shared by every command that consumes a RunConfig.
struct CommonOptions {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string data_dir;
  std::string out_dir;

  void add_to(CLI::App* app, bool with_dirs = true) {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--set", sets, "override a config key (key=value); repeatable");
    app->add_option("--seed", seed, "master seed for all random streams");
    if (with_dirs) {
      app->add_option("--data-dir", data_dir, "directory holding train/val/test.jsonl");
      app->add_option("--out-dir", out_dir, "output directory");
    }
  }

  [[nodiscard]] cli::RunConfig resolve() const {
    config::KeyValues overrides = cli::parse_overrides(sets);
    // Dedicated flags win over --set and over the file.
    if (seed) overrides["seed"] = std::to_string(*seed);
    if (!data_dir.empty()) overrides["data_dir"] = data_dir;
    if (!out_dir.empty()) overrides["out_dir"] = out_dir;
    std::optional<fs::path> file;
    if (!config_file.empty()) file = config_file;
    return cli::resolve(file, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pruning-based graph OOD generalization lab"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, eval_opts, case_opts;

  auto* gen = app.add_subcommand("gen-data", "generate train/val/test splits and stats.json");
  gen_opts.add_to(gen);

  auto* train = app.add_subcommand("train", "train a model; writes checkpoints, trainlog.csv and report.csv");
  train_opts.add_to(train);
  bool grid = false;
  train->add_flag("--grid", grid, "sweep eta, K, lambda1, lambda2 over the default grid, one directory per run");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset file (CSV on stdout or --out)");
  eval_opts.add_to(eval, false);
  std::string eval_ckpt, eval_data, eval_out;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--dataset", eval_data, "dataset file")->required();
  eval->add_option("--out", eval_out, "write the report CSV here instead of stdout");

  auto* cs = app.add_subcommand("case-study", "top-K edge composition for K multiples of |Gc|");
  case_opts.add_to(cs, false);
  std::string cs_ckpt, cs_data, cs_out = "case-study";
  bool cs_oracle = false, cs_no_plot = false;
  std::vector<double> cs_mults;
  cs->add_option("--checkpoint", cs_ckpt, "checkpoint file");
  cs->add_option("--dataset", cs_data, "dataset file")->required();
  cs->add_option("--out-dir", cs_out, "output directory");
  cs->add_option("--multipliers", cs_mults, "K multipliers of |Gc| (default 5 3 1.5)");
  cs->add_flag("--oracle", cs_oracle, "score edges by ground truth instead of a checkpoint");
  cs->add_flag("--no-plot", cs_no_plot, "skip the SVG bar chart");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every kernel and the full objective");
  std::uint64_t gc_seed = 0;
  std::string gc_fault;
  gc->add_option("--seed", gc_seed, "seed for shapes and values");
  gc->add_option("--inject-fault", gc_fault, "make this kernel's backward wrong (negative control)");

  auto* rep = app.add_subcommand("report", "trajectory SVG and summary for a training run directory");
  std::string rep_dir;
  rep->add_option("--run-dir", rep_dir, "directory written by train")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  // Phase 1: configs and flags. Malformed text here is a usage error.
  cli::RunConfig rc;
  std::optional<ad::OpKind> fault;
  const int resolved = cli::guarded(
      [&]() -> int {
        for (auto [sub, opts] : {std::pair{gen, &gen_opts}, std::pair{train, &train_opts},
                                 std::pair{eval, &eval_opts}, std::pair{cs, &case_opts}}) {
          if (sub->parsed()) rc = opts->resolve();
        }
        if (gc->parsed() && !gc_fault.empty()) fault = cli::parse_fault(gc_fault);
        return cli::kExitOk;
      },
      std::cerr, cli::kExitUsage);
  if (resolved != cli::kExitOk) return resolved;

  // Phase 2: the command itself.
  return cli::guarded([&]() -> int {
    if (gen->parsed()) {
      cli::cmd_gen_data(rc);
    } else if (train->parsed()) {
      if (grid) {
        cli::cmd_train_grid(rc);
      } else {
        cli::cmd_train(rc);
      }
    } else if (eval->parsed()) {
      if (eval_out.empty()) {
        cli::cmd_eval(eval_ckpt, eval_data, rc, std::cout);
      } else {
        auto os = cli::open_out(eval_out);
        cli::cmd_eval(eval_ckpt, eval_data, rc, os);
      }
    } else if (cs->parsed()) {
      if (!cs_mults.empty()) rc.case_multipliers = cs_mults;
      rc.out_dir = cs_out;
      cli::CaseStudyOptions o;
      if (!cs_ckpt.empty()) o.checkpoint = fs::path(cs_ckpt);
      o.dataset = cs_data;
      o.oracle = cs_oracle;
      o.plot = !cs_no_plot;
      cli::cmd_case_study(o, rc);
    } else if (gc->parsed()) {
      return cli::cmd_grad_check(gc_seed, fault, std::cout) ? cli::kExitOk : cli::kExitCheckFailed;
    } else if (rep->parsed()) {
      cli::cmd_report(rep_dir);
    }
    return cli::kExitOk;
  });
}
