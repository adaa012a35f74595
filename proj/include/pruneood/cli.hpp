#pragma once

// Run configuration and the command implementations behind tools/pruneood.
// Each command takes a resolved RunConfig, writes its outputs plus the
// resolved config into the output directory, and reports through exceptions;
// exit_code_for() maps those to process exit codes.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "pruneood/config.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/gradsuite.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/metrics.hpp"
#include "pruneood/svg.hpp"
#include "pruneood/synth.hpp"
#include "pruneood/trainer.hpp"

namespace pruneood::cli {

namespace fs = std::filesystem;

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;   // grad-check found a mismatch
inline constexpr int kExitUsage = 2;         // bad flags, unknown or malformed config keys
inline constexpr int kExitInvalidInput = 3;  // contract, validation or format errors in data/checkpoints
inline constexpr int kExitFilesystem = 4;    // unreadable input or unwritable output
inline constexpr int kExitInternal = 5;

inline constexpr const char* kResolvedConfigName = "config.resolved";

struct RunConfig {
  synth::ShiftConfig shift;
  TrainConfig train;
  metrics::MetricOptions metric_options;
  std::vector<double> case_multipliers{5.0, 3.0, 1.5};
  std::uint64_t seed = 0;
  std::size_t grid_workers = 1;  // parallel runs in train --grid
  fs::path data_dir = "data";
  fs::path out_dir = "runs/default";

  RunConfig() { set_seed(0); }

  void set_seed(std::uint64_t s) {
    seed = s;
    shift.seed = s;
    train.seed = s;
  }

  // Applies one key; unknown keys are an error.
  void apply(const std::string& key, const std::string& value) {
    using config::to_double;
    using config::to_uint;
    auto range = [&](synth::SizeRange& r) {
      const auto dash = value.find('-');
      if (dash == std::string::npos) throw FormatError("config key '" + key + "': expected lo-hi, got '" + value + "'");
      r.lo = to_uint(key, config::trim(std::string_view(value).substr(0, dash)));
      r.hi = to_uint(key, config::trim(std::string_view(value).substr(dash + 1)));
    };
    if (key == "seed") {
      set_seed(to_uint(key, value));
    } else if (key == "split") {
      const auto base_ranges = synth::ShiftConfig::defaults(synth::split_kind_from_string(value));
      shift.split_kind = base_ranges.split_kind;
      shift.train_base = base_ranges.train_base;
      shift.val_base = base_ranges.val_base;
      shift.test_base = base_ranges.test_base;
    } else if (key == "bias") {
      shift.bias = to_double(key, value);
    } else if (key == "train_size") {
      shift.train_size = to_uint(key, value);
    } else if (key == "val_size") {
      shift.val_size = to_uint(key, value);
    } else if (key == "test_size") {
      shift.test_size = to_uint(key, value);
    } else if (key == "train_base") {
      range(shift.train_base);
    } else if (key == "val_base") {
      range(shift.val_base);
    } else if (key == "test_base") {
      range(shift.test_base);
    } else if (key == "feature_dim") {
      shift.feature_dim = to_uint(key, value);
    } else if (key == "topk_multipliers") {
      metric_options.topk_multipliers = config::to_double_list(key, value);
    } else if (key == "recall_k_percents") {
      metric_options.recall_k_percents = config::to_double_list(key, value);
    } else if (key == "case_multipliers") {
      case_multipliers = config::to_double_list(key, value);
    } else if (key == "grid_workers") {
      grid_workers = to_uint(key, value);
      if (grid_workers == 0) throw FormatError("config key 'grid_workers' must be at least 1");
    } else if (key == "data_dir") {
      data_dir = value;
    } else if (key == "out_dir") {
      out_dir = value;
    } else if (!train.apply(key, value)) {
      throw FormatError("unknown config key '" + key + "'");
    }
  }

  void apply_all(const config::KeyValues& kv) {
    // "split" resets base ranges, so it goes first and explicit ranges win.
    if (auto it = kv.find("split"); it != kv.end()) apply(it->first, it->second);
    for (const auto& [k, v] : kv) {
      if (k != "split") apply(k, v);
    }
  }

  [[nodiscard]] config::KeyValues to_kv() const {
    config::KeyValues kv = train.to_kv();
    auto range = [](const synth::SizeRange& r) { return std::to_string(r.lo) + "-" + std::to_string(r.hi); };
    kv["seed"] = std::to_string(seed);
    kv["split"] = std::string(synth::to_string(shift.split_kind));
    kv["bias"] = config::format_double(shift.bias);
    kv["train_size"] = std::to_string(shift.train_size);
    kv["val_size"] = std::to_string(shift.val_size);
    kv["test_size"] = std::to_string(shift.test_size);
    kv["train_base"] = range(shift.train_base);
    kv["val_base"] = range(shift.val_base);
    kv["test_base"] = range(shift.test_base);
    kv["feature_dim"] = std::to_string(shift.feature_dim);
    kv["topk_multipliers"] = config::join(metric_options.topk_multipliers);
    kv["recall_k_percents"] = config::join(metric_options.recall_k_percents);
    kv["case_multipliers"] = config::join(case_multipliers);
    kv["grid_workers"] = std::to_string(grid_workers);
    kv["data_dir"] = data_dir.string();
    kv["out_dir"] = out_dir.string();
    return kv;
  }
};

// The config file (if any) is applied first, then command-line overrides.
inline RunConfig resolve(const std::optional<fs::path>& config_file, const config::KeyValues& overrides) {
  RunConfig rc;
  if (config_file) {
    std::ifstream is(*config_file);
    if (!is) {
      throw fs::filesystem_error("cannot open config file", *config_file,
                                 std::make_error_code(std::errc::no_such_file_or_directory));
    }
    rc.apply_all(config::parse(is, config_file->string()));
  }
  rc.apply_all(overrides);
  return rc;
}

// Parses "key=value" override strings.
inline config::KeyValues parse_overrides(const std::vector<std::string>& items) {
  config::KeyValues kv;
  for (const auto& item : items) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw FormatError("override '" + item + "' is not key=value");
    const std::string key = config::trim(std::string_view(item).substr(0, eq));
    if (!kv.emplace(key, config::trim(std::string_view(item).substr(eq + 1))).second) {
      throw FormatError("override key '" + key + "' given twice");
    }
  }
  return kv;
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw fs::filesystem_error("cannot create output directory", dir, ec);
}

inline std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw fs::filesystem_error("cannot open for writing", path, std::make_error_code(std::errc::permission_denied));
  }
  return os;
}

inline void write_resolved_config(const fs::path& dir, const config::KeyValues& kv) {
  auto os = open_out(dir / kResolvedConfigName);
  config::write(os, kv);
}

inline fs::path split_path(const fs::path& data_dir, synth::Split s) {
  return data_dir / (std::string(synth::to_string(s)) + ".jsonl");
}

inline std::string_view run_label(const TrainConfig& cfg) { return cfg.is_erm_ablation() ? "erm-ablation" : "prune"; }

// ---------------------------------------------------------------------------
// gen-data: three split files plus stats.json.

inline void cmd_gen_data(const RunConfig& rc, std::ostream& log = std::cout) {
  const DatasetBundle bundle = synth::generate(rc.shift);
  ensure_dir(rc.data_dir);
  nlohmann::ordered_json stats;
  const std::pair<synth::Split, const Dataset*> splits[] = {
      {synth::Split::Train, &bundle.train}, {synth::Split::Val, &bundle.val}, {synth::Split::Test, &bundle.test}};
  for (const auto& [s, d] : splits) {
    save_dataset(split_path(rc.data_dir, s), *d);
    stats[std::string(synth::to_string(s))] = synth::stats_to_json(synth::compute_stats(*d));
    log << "wrote " << split_path(rc.data_dir, s).string() << " (" << d->size() << " graphs)\n";
  }
  auto os = open_out(rc.data_dir / "stats.json");
  os << stats.dump(2) << '\n';
  write_resolved_config(rc.data_dir, rc.to_kv());
}

inline DatasetBundle load_bundle(const fs::path& data_dir) {
  return {load_dataset(split_path(data_dir, synth::Split::Train)), load_dataset(split_path(data_dir, synth::Split::Val)),
          load_dataset(split_path(data_dir, synth::Split::Test))};
}

// ---------------------------------------------------------------------------
// train: best.ckpt, last.ckpt (rewritten atomically every epoch), trainlog.csv,
// report.csv (best checkpoint on val and test), label.txt.

struct TrainOutcome {
  TrainResult result;
  metrics::MetricReport val;
  metrics::MetricReport test;
};

inline TrainOutcome train_into(const DatasetBundle& data, const RunConfig& rc, const fs::path& out_dir,
                               std::ostream& log) {
  ensure_dir(out_dir);
  write_resolved_config(out_dir, rc.to_kv());
  {
    auto os = open_out(out_dir / "label.txt");
    os << run_label(rc.train) << '\n';
  }
  std::ofstream trainlog = open_out(out_dir / "trainlog.csv");
  trainlog << kTrainLogHeader << '\n';
  TrainOutcome out;
  out.result = train(data, rc.train, [&](const EpochRecord& r, const Model& m, bool is_best) {
    TrainLog one{{r}};
    std::ostringstream line;
    write_train_log(line, one);
    trainlog << line.str().substr(line.str().find('\n') + 1) << std::flush;
    const Checkpoint ckpt = make_checkpoint(m, rc.train, r.epoch, r.val_metric);
    save_checkpoint(out_dir / "last.ckpt", ckpt);
    if (is_best) save_checkpoint(out_dir / "best.ckpt", ckpt);
    log << "[" << run_label(rc.train) << "] epoch " << r.epoch << " loss=" << metrics::fmt_num(r.train_loss, 5)
        << " val=" << metrics::fmt_num(r.val_metric, 4) << (is_best ? " *" : "") << '\n';
  });
  const Model best = model_from_checkpoint(out.result.best);
  out.val = evaluate(best, data.val, rc.metric_options);
  out.test = evaluate(best, data.test, rc.metric_options);
  auto os = open_out(out_dir / "report.csv");
  metrics::write_report_csv(os, out.val, "val");
  metrics::write_report_csv(os, out.test, "test", false);
  log << metrics::summary_line(out.val, "val") << '\n' << metrics::summary_line(out.test, "test") << '\n';
  return out;
}

inline TrainOutcome cmd_train(const RunConfig& rc, std::ostream& log = std::cout) {
  return train_into(load_bundle(rc.data_dir), rc, rc.out_dir, log);
}

// Default grid: edge budget, K, lambda1, lambda2.
struct GridAxes {
  std::vector<double> eta{0.5, 0.75, 0.85};
  std::vector<double> k_percent{50, 70, 90};
  std::vector<double> lambda1{10, 40};
  std::vector<double> lambda2{1e-1, 1e-2, 1e-3};
};

inline std::string grid_dir_name(double eta, double k, double l1, double l2) {
  using config::format_double;
  return "eta" + format_double(eta) + "_k" + format_double(k) + "_l1-" + format_double(l1) + "_l2-" +
         format_double(l2);
}

inline std::vector<RunConfig> grid_runs(const RunConfig& base, const GridAxes& axes = {}) {
  std::vector<RunConfig> runs;
  for (double eta : axes.eta) {
    for (double k : axes.k_percent) {
      for (double l1 : axes.lambda1) {
        for (double l2 : axes.lambda2) {
          RunConfig rc = base;
          rc.train.weights.eta = eta;
          rc.train.weights.k_percent = k;
          rc.train.weights.lambda1 = l1;
          rc.train.weights.lambda2 = l2;
          rc.out_dir = base.out_dir / grid_dir_name(eta, k, l1, l2);
          runs.push_back(std::move(rc));
        }
      }
    }
  }
  return runs;
}

// Runs every grid combination in its own directory and writes grid.csv with
// the best-validation result of each, in grid order. With grid_workers > 1 the
// runs execute on that many threads; each run owns its directory and the
// only shared state is the log stream, written a whole run at a time.
inline void cmd_train_grid(const RunConfig& rc, const GridAxes& axes = {}, std::ostream& log = std::cout) {
  const DatasetBundle data = load_bundle(rc.data_dir);
  ensure_dir(rc.out_dir);
  write_resolved_config(rc.out_dir, rc.to_kv());
  const std::vector<RunConfig> runs = grid_runs(rc, axes);
  std::vector<std::optional<TrainOutcome>> outcomes(runs.size());
  std::vector<std::exception_ptr> errors(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      std::ostringstream run_log;
      try {
        outcomes[i] = train_into(data, runs[i], runs[i].out_dir, run_log);
      } catch (...) {
        errors[i] = std::current_exception();
      }
      const std::lock_guard<std::mutex> lock(log_mutex);
      log << run_log.str() << std::flush;
    }
  };
  const std::size_t n_threads = std::min(rc.grid_workers, runs.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  auto summary = open_out(rc.out_dir / "grid.csv");
  summary << "run,eta,k_percent,lambda1,lambda2,best_epoch,val_metric,test_accuracy\n";
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const auto& w = runs[i].train.weights;
    const TrainOutcome& o = *outcomes[i];
    summary << runs[i].out_dir.filename().string() << ',' << config::format_double(w.eta) << ','
            << config::format_double(w.k_percent) << ',' << config::format_double(w.lambda1) << ','
            << config::format_double(w.lambda2) << ',' << o.result.best_epoch << ','
            << metrics::fmt_num(o.result.best.val_metric) << ',' << metrics::fmt_num(o.test.accuracy) << '\n';
  }
}

// ---------------------------------------------------------------------------
// eval

inline metrics::MetricReport cmd_eval(const fs::path& checkpoint, const fs::path& dataset, const RunConfig& rc,
                                      std::ostream& csv) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Dataset data = load_dataset(dataset);
  const metrics::MetricReport r = evaluate(ckpt, data, rc.metric_options);
  metrics::write_report_csv(csv, r, dataset.stem().string());
  return r;
}

// ---------------------------------------------------------------------------
// case-study: invariant and spurious counts among the top-K edges, K a
// multiple of |G_c|.

inline constexpr const char* kCaseStudyHeader = "k_multiplier,mean_invariant,mean_spurious,mean_gc_size";

// Scores that rank exactly the ground-truth invariant edges first.
inline metrics::EdgeScores oracle_scores(const Dataset& data) {
  metrics::EdgeScores s;
  s.edge_offsets.push_back(0);
  for (const auto& g : data.graphs) {
    if (!g.edge_truth) throw ValidationError("oracle scores need edge_truth on every graph");
    for (bool t : *g.edge_truth) {
      s.scores.push_back(t ? 1.0 : 0.0);
      s.truth.push_back(t);
    }
    s.edge_offsets.push_back(s.scores.size());
  }
  return s;
}

inline std::vector<metrics::TopKCounts> case_study(const metrics::EdgeScores& s, const std::vector<double>& mults) {
  std::vector<metrics::TopKCounts> out;
  for (double k : mults) out.push_back(metrics::topk_edge_counts(s, k));
  return out;
}

inline void write_case_study_csv(std::ostream& os, const std::vector<metrics::TopKCounts>& rows) {
  os << kCaseStudyHeader << '\n';
  for (const auto& r : rows) {
    os << metrics::fmt_num(r.k_multiplier) << ',' << metrics::fmt_num(r.mean_invariant) << ','
       << metrics::fmt_num(r.mean_spurious) << ',' << metrics::fmt_num(r.mean_gc_size) << '\n';
  }
}

inline void write_case_study_svg(std::ostream& os, const std::vector<metrics::TopKCounts>& rows) {
  std::vector<std::string> cats;
  svg::Series inv{"invariant edges", {}}, spu{"spurious edges", {}};
  for (const auto& r : rows) {
    cats.push_back("K=" + metrics::fmt_num(r.k_multiplier, 3) + "|Gc|");
    inv.values.push_back(r.mean_invariant);
    spu.values.push_back(r.mean_spurious);
  }
  svg::bar_chart(os, "Edges among the top-K predicted edges", "mean count per graph", cats, {inv, spu});
}

struct CaseStudyOptions {
  std::optional<fs::path> checkpoint;  // absent with oracle
  fs::path dataset;
  bool oracle = false;
  bool plot = true;
};

inline std::vector<metrics::TopKCounts> cmd_case_study(const CaseStudyOptions& o, const RunConfig& rc,
                                                       std::ostream& log = std::cout) {
  const Dataset data = load_dataset(o.dataset);
  metrics::EdgeScores scores;
  if (o.oracle) {
    scores = oracle_scores(data);
  } else {
    if (!o.checkpoint) throw ContractError("case-study needs --checkpoint unless --oracle is given");
    scores = edge_scores(model_from_checkpoint(load_checkpoint(*o.checkpoint)), data);
  }
  const auto rows = case_study(scores, rc.case_multipliers);
  ensure_dir(rc.out_dir);
  write_resolved_config(rc.out_dir, rc.to_kv());
  {
    auto os = open_out(rc.out_dir / "case_study.csv");
    write_case_study_csv(os, rows);
  }
  if (o.plot) {
    auto os = open_out(rc.out_dir / "case_study.svg");
    write_case_study_svg(os, rows);
  }
  write_case_study_csv(log, rows);
  return rows;
}

// ---------------------------------------------------------------------------
// grad-check

inline std::optional<ad::OpKind> parse_fault(const std::optional<std::string>& name) {
  if (!name) return std::nullopt;
  const auto kind = ad::op_from_name(*name);
  if (!kind) throw FormatError("unknown kernel '" + *name + "' for --inject-fault");
  return kind;
}

inline bool cmd_grad_check(std::uint64_t seed, std::optional<ad::OpKind> inject_fault, std::ostream& out) {
  gradsuite::SuiteOptions opts;
  opts.seed = seed;
  opts.inject_fault = inject_fault;
  const auto report = gradsuite::run(opts);
  gradsuite::write_report(out, report);
  return report.passed();
}

// ---------------------------------------------------------------------------
// report: trajectory plot and summary from a run directory.

inline TrainLog read_train_log(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || config::trim(line) != kTrainLogHeader) {
    throw FormatError("trainlog: expected header '" + std::string(kTrainLogHeader) + "'");
  }
  TrainLog log;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (config::trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(config::trim(cell));
    if (f.size() != 7) throw FormatError("trainlog line " + std::to_string(lineno) + ": expected 7 fields");
    EpochRecord r;
    r.epoch = config::to_uint("epoch", f[0]);
    r.train_loss = config::to_double("train_loss", f[1]);
    r.train_l_e = config::to_double("train_L_e", f[2]);
    r.train_l_s = config::to_double("train_L_s", f[3]);
    r.val_metric = config::to_double("val_metric", f[4]);
    r.mean_gc_prob = config::to_double("mean_gc_prob", f[5]);
    r.mean_gc_rank = config::to_double("mean_gc_rank", f[6]);
    log.epochs.push_back(r);
  }
  return log;
}

inline void write_trajectory_svg(std::ostream& os, const TrainLog& log) {
  std::vector<double> xs;
  svg::Series val{"val metric", {}}, prob{"mean Gc probability", {}}, rank{"mean Gc rank", {}};
  for (const auto& r : log.epochs) {
    xs.push_back(static_cast<double>(r.epoch));
    val.values.push_back(r.val_metric);
    prob.values.push_back(r.mean_gc_prob);
    rank.values.push_back(r.mean_gc_rank);
  }
  svg::line_chart(os, "Training trajectory", "epoch", "value", xs, {val, prob, rank});
}

inline std::string cmd_report(const fs::path& run_dir, std::ostream& out = std::cout) {
  std::ifstream is(run_dir / "trainlog.csv");
  if (!is) {
    throw fs::filesystem_error("cannot open trainlog", run_dir / "trainlog.csv",
                               std::make_error_code(std::errc::no_such_file_or_directory));
  }
  const TrainLog log = read_train_log(is);
  if (log.epochs.empty()) throw FormatError("trainlog has no epochs");
  {
    auto os = open_out(run_dir / "trajectory.svg");
    write_trajectory_svg(os, log);
  }
  const auto best = std::max_element(log.epochs.begin(), log.epochs.end(),
                                     [](const EpochRecord& a, const EpochRecord& b) { return a.val_metric < b.val_metric; });
  std::ostringstream s;
  std::string label = "unknown";
  if (std::ifstream lf(run_dir / "label.txt"); lf) std::getline(lf, label);
  s << "run: " << run_dir.string() << " (" << label << ")\n";
  s << "epochs: " << log.epochs.size() << "\n";
  s << "best val metric: " << metrics::fmt_num(best->val_metric, 6) << " at epoch " << best->epoch << "\n";
  s << "final mean Gc probability: " << metrics::fmt_num(log.epochs.back().mean_gc_prob, 6) << "\n";
  s << "final mean Gc rank: " << metrics::fmt_num(log.epochs.back().mean_gc_rank, 6) << "\n";
  if (std::ifstream rf(run_dir / "report.csv"); rf) {
    std::string line;
    std::getline(rf, line);
    while (std::getline(rf, line)) {
      if (line.rfind("test,accuracy,", 0) == 0) s << "test accuracy (best checkpoint): " << line.substr(14) << "\n";
      if (line.rfind("test,edge_auc,", 0) == 0) s << "test edge AUC (best checkpoint): " << line.substr(14) << "\n";
    }
  }
  {
    auto os = open_out(run_dir / "summary.txt");
    os << s.str();
  }
  out << s.str();
  return s.str();
}

// ---------------------------------------------------------------------------

// Runs `body`, printing errors to `err` and returning the documented exit code.
// Malformed text maps to `format_exit`: a usage error while configs and flags
// are being resolved, invalid input once a command reads data or checkpoints.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr, int format_exit = kExitInvalidInput) {
  try {
    return body();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitFilesystem;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return format_exit;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalidInput;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalidInput;
  } catch (const ShapeError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalidInput;
  } catch (const IndexError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInvalidInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace pruneood::cli
