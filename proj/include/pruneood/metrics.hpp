#pragma once

// Label metrics and selector-quality diagnostics over per-edge scores.
//
// Every ranking breaks ties by the lower edge index.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/selector.hpp"

namespace pruneood::metrics {

// Row-wise argmax of a logits matrix, ties to the lowest class index.
inline std::vector<int> argmax_rows(const ad::Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits(r, c) > logits(r, best)) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ContractError("accuracy: length mismatch");
  if (predictions.empty()) throw ContractError("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Mann-Whitney AUC with average ranks for ties.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  if (scores.size() != positive.size()) throw ContractError("roc_auc: length mismatch");
  const std::size_t n = scores.size();
  const auto n_pos = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("roc_auc: both classes must be present");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // 1-based ranks i+1 .. j share their average.
    const double avg = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) rank_sum += avg;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

// Per-edge selector scores (sigmoid of the logits) for a batch of graphs,
// together with ground truth and per-graph prediction correctness.
struct EdgeScores {
  std::vector<double> scores;
  std::vector<bool> truth;                 // true = invariant edge
  std::vector<std::size_t> edge_offsets;   // num_graphs + 1
  std::vector<bool> graph_correct;         // optional, per graph

  [[nodiscard]] std::size_t num_graphs() const { return edge_offsets.empty() ? 0 : edge_offsets.size() - 1; }

  void require_truth(const char* who) const {
    if (truth.size() != scores.size()) throw ContractError(std::string(who) + ": edge_truth missing");
  }
};

inline EdgeScores scores_from_logits(std::span<const double> w, const Batch& batch) {
  EdgeScores s;
  s.scores.resize(w.size());
  for (std::size_t e = 0; e < w.size(); ++e) s.scores[e] = ad::detail::sigmoid(w[e]);
  if (batch.edge_truth) s.truth = *batch.edge_truth;
  s.edge_offsets = batch.edge_offsets;
  return s;
}

struct EdgeAuc {
  double all = 0.0;
  std::optional<double> correct_only;  // restricted to correctly classified graphs
};

inline EdgeAuc edge_auc(const EdgeScores& s) {
  s.require_truth("edge_auc");
  EdgeAuc out;
  out.all = roc_auc(s.scores, s.truth);
  if (s.graph_correct.size() == s.num_graphs()) {
    std::vector<double> sc;
    std::vector<bool> tr;
    for (std::size_t g = 0; g < s.num_graphs(); ++g) {
      if (!s.graph_correct[g]) continue;
      for (std::size_t e = s.edge_offsets[g]; e < s.edge_offsets[g + 1]; ++e) {
        sc.push_back(s.scores[e]);
        tr.push_back(s.truth[e]);
      }
    }
    const auto pos = std::count(tr.begin(), tr.end(), true);
    if (pos > 0 && static_cast<std::size_t>(pos) < tr.size()) out.correct_only = roc_auc(sc, tr);
  }
  return out;
}

struct TopKCounts {
  double k_multiplier = 0.0;
  double mean_invariant = 0.0;
  double mean_spurious = 0.0;
  double mean_gc_size = 0.0;
};

// Per graph, the ceil(k_multiplier * |G_c|) highest-scored edges, split into
// invariant and spurious members; averaged over graphs with |G_c| > 0.
inline TopKCounts topk_edge_counts(const EdgeScores& s, double k_multiplier) {
  if (!(k_multiplier > 0.0)) throw ContractError("topk_edge_counts: K multiplier must be positive");
  s.require_truth("topk_edge_counts");
  TopKCounts out{k_multiplier, 0.0, 0.0, 0.0};
  std::size_t graphs = 0;
  for (std::size_t g = 0; g < s.num_graphs(); ++g) {
    const std::size_t b = s.edge_offsets[g], e = s.edge_offsets[g + 1];
    std::size_t gc = 0;
    for (std::size_t i = b; i < e; ++i) gc += s.truth[i] ? 1 : 0;
    if (gc == 0) continue;
    const auto order = descending_order(s.scores, b, e);
    const auto k = std::min(order.size(),
                            static_cast<std::size_t>(std::ceil(k_multiplier * static_cast<double>(gc) - 1e-9)));
    std::size_t inv = 0;
    for (std::size_t i = 0; i < k; ++i) inv += s.truth[order[i]] ? 1 : 0;
    out.mean_invariant += static_cast<double>(inv);
    out.mean_spurious += static_cast<double>(k - inv);
    out.mean_gc_size += static_cast<double>(gc);
    ++graphs;
  }
  if (graphs > 0) {
    const double n = static_cast<double>(graphs);
    out.mean_invariant /= n;
    out.mean_spurious /= n;
    out.mean_gc_size /= n;
  }
  return out;
}

struct RecallPrecision {
  double k_percent = 0.0;
  double recall = 0.0;
  double precision = 0.0;
  std::size_t vacuous_graphs = 0;  // graphs without spurious edges (recall counted as 1)
};

// The lowest-K% scored edges of each graph are predicted spurious.
inline RecallPrecision recall_precision_at_k(const EdgeScores& s, double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) throw ContractError("recall_precision_at_k: K must lie in (0, 100]");
  s.require_truth("recall_precision_at_k");
  RecallPrecision out{k_percent, 0.0, 0.0, 0};
  std::size_t graphs = 0;
  for (std::size_t g = 0; g < s.num_graphs(); ++g) {
    const std::size_t b = s.edge_offsets[g], e = s.edge_offsets[g + 1];
    if (b == e) continue;
    auto order = ascending_order(s.scores, b, e);
    order.resize(percent_count(k_percent, order.size()));
    std::size_t spurious = 0;
    for (std::size_t i = b; i < e; ++i) spurious += s.truth[i] ? 0 : 1;
    std::size_t hits = 0;
    for (std::size_t idx : order) hits += s.truth[idx] ? 0 : 1;
    if (spurious == 0) {
      out.recall += 1.0;
      ++out.vacuous_graphs;
    } else {
      out.recall += static_cast<double>(hits) / static_cast<double>(spurious);
    }
    out.precision += static_cast<double>(hits) / static_cast<double>(order.size());
    ++graphs;
  }
  if (graphs > 0) {
    out.recall /= static_cast<double>(graphs);
    out.precision /= static_cast<double>(graphs);
  }
  return out;
}

struct RankStats {
  double mean_gc_prob = 0.0;
  double mean_gc_rank = 0.0;  // 0 = top of the ranking, 1 = bottom
};

inline RankStats gc_rank_stats(const EdgeScores& s) {
  s.require_truth("gc_rank_stats");
  RankStats out;
  std::size_t graphs = 0;
  for (std::size_t g = 0; g < s.num_graphs(); ++g) {
    const std::size_t b = s.edge_offsets[g], e = s.edge_offsets[g + 1];
    const std::size_t m = e - b;
    const auto order = descending_order(s.scores, b, e);
    double prob = 0.0, rank = 0.0;
    std::size_t gc = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
      if (!s.truth[order[r]]) continue;
      prob += s.scores[order[r]];
      rank += m > 1 ? static_cast<double>(r) / static_cast<double>(m - 1) : 0.0;
      ++gc;
    }
    if (gc == 0) continue;
    out.mean_gc_prob += prob / static_cast<double>(gc);
    out.mean_gc_rank += rank / static_cast<double>(gc);
    ++graphs;
  }
  if (graphs > 0) {
    out.mean_gc_prob /= static_cast<double>(graphs);
    out.mean_gc_rank /= static_cast<double>(graphs);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct MetricOptions {
  std::vector<double> topk_multipliers{5.0, 3.0, 1.5, 1.0};
  std::vector<double> recall_k_percents{10.0, 20.0, 30.0, 40.0, 50.0};
};

struct MetricReport {
  std::size_t num_graphs = 0;
  double accuracy = 0.0;
  std::optional<double> roc_auc;  // binary tasks only
  std::optional<double> edge_auc;
  std::optional<double> edge_auc_correct;
  std::vector<TopKCounts> topk_counts;
  std::vector<RecallPrecision> recall_precision;
  std::optional<double> mean_gc_prob;
  std::optional<double> mean_gc_rank;
};

// Fills the edge diagnostics of `report` from selector scores.
inline void add_edge_metrics(MetricReport& report, const EdgeScores& s, const MetricOptions& opts) {
  if (s.truth.size() != s.scores.size() || s.scores.empty()) return;
  const auto pos = std::count(s.truth.begin(), s.truth.end(), true);
  if (pos > 0 && static_cast<std::size_t>(pos) < s.truth.size()) {
    const EdgeAuc auc = edge_auc(s);
    report.edge_auc = auc.all;
    report.edge_auc_correct = auc.correct_only;
  }
  report.topk_counts.clear();
  for (double k : opts.topk_multipliers) report.topk_counts.push_back(topk_edge_counts(s, k));
  report.recall_precision.clear();
  for (double k : opts.recall_k_percents) report.recall_precision.push_back(recall_precision_at_k(s, k));
  const RankStats r = gc_rank_stats(s);
  report.mean_gc_prob = r.mean_gc_prob;
  report.mean_gc_rank = r.mean_gc_rank;
}

inline std::string fmt_num(double x, int digits = 12) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

inline constexpr const char* kReportCsvHeader = "split,metric,k,value";

// Long-format CSV: one metric per row, k empty for unkeyed metrics.
inline void write_report_csv(std::ostream& os, const MetricReport& r, const std::string& split,
                             bool header = true) {
  if (header) os << kReportCsvHeader << '\n';
  auto row = [&](const char* metric, const std::string& k, double v) {
    os << split << ',' << metric << ',' << k << ',' << fmt_num(v) << '\n';
  };
  row("num_graphs", "", static_cast<double>(r.num_graphs));
  row("accuracy", "", r.accuracy);
  if (r.roc_auc) row("roc_auc", "", *r.roc_auc);
  if (r.edge_auc) row("edge_auc", "", *r.edge_auc);
  if (r.edge_auc_correct) row("edge_auc_correct", "", *r.edge_auc_correct);
  if (r.mean_gc_prob) row("mean_gc_prob", "", *r.mean_gc_prob);
  if (r.mean_gc_rank) row("mean_gc_rank", "", *r.mean_gc_rank);
  for (const auto& t : r.topk_counts) {
    row("topk_invariant", fmt_num(t.k_multiplier), t.mean_invariant);
    row("topk_spurious", fmt_num(t.k_multiplier), t.mean_spurious);
  }
  for (const auto& rp : r.recall_precision) {
    row("recall_at_k", fmt_num(rp.k_percent), rp.recall);
    row("precision_at_k", fmt_num(rp.k_percent), rp.precision);
    row("vacuous_recall_graphs", fmt_num(rp.k_percent), static_cast<double>(rp.vacuous_graphs));
  }
}

inline std::string summary_line(const MetricReport& r, const std::string& split) {
  std::ostringstream os;
  os << split << ": graphs=" << r.num_graphs << " acc=" << fmt_num(r.accuracy, 4);
  if (r.roc_auc) os << " roc_auc=" << fmt_num(*r.roc_auc, 4);
  if (r.edge_auc) os << " edge_auc=" << fmt_num(*r.edge_auc, 4);
  if (r.edge_auc_correct) os << " edge_auc_correct=" << fmt_num(*r.edge_auc_correct, 4);
  if (r.mean_gc_rank) os << " gc_rank=" << fmt_num(*r.mean_gc_rank, 4);
  return os.str();
}

}  // namespace pruneood::metrics
