#pragma once

// Motif-on-base synthetic graphs with controllable distribution shift.
//
// Each graph is a base graph (Tree, Ladder, Wheel) joined to one motif (Cycle,
// House, Crane) by a single bridge edge. The motif alone determines the label,
// and its edges are the ground-truth invariant edges.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pruneood/errors.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/rng.hpp"

namespace pruneood::synth {

enum class MotifKind { Cycle = 0, House = 1, Crane = 2 };
enum class BaseKind { Tree = 0, Ladder = 1, Wheel = 2 };
enum class SplitKind { BaseCovariate, SizeCovariate, Concept };

inline constexpr std::size_t kNumMotifs = 3;
inline constexpr std::size_t kNumBases = 3;

inline std::string_view to_string(MotifKind k) {
  switch (k) {
    case MotifKind::Cycle: return "cycle";
    case MotifKind::House: return "house";
    case MotifKind::Crane: return "crane";
  }
  return "?";
}

inline std::string_view to_string(BaseKind k) {
  switch (k) {
    case BaseKind::Tree: return "tree";
    case BaseKind::Ladder: return "ladder";
    case BaseKind::Wheel: return "wheel";
  }
  return "?";
}

inline std::string_view to_string(SplitKind k) {
  switch (k) {
    case SplitKind::BaseCovariate: return "base";
    case SplitKind::SizeCovariate: return "size";
    case SplitKind::Concept: return "concept";
  }
  return "?";
}

inline SplitKind split_kind_from_string(std::string_view s) {
  if (s == "base") return SplitKind::BaseCovariate;
  if (s == "size") return SplitKind::SizeCovariate;
  if (s == "concept") return SplitKind::Concept;
  throw ContractError("unknown split kind '" + std::string(s) + "' (expected base, size or concept)");
}

struct Fragment {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  std::optional<BaseKind> base;
  std::optional<MotifKind> motif;
};

inline Fragment make_base(BaseKind kind, std::size_t size, Rng& rng) {
  if (size < 4) throw ContractError("make_base: size must be at least 4, got " + std::to_string(size));
  Fragment f;
  f.base = kind;
  switch (kind) {
    case BaseKind::Tree:
      // Uniform random recursive tree.
      f.num_nodes = size;
      for (std::size_t v = 1; v < size; ++v) f.edges.emplace_back(uniform_index(rng, v), v);
      break;
    case BaseKind::Ladder: {
      const std::size_t k = (size + 1) / 2;
      f.num_nodes = 2 * k;
      for (std::size_t i = 0; i + 1 < k; ++i) {
        f.edges.emplace_back(i, i + 1);
        f.edges.emplace_back(k + i, k + i + 1);
      }
      for (std::size_t i = 0; i < k; ++i) f.edges.emplace_back(i, k + i);
      break;
    }
    case BaseKind::Wheel: {
      f.num_nodes = size;
      const std::size_t rim = size - 1;
      for (std::size_t i = 0; i < rim; ++i) {
        const std::size_t a = 1 + i, b = 1 + (i + 1) % rim;
        f.edges.emplace_back(std::min(a, b), std::max(a, b));
      }
      for (std::size_t i = 1; i < size; ++i) f.edges.emplace_back(0, i);
      break;
    }
  }
  return f;
}

inline Fragment make_motif(MotifKind kind) {
  Fragment f;
  f.motif = kind;
  switch (kind) {
    case MotifKind::Cycle:
      f.num_nodes = 6;
      f.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {0, 5}};
      break;
    case MotifKind::House:
      f.num_nodes = 5;
      f.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}};
      break;
    case MotifKind::Crane:
      f.num_nodes = 5;
      f.edges = {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}};
      break;
  }
  return f;
}

// Joins base and motif with one bridge edge, relabels nodes and shuffles the
// edge order. label = motif index, env_id = base index.
inline Graph attach(const Fragment& base, const Fragment& motif, Rng& rng, std::size_t feature_dim = 4) {
  if (!motif.motif) throw ContractError("attach: second fragment is not a motif");
  const std::size_t nb = base.num_nodes;
  const std::size_t n = nb + motif.num_nodes;

  struct Tagged {
    Edge e;
    bool invariant;
  };
  std::vector<Tagged> tagged;
  for (const auto& e : base.edges) tagged.push_back({e, false});
  for (const auto& [u, v] : motif.edges) tagged.push_back({{u + nb, v + nb}, true});
  const std::size_t bridge_base = uniform_index(rng, nb);
  const std::size_t bridge_motif = nb + uniform_index(rng, motif.num_nodes);
  tagged.push_back({{bridge_base, bridge_motif}, false});

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::shuffle(tagged.begin(), tagged.end(), rng);

  Graph g;
  g.num_nodes = n;
  g.feature_dim = feature_dim;
  g.features.assign(n * feature_dim, 1.0);
  g.label = static_cast<int>(*motif.motif);
  g.env_id = base.base ? static_cast<int>(*base.base) : 0;
  std::vector<bool> truth;
  for (const auto& t : tagged) {
    const std::size_t a = perm[t.e.first], b = perm[t.e.second];
    g.edges.emplace_back(std::min(a, b), std::max(a, b));
    truth.push_back(t.invariant);
  }
  g.edge_truth = std::move(truth);
  return g;
}

struct SizeRange {
  std::size_t lo = 10;
  std::size_t hi = 20;  // inclusive
};

struct ShiftConfig {
  SplitKind split_kind = SplitKind::BaseCovariate;
  double bias = 0.9;  // Concept only
  std::size_t train_size = 1500;
  std::size_t val_size = 500;
  std::size_t test_size = 500;
  SizeRange train_base{10, 20};
  SizeRange val_base{10, 20};
  SizeRange test_base{10, 20};
  std::uint64_t seed = 0;
  std::size_t feature_dim = 4;

  // Default base-size ranges for a shift kind; the size split grows bases
  // from train to test.
  static ShiftConfig defaults(SplitKind kind) {
    ShiftConfig c;
    c.split_kind = kind;
    if (kind == SplitKind::SizeCovariate) {
      c.train_base = {10, 20};
      c.val_base = {20, 30};
      c.test_base = {40, 60};
    }
    return c;
  }

  void validate() const {
    if (train_size == 0 || val_size == 0 || test_size == 0) {
      throw ContractError("shift config: split sizes must be positive");
    }
    for (const SizeRange* r : {&train_base, &val_base, &test_base}) {
      if (r->lo < 4 || r->hi < r->lo) {
        throw ContractError("shift config: base size range [" + std::to_string(r->lo) + ", " +
                            std::to_string(r->hi) + "] invalid (need 4 <= lo <= hi)");
      }
    }
    if (split_kind == SplitKind::Concept && !(bias >= 1.0 / 3.0 - 1e-12 && bias < 1.0)) {
      throw ContractError("shift config: concept bias must lie in [1/3, 1), got " + std::to_string(bias));
    }
    if (feature_dim == 0) throw ContractError("shift config: feature_dim must be positive");
  }
};

enum class Split { Train, Val, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

// Matched pairing used by the concept shift: Tree<->Cycle, Ladder<->House, Wheel<->Crane.
inline BaseKind matched_base(MotifKind m) { return static_cast<BaseKind>(static_cast<int>(m)); }

inline BaseKind pick_base(const ShiftConfig& cfg, Split split, MotifKind motif, Rng& rng) {
  switch (cfg.split_kind) {
    case SplitKind::BaseCovariate:
      if (split == Split::Test) return BaseKind::Wheel;
      return uniform_index(rng, 2) == 0 ? BaseKind::Tree : BaseKind::Ladder;
    case SplitKind::SizeCovariate:
      return static_cast<BaseKind>(uniform_index(rng, kNumBases));
    case SplitKind::Concept: {
      const double b = split == Split::Train ? cfg.bias : 1.0 / 3.0;
      const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      const int matched = static_cast<int>(matched_base(motif));
      if (u < b) return static_cast<BaseKind>(matched);
      // One of the two other bases, each with probability (1 - b) / 2.
      const int offset = u < b + (1.0 - b) / 2.0 ? 1 : 2;
      return static_cast<BaseKind>((matched + offset) % 3);
    }
  }
  return BaseKind::Tree;
}

// One graph, from its own stream so the result depends only on (seed, split, index).
inline Graph generate_graph(const ShiftConfig& cfg, Split split, std::size_t index) {
  Rng rng = make_stream(cfg.seed, std::string("data/") + std::string(to_string(split)), index);
  const auto motif = static_cast<MotifKind>(index % kNumMotifs);
  const BaseKind base_kind = pick_base(cfg, split, motif, rng);
  const SizeRange range = split == Split::Train ? cfg.train_base
                          : split == Split::Val ? cfg.val_base
                                                : cfg.test_base;
  const std::size_t size = std::uniform_int_distribution<std::size_t>(range.lo, range.hi)(rng);
  const Fragment base = make_base(base_kind, size, rng);
  return attach(base, make_motif(motif), rng, cfg.feature_dim);
}

inline Dataset generate_split(const ShiftConfig& cfg, Split split) {
  const std::size_t n = split == Split::Train ? cfg.train_size
                        : split == Split::Val ? cfg.val_size
                                              : cfg.test_size;
  Dataset d;
  d.graphs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) d.graphs.push_back(generate_graph(cfg, split, i));
  return d;
}

inline DatasetBundle generate(const ShiftConfig& cfg) {
  cfg.validate();
  return {generate_split(cfg, Split::Train), generate_split(cfg, Split::Val),
          generate_split(cfg, Split::Test)};
}

// Summary statistics written next to generated splits.
struct SplitStats {
  std::size_t count = 0;
  std::array<std::size_t, kNumMotifs> class_counts{};
  std::array<std::array<std::size_t, kNumBases>, kNumMotifs> cooccurrence{};  // [motif][base]
  double matched_fraction = 0.0;
  double mean_invariant_fraction = 0.0;
  std::size_t min_nodes = 0, max_nodes = 0;
  double mean_nodes = 0.0, mean_edges = 0.0;
  std::vector<std::size_t> node_histogram;  // bins of width 5
};

inline SplitStats compute_stats(const Dataset& d) {
  SplitStats s;
  s.count = d.size();
  if (d.empty()) return s;
  s.min_nodes = d.graphs.front().num_nodes;
  std::size_t matched = 0;
  for (const auto& g : d.graphs) {
    const auto label = static_cast<std::size_t>(g.label);
    const auto env = static_cast<std::size_t>(g.env_id);
    if (label < kNumMotifs) ++s.class_counts[label];
    if (label < kNumMotifs && env < kNumBases) ++s.cooccurrence[label][env];
    if (label == env) ++matched;
    s.mean_invariant_fraction += static_cast<double>(g.invariant_edge_count()) / static_cast<double>(g.num_edges());
    s.min_nodes = std::min(s.min_nodes, g.num_nodes);
    s.max_nodes = std::max(s.max_nodes, g.num_nodes);
    s.mean_nodes += static_cast<double>(g.num_nodes);
    s.mean_edges += static_cast<double>(g.num_edges());
    const std::size_t bin = g.num_nodes / 5;
    if (s.node_histogram.size() <= bin) s.node_histogram.resize(bin + 1, 0);
    ++s.node_histogram[bin];
  }
  const double n = static_cast<double>(d.size());
  s.matched_fraction = static_cast<double>(matched) / n;
  s.mean_invariant_fraction /= n;
  s.mean_nodes /= n;
  s.mean_edges /= n;
  return s;
}

inline nlohmann::ordered_json stats_to_json(const SplitStats& s) {
  nlohmann::ordered_json j;
  j["count"] = s.count;
  j["class_counts"] = s.class_counts;
  j["cooccurrence_motif_by_base"] = s.cooccurrence;
  j["matched_pair_fraction"] = s.matched_fraction;
  j["mean_invariant_edge_fraction"] = s.mean_invariant_fraction;
  j["nodes"] = {{"min", s.min_nodes}, {"max", s.max_nodes}, {"mean", s.mean_nodes}};
  j["mean_edges"] = s.mean_edges;
  auto hist = nlohmann::ordered_json::object();
  for (std::size_t b = 0; b < s.node_histogram.size(); ++b) {
    if (s.node_histogram[b] == 0) continue;
    hist[std::to_string(5 * b) + "-" + std::to_string(5 * b + 4)] = s.node_histogram[b];
  }
  j["node_count_histogram"] = std::move(hist);
  return j;
}

}  // namespace pruneood::synth
