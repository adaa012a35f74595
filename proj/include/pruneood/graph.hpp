#pragma once

// Graph and mini-batch data model plus the line-delimited dataset file format.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pruneood/autodiff.hpp"
#include "pruneood/errors.hpp"

namespace pruneood {

using Edge = std::pair<std::size_t, std::size_t>;

struct Graph {
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;  // num_nodes x feature_dim, row-major
  std::vector<Edge> edges;        // undirected, u < v, each stored once
  int label = 0;
  std::optional<std::vector<bool>> edge_truth;  // true = edge of the invariant subgraph
  int env_id = 0;

  [[nodiscard]] std::size_t num_edges() const { return edges.size(); }
  [[nodiscard]] std::size_t invariant_edge_count() const {
    if (!edge_truth) return 0;
    return static_cast<std::size_t>(std::count(edge_truth->begin(), edge_truth->end(), true));
  }

  friend bool operator==(const Graph&, const Graph&) = default;
};

// Throws ValidationError naming the first broken invariant. `num_classes` of 0
// skips the label range check.
inline void validate(const Graph& g, std::size_t num_classes = 0) {
  if (g.features.size() != g.num_nodes * g.feature_dim) {
    throw ValidationError("feature matrix has " + std::to_string(g.features.size()) +
                          " values, expected num_nodes x feature_dim = " +
                          std::to_string(g.num_nodes * g.feature_dim));
  }
  std::set<Edge> seen;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto [u, v] = g.edges[i];
    if (u == v) {
      throw ValidationError("self-loop at edge " + std::to_string(i) + " (" + std::to_string(u) +
                            "," + std::to_string(v) + ")");
    }
    if (u > v) {
      throw ValidationError("edge " + std::to_string(i) + " not normalized: expected u < v");
    }
    if (v >= g.num_nodes) {
      throw ValidationError("edge " + std::to_string(i) + " endpoint " + std::to_string(v) +
                            " out of range for " + std::to_string(g.num_nodes) + " nodes");
    }
    if (!seen.insert(g.edges[i]).second) {
      throw ValidationError("duplicate edge (" + std::to_string(u) + "," + std::to_string(v) + ")");
    }
  }
  if (g.edge_truth && g.edge_truth->size() != g.edges.size()) {
    throw ValidationError("annotation length: edge_truth has " +
                          std::to_string(g.edge_truth->size()) + " entries for " +
                          std::to_string(g.edges.size()) + " edges");
  }
  if (g.label < 0 || (num_classes > 0 && static_cast<std::size_t>(g.label) >= num_classes)) {
    throw ValidationError("label " + std::to_string(g.label) + " outside [0, " +
                          std::to_string(num_classes) + ")");
  }
}

// Disjoint union of graphs with global node/edge numbering.
struct Batch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  std::size_t feature_dim = 0;
  std::vector<double> features;
  std::vector<Edge> edges;
  std::vector<std::size_t> node_to_graph;
  std::vector<std::size_t> edge_to_graph;
  std::vector<std::size_t> node_offsets;  // num_graphs + 1
  std::vector<std::size_t> edge_offsets;  // num_graphs + 1
  std::vector<int> labels;
  std::vector<int> env_ids;
  std::optional<std::vector<bool>> edge_truth;  // present iff every member has it

  // Message-passing view: each undirected edge e appears as e (u->v) and e+m (v->u).
  std::vector<std::size_t> msg_src;
  std::vector<std::size_t> msg_dst;
  std::vector<std::size_t> msg_edge;

  [[nodiscard]] std::size_t num_edges() const { return edges.size(); }
  [[nodiscard]] std::size_t graph_edge_count(std::size_t g) const {
    return edge_offsets[g + 1] - edge_offsets[g];
  }
  [[nodiscard]] std::size_t graph_node_count(std::size_t g) const {
    return node_offsets[g + 1] - node_offsets[g];
  }

  [[nodiscard]] ad::Tensor feature_tensor() const {
    return ad::Tensor::from({num_nodes, feature_dim}, features);
  }
};

inline Batch batch_graphs(const std::vector<const Graph*>& graphs) {
  if (graphs.empty()) throw ContractError("batch_graphs: empty graph list");
  Batch b;
  b.num_graphs = graphs.size();
  b.feature_dim = graphs.front()->feature_dim;
  bool all_truth = true;
  for (const Graph* g : graphs) {
    if (g->feature_dim != b.feature_dim) {
      throw ContractError("batch_graphs: feature dimension " + std::to_string(g->feature_dim) +
                          " differs from " + std::to_string(b.feature_dim));
    }
    all_truth = all_truth && g->edge_truth.has_value();
  }
  b.node_offsets.push_back(0);
  b.edge_offsets.push_back(0);
  if (all_truth) b.edge_truth.emplace();
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    const std::size_t off = b.num_nodes;
    b.features.insert(b.features.end(), g.features.begin(), g.features.end());
    for (const auto& [u, v] : g.edges) {
      b.edges.emplace_back(u + off, v + off);
      b.edge_to_graph.push_back(gi);
    }
    b.node_to_graph.insert(b.node_to_graph.end(), g.num_nodes, gi);
    b.num_nodes += g.num_nodes;
    b.node_offsets.push_back(b.num_nodes);
    b.edge_offsets.push_back(b.edges.size());
    b.labels.push_back(g.label);
    b.env_ids.push_back(g.env_id);
    if (all_truth) b.edge_truth->insert(b.edge_truth->end(), g.edge_truth->begin(), g.edge_truth->end());
  }
  const std::size_t m = b.edges.size();
  b.msg_src.resize(2 * m);
  b.msg_dst.resize(2 * m);
  b.msg_edge.resize(2 * m);
  for (std::size_t e = 0; e < m; ++e) {
    b.msg_src[e] = b.edges[e].first;
    b.msg_dst[e] = b.edges[e].second;
    b.msg_src[e + m] = b.edges[e].second;
    b.msg_dst[e + m] = b.edges[e].first;
    b.msg_edge[e] = e;
    b.msg_edge[e + m] = e;
  }
  return b;
}

inline Batch batch_graphs(const std::vector<Graph>& graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return batch_graphs(ptrs);
}

inline std::vector<Graph> unbatch(const Batch& b) {
  std::vector<Graph> out(b.num_graphs);
  for (std::size_t gi = 0; gi < b.num_graphs; ++gi) {
    Graph& g = out[gi];
    const std::size_t n0 = b.node_offsets[gi], n1 = b.node_offsets[gi + 1];
    const std::size_t e0 = b.edge_offsets[gi], e1 = b.edge_offsets[gi + 1];
    g.num_nodes = n1 - n0;
    g.feature_dim = b.feature_dim;
    g.features.assign(b.features.begin() + static_cast<std::ptrdiff_t>(n0 * b.feature_dim),
                      b.features.begin() + static_cast<std::ptrdiff_t>(n1 * b.feature_dim));
    for (std::size_t e = e0; e < e1; ++e) g.edges.emplace_back(b.edges[e].first - n0, b.edges[e].second - n0);
    g.label = b.labels[gi];
    g.env_id = b.env_ids[gi];
    if (b.edge_truth) {
      g.edge_truth.emplace(b.edge_truth->begin() + static_cast<std::ptrdiff_t>(e0),
                           b.edge_truth->begin() + static_cast<std::ptrdiff_t>(e1));
    }
  }
  return out;
}

struct Dataset {
  std::vector<Graph> graphs;

  [[nodiscard]] bool empty() const { return graphs.empty(); }
  [[nodiscard]] std::size_t size() const { return graphs.size(); }
  [[nodiscard]] std::size_t feature_dim() const { return graphs.empty() ? 0 : graphs.front().feature_dim; }
  [[nodiscard]] std::size_t num_classes() const {
    int mx = -1;
    for (const auto& g : graphs) mx = std::max(mx, g.label);
    return static_cast<std::size_t>(mx + 1);
  }
};

struct DatasetBundle {
  Dataset train;
  Dataset val;
  Dataset test;
};

// ---------------------------------------------------------------------------
// Dataset file: header line, then one JSON object per graph.
//
//   pruneood-dataset v1
//   {"num_nodes":3,"features":[1.0,...],"edges":[[0,1],[1,2]],"label":0,"edge_truth":[1,0],"env_id":2}
//
// feature_dim is len(features) / num_nodes. edge_truth may be omitted.

inline constexpr const char* kDatasetHeader = "pruneood-dataset v1";

inline nlohmann::ordered_json graph_to_json(const Graph& g) {
  nlohmann::ordered_json j;
  j["num_nodes"] = g.num_nodes;
  j["features"] = g.features;
  auto edges = nlohmann::ordered_json::array();
  for (const auto& [u, v] : g.edges) edges.push_back({u, v});
  j["edges"] = std::move(edges);
  j["label"] = g.label;
  if (g.edge_truth) {
    auto truth = nlohmann::ordered_json::array();
    for (bool t : *g.edge_truth) truth.push_back(t ? 1 : 0);
    j["edge_truth"] = std::move(truth);
  }
  j["env_id"] = g.env_id;
  return j;
}

inline Graph graph_from_json(const nlohmann::json& j) {
  Graph g;
  try {
    g.num_nodes = j.at("num_nodes").get<std::size_t>();
    g.features = j.at("features").get<std::vector<double>>();
    for (const auto& e : j.at("edges")) g.edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
    g.label = j.at("label").get<int>();
    if (j.contains("edge_truth")) {
      std::vector<bool> truth;
      for (const auto& t : j.at("edge_truth")) truth.push_back(t.get<int>() != 0);
      g.edge_truth = std::move(truth);
    }
    g.env_id = j.value("env_id", 0);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("dataset record: ") + ex.what());
  }
  g.feature_dim = g.num_nodes == 0 ? 0 : g.features.size() / g.num_nodes;
  return g;
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
  os << kDatasetHeader << '\n';
  for (const auto& g : d.graphs) os << graph_to_json(g).dump() << '\n';
}

inline Dataset read_dataset(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kDatasetHeader) {
    throw FormatError("dataset: missing header line '" + std::string(kDatasetHeader) + "'");
  }
  Dataset d;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& ex) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": " + ex.what());
    }
    Graph g = graph_from_json(j);
    try {
      validate(g);
    } catch (const ValidationError& ex) {
      throw FormatError("dataset line " + std::to_string(lineno) + ": " + ex.what());
    }
    d.graphs.push_back(std::move(g));
  }
  return d;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::filesystem::filesystem_error("cannot open for writing", path, std::make_error_code(std::errc::permission_denied));
  write_dataset(os, d);
  if (!os) throw std::filesystem::filesystem_error("write failed", path, std::make_error_code(std::errc::io_error));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::filesystem::filesystem_error("cannot open dataset", path, std::make_error_code(std::errc::no_such_file_or_directory));
  return read_dataset(is);
}

}  // namespace pruneood
