#pragma once

// Learnable subgraph selector: per-edge logits from a dedicated GNN and an edge
// MLP, Gumbel-sigmoid sampling with a straight-through estimator, per-graph
// normalized probabilities and lowest-K% edge selection.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/encoder.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/rng.hpp"

namespace pruneood {

struct SelectorParams {
  GnnParams gnn;
  Linear fc1;  // 3F -> F
  Linear fc2;  // F -> 1

  [[nodiscard]] NamedTensors named_parameters(const std::string& prefix) const {
    NamedTensors out = gnn.named_parameters(prefix + ".gnn");
    append_linear(out, prefix + ".edge_mlp.fc1", fc1);
    append_linear(out, prefix + ".edge_mlp.fc2", fc2);
    return out;
  }
};

inline SelectorParams make_selector(GnnKind kind, std::size_t in_dim, std::size_t width,
                                    std::size_t num_layers, Rng& rng) {
  SelectorParams p;
  p.gnn = make_gnn(kind, in_dim, width, num_layers, rng);
  p.fc1 = make_linear(3 * width, width, rng);
  p.fc2 = make_linear(width, 1, rng);
  return p;
}

// One logit per undirected edge (edges x 1), symmetric in the endpoints:
// w_ij = (mlp([h_i, h_j, h_i * h_j]) + mlp([h_j, h_i, h_j * h_i])) / 2.
inline Tensor edge_logits(Tape& t, const Batch& batch, const SelectorParams& params) {
  if (params.fc1.in_dim() != 3 * params.gnn.width) {
    throw ContractError("edge_logits: edge MLP input width must be 3 x selector GNN width");
  }
  const Tensor h = encode(t, batch, std::nullopt, params.gnn);
  const Tensor hs = ad::gather_rows(t, h, batch.msg_src);
  const Tensor hd = ad::gather_rows(t, h, batch.msg_dst);
  const Tensor pair = ad::concat(t, {hs, hd, ad::mul(t, hs, hd)});
  const Tensor raw = linear(t, ad::relu(t, linear(t, pair, params.fc1)), params.fc2);
  const std::size_t m = batch.num_edges();
  std::vector<std::size_t> forward_dir(m), reverse_dir(m);
  std::iota(forward_dir.begin(), forward_dir.end(), 0);
  std::iota(reverse_dir.begin(), reverse_dir.end(), m);
  return ad::scale(t, ad::add(t, ad::gather_rows(t, raw, std::move(forward_dir)),
                              ad::gather_rows(t, raw, std::move(reverse_dir))),
                   0.5);
}

enum class SampleMode { Train, Eval };

struct EdgeSample {
  Tensor p;        // relaxed probability per edge
  Tensor a_tilde;  // edge weight fed to the encoder
};

// Train: p = sigmoid((log u - log(1 - u) + w) / tau) for the given uniform
// draws u, a_tilde = hard(p) with the gradient of p. Eval: p = a_tilde = sigmoid(w).
inline EdgeSample gumbel_sample(Tape& t, const Tensor& w, double tau, std::span<const double> uniforms,
                                SampleMode mode) {
  if (!(tau > 0.0)) throw ContractError("gumbel_sample: temperature must be positive");
  if (mode == SampleMode::Eval) {
    const Tensor p = ad::sigmoid(t, w);
    return {p, p};
  }
  if (uniforms.size() != w.numel()) {
    throw ContractError("gumbel_sample: " + std::to_string(uniforms.size()) + " uniform draws for " +
                        std::to_string(w.numel()) + " edges");
  }
  std::vector<double> noise(uniforms.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    const double u = uniforms[i];
    if (!(u > 0.0 && u < 1.0)) throw ContractError("gumbel_sample: uniform draw outside (0, 1)");
    noise[i] = std::log(u) - std::log(1.0 - u);
  }
  const Tensor z = ad::add(t, w, Tensor::from(w.shape(), std::move(noise)));
  const Tensor p = ad::sigmoid(t, ad::scale(t, z, 1.0 / tau));
  return {p, ad::straight_through(t, p)};
}

inline EdgeSample gumbel_sample(Tape& t, const Tensor& w, double tau, Rng& rng, SampleMode mode) {
  if (!(tau > 0.0)) throw ContractError("gumbel_sample: temperature must be positive");
  std::vector<double> u;
  if (mode == SampleMode::Train) {
    u.resize(w.numel());
    for (double& x : u) x = uniform_open(rng);
  }
  return gumbel_sample(t, w, tau, u, mode);
}

inline void require_edges_per_graph(const Batch& batch, const char* who) {
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    if (batch.graph_edge_count(g) == 0) {
      throw ContractError(std::string(who) + ": graph " + std::to_string(g) + " has no edges");
    }
  }
}

// p_hat_e = sigmoid(w_e) / sum of sigmoid(w) over the edges of e's graph.
inline Tensor normalize_probs(Tape& t, const Tensor& w, const Batch& batch) {
  require_edges_per_graph(batch, "normalize_probs");
  const Tensor log_s = ad::log(t, ad::sigmoid(t, w));
  const Tensor totals = ad::scatter_add_rows(t, ad::sigmoid(t, w), batch.edge_to_graph, batch.num_graphs);
  const Tensor log_total = ad::gather_rows(t, ad::log(t, totals), batch.edge_to_graph);
  return ad::exp(t, ad::sub(t, log_s, log_total));
}

// ceil(K% of m), guarded against round-off in K * m / 100.
inline std::size_t percent_count(double k_percent, std::size_t m) {
  const double raw = k_percent * static_cast<double>(m) / 100.0;
  const auto n = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::min(m, std::max<std::size_t>(n, m > 0 ? 1 : 0));
}

// Edges of [begin, end) ordered by ascending score, ties by lower index.
inline std::vector<std::size_t> ascending_order(std::span<const double> scores, std::size_t begin,
                                                std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  return idx;
}

// Descending by score, ties by lower index.
inline std::vector<std::size_t> descending_order(std::span<const double> scores, std::size_t begin,
                                                 std::size_t end) {
  std::vector<std::size_t> idx(end - begin);
  std::iota(idx.begin(), idx.end(), begin);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

// Per graph, the ceil(K/100 * m_g) edges with the smallest logits (global
// edge indices).
inline std::vector<std::vector<std::size_t>> bottom_k_edges(std::span<const double> w,
                                                            std::span<const std::size_t> edge_offsets,
                                                            double k_percent) {
  if (!(k_percent > 0.0 && k_percent <= 100.0)) {
    throw ContractError("bottom_k_edges: K must lie in (0, 100]");
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t g = 0; g + 1 < edge_offsets.size(); ++g) {
    auto order = ascending_order(w, edge_offsets[g], edge_offsets[g + 1]);
    order.resize(percent_count(k_percent, order.size()));
    out.push_back(std::move(order));
  }
  return out;
}

}  // namespace pruneood
