#pragma once

// Training objective: cross-entropy on the pruned graph, the edge-budget
// (graph size) penalty and the epsilon-probability alignment penalty.

#include <span>
#include <string>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/graph.hpp"

namespace pruneood {

using ad::Tape;
using ad::Tensor;

enum class EpsilonMode { PerGraphUniform, Fixed };

struct LossWeights {
  double lambda1 = 10.0;  // edge budget penalty
  double lambda2 = 0.01;  // alignment penalty
  double eta = 0.75;
  double k_percent = 70.0;
  EpsilonMode epsilon_mode = EpsilonMode::PerGraphUniform;
  double fixed_epsilon = 0.0;  // used when epsilon_mode == Fixed

  void validate() const {
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ContractError("loss weights: lambda1, lambda2 must be >= 0");
    if (!(eta > 0.0 && eta <= 1.0)) throw ContractError("loss weights: eta must lie in (0, 1]");
    if (!(k_percent > 0.0 && k_percent <= 100.0)) throw ContractError("loss weights: K must lie in (0, 100]");
  }
};

// Mean over graphs of -log softmax(logits)[label].
inline Tensor loss_erm(Tape& t, const Tensor& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) {
    throw ContractError("loss_erm: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(logits.rows()) + " rows of logits");
  }
  if (labels.empty()) throw ContractError("loss_erm: empty batch");
  const std::size_t c = logits.cols();
  std::vector<double> onehot(logits.numel(), 0.0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c) {
      throw ContractError("loss_erm: label " + std::to_string(labels[r]) + " outside [0, " +
                          std::to_string(c) + ")");
    }
    onehot[r * c + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  const Tensor picked = ad::mul(t, ad::log_softmax_rows(t, logits), Tensor::from(logits.shape(), std::move(onehot)));
  return ad::scale(t, ad::sum(t, picked), -1.0 / static_cast<double>(labels.size()));
}

// Mean over graphs of (sum_e a_e / m_g - eta)^2.
inline Tensor loss_size(Tape& t, const Tensor& a_tilde, const Batch& batch, double eta) {
  std::vector<double> inv_m(batch.num_graphs);
  for (std::size_t g = 0; g < batch.num_graphs; ++g) {
    const std::size_t m = batch.graph_edge_count(g);
    if (m == 0) throw ContractError("loss_size: graph " + std::to_string(g) + " has no edges");
    inv_m[g] = 1.0 / static_cast<double>(m);
  }
  const Tensor totals = ad::scatter_add_rows(t, a_tilde, batch.edge_to_graph, batch.num_graphs);
  const Tensor frac = ad::mul(t, totals, Tensor::column(std::move(inv_m)));
  return ad::mean(t, ad::square(t, ad::sub(t, frac, Tensor::filled({batch.num_graphs, 1}, eta))));
}

// Mean over graphs of (1/|E_s|) sum_{e in E_s} |p_hat_e - eps_g|, with
// eps_g = 1/m_g (PerGraphUniform) or a fixed value.
inline Tensor loss_align(Tape& t, const Tensor& p_hat, const Batch& batch,
                         const std::vector<std::vector<std::size_t>>& selection, EpsilonMode mode,
                         double fixed_epsilon = 0.0) {
  if (selection.size() != batch.num_graphs) {
    throw ContractError("loss_align: selection covers " + std::to_string(selection.size()) +
                        " graphs, batch has " + std::to_string(batch.num_graphs));
  }
  std::vector<std::size_t> rows;
  std::vector<double> eps, weight;
  const double inv_graphs = 1.0 / static_cast<double>(batch.num_graphs);
  for (std::size_t g = 0; g < selection.size(); ++g) {
    if (selection[g].empty()) throw ContractError("loss_align: empty selection for graph " + std::to_string(g));
    const double e = mode == EpsilonMode::PerGraphUniform
                         ? 1.0 / static_cast<double>(batch.graph_edge_count(g))
                         : fixed_epsilon;
    for (std::size_t edge : selection[g]) {
      rows.push_back(edge);
      eps.push_back(e);
      weight.push_back(inv_graphs / static_cast<double>(selection[g].size()));
    }
  }
  const Tensor picked = ad::gather_rows(t, p_hat, std::move(rows));
  const Tensor dev = ad::abs(t, ad::sub(t, picked, Tensor::column(std::move(eps))));
  return ad::sum(t, ad::mul(t, dev, Tensor::column(std::move(weight))));
}

// L = L_GT + lambda1 * L_e + lambda2 * L_s.
inline Tensor loss_total(Tape& t, const Tensor& erm, const Tensor& size, const Tensor& align,
                         const LossWeights& w) {
  return ad::add(t, erm, ad::add(t, ad::scale(t, size, w.lambda1), ad::scale(t, align, w.lambda2)));
}

}  // namespace pruneood
