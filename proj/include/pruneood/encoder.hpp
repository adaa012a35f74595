#pragma once

// Message-passing encoders (GIN, GCN) with per-edge weights, sum readout and
// a linear classifier head.

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/rng.hpp"

namespace pruneood {

using ad::Tape;
using ad::Tensor;
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  [[nodiscard]] std::size_t in_dim() const { return weight.rows(); }
  [[nodiscard]] std::size_t out_dim() const { return weight.cols(); }
};

// Weights and bias uniform in [-1/sqrt(in), 1/sqrt(in)].
inline Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  const double limit = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> w(in * out), b(out);
  for (double& x : w) x = dist(rng);
  for (double& x : b) x = dist(rng);
  return {Tensor::from({in, out}, std::move(w), true), Tensor::from({1, out}, std::move(b), true)};
}

inline Tensor linear(Tape& t, const Tensor& x, const Linear& l) {
  return ad::add_bias(t, ad::matmul(t, x, l.weight), l.bias);
}

inline void append_linear(NamedTensors& out, const std::string& prefix, const Linear& l) {
  out.emplace_back(prefix + ".weight", l.weight);
  out.emplace_back(prefix + ".bias", l.bias);
}

enum class GnnKind { Gin, Gcn };

inline std::string_view to_string(GnnKind k) { return k == GnnKind::Gin ? "gin" : "gcn"; }
inline GnnKind gnn_kind_from_string(std::string_view s) {
  if (s == "gin") return GnnKind::Gin;
  if (s == "gcn") return GnnKind::Gcn;
  throw ContractError("unknown gnn kind '" + std::string(s) + "' (expected gin or gcn)");
}

struct GnnLayer {
  // GIN: h' = fc2(relu(fc1((1 + eps) h + sum_u w_uv h_u))).
  // GCN: h' = sum over N(v) and v of w_uv / sqrt(d_u d_v) * fc1(h_u), d = 1 + weighted degree.
  Linear fc1;
  Linear fc2;   // GIN only
  Tensor eps;   // GIN only, 1 x 1
};

struct GnnParams {
  GnnKind kind = GnnKind::Gin;
  std::size_t in_dim = 0;
  std::size_t width = 0;
  std::vector<GnnLayer> layers;

  [[nodiscard]] NamedTensors named_parameters(const std::string& prefix) const {
    NamedTensors out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const std::string p = prefix + ".layer" + std::to_string(i);
      append_linear(out, p + ".fc1", layers[i].fc1);
      if (kind == GnnKind::Gin) {
        append_linear(out, p + ".fc2", layers[i].fc2);
        out.emplace_back(p + ".eps", layers[i].eps);
      }
    }
    return out;
  }
};

inline GnnParams make_gnn(GnnKind kind, std::size_t in_dim, std::size_t width, std::size_t num_layers,
                          Rng& rng) {
  if (num_layers == 0 || width == 0 || in_dim == 0) {
    throw ContractError("make_gnn: layers, width and input dimension must be positive");
  }
  GnnParams p{kind, in_dim, width, {}};
  for (std::size_t i = 0; i < num_layers; ++i) {
    const std::size_t in = i == 0 ? in_dim : width;
    GnnLayer layer;
    layer.fc1 = make_linear(in, width, rng);
    if (kind == GnnKind::Gin) {
      layer.fc2 = make_linear(width, width, rng);
      layer.eps = Tensor::zeros({1, 1}, true);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

struct ClassifierParams {
  Linear fc;

  [[nodiscard]] NamedTensors named_parameters(const std::string& prefix) const {
    NamedTensors out;
    append_linear(out, prefix + ".fc", fc);
    return out;
  }
};

inline ClassifierParams make_classifier(std::size_t width, std::size_t num_classes, Rng& rng) {
  return {make_linear(width, num_classes, rng)};
}

namespace detail {

inline void check_edge_weights(const Batch& batch, const Tensor& w) {
  if (w.rows() != batch.num_edges() || w.cols() != 1) {
    throw ContractError("encode: edge weights have shape " + w.shape().str() + ", expected [" +
                        std::to_string(batch.num_edges()) + " x 1]");
  }
  for (std::size_t e = 0; e < w.numel(); ++e) {
    const double x = w.data()[e];
    if (!(x >= 0.0 && x <= 1.0)) {
      throw ContractError("encode: edge weight " + std::to_string(e) + " = " + std::to_string(x) +
                          " outside [0, 1]");
    }
  }
}

inline Tensor gin_layer(Tape& t, const Batch& batch, const Tensor& h, const std::optional<Tensor>& wdir,
                        const GnnLayer& layer) {
  const std::size_t f = h.cols();
  Tensor msg = ad::gather_rows(t, h, batch.msg_src);
  if (wdir) msg = ad::mul(t, msg, ad::broadcast_cols(t, *wdir, f));
  const Tensor agg = ad::scatter_add_rows(t, msg, batch.msg_dst, batch.num_nodes);
  // (1 + eps) broadcast to n x f through two outer products with ones.
  const Tensor one_plus_eps = ad::add(t, layer.eps, Tensor::scalar(1.0));
  const Tensor factor = ad::matmul(t, Tensor::filled({batch.num_nodes, 1}, 1.0),
                                   ad::broadcast_cols(t, one_plus_eps, f));
  const Tensor z = ad::add(t, ad::mul(t, h, factor), agg);
  return linear(t, ad::relu(t, linear(t, z, layer.fc1)), layer.fc2);
}

struct GcnNorm {
  Tensor edge_coeff;  // 2m x 1
  Tensor self_coeff;  // n x 1
};

inline GcnNorm gcn_norm(Tape& t, const Batch& batch, const std::optional<Tensor>& wdir) {
  const std::size_t n = batch.num_nodes;
  const Tensor w = wdir ? *wdir : Tensor::filled({batch.msg_src.size(), 1}, 1.0);
  const Tensor deg = ad::add(t, ad::scatter_add_rows(t, w, batch.msg_dst, n), Tensor::filled({n, 1}, 1.0));
  const Tensor inv_sqrt = ad::exp(t, ad::scale(t, ad::log(t, deg), -0.5));
  const Tensor pair = ad::mul(t, ad::gather_rows(t, inv_sqrt, batch.msg_src),
                              ad::gather_rows(t, inv_sqrt, batch.msg_dst));
  return {ad::mul(t, w, pair), ad::square(t, inv_sqrt)};
}

inline Tensor gcn_layer(Tape& t, const Batch& batch, const Tensor& h, const GcnNorm& norm,
                        const GnnLayer& layer) {
  const Tensor x = ad::matmul(t, h, layer.fc1.weight);
  const std::size_t f = x.cols();
  const Tensor msg = ad::mul(t, ad::gather_rows(t, x, batch.msg_src), ad::broadcast_cols(t, norm.edge_coeff, f));
  const Tensor agg = ad::scatter_add_rows(t, msg, batch.msg_dst, batch.num_nodes);
  const Tensor self = ad::mul(t, x, ad::broadcast_cols(t, norm.self_coeff, f));
  return ad::add_bias(t, ad::add(t, agg, self), layer.fc1.bias);
}

}  // namespace detail

// Node embeddings (nodes x width). `edge_weights` (edges x 1, values in [0,1])
// scales both directions of each undirected edge; absent means all ones.
inline Tensor encode(Tape& t, const Batch& batch, const std::optional<Tensor>& edge_weights,
                     const GnnParams& params) {
  if (batch.feature_dim != params.in_dim) {
    throw ContractError("encode: batch feature dimension " + std::to_string(batch.feature_dim) +
                        " != encoder input dimension " + std::to_string(params.in_dim));
  }
  std::optional<Tensor> wdir;
  if (edge_weights) {
    detail::check_edge_weights(batch, *edge_weights);
    wdir = ad::gather_rows(t, *edge_weights, batch.msg_edge);
  }
  Tensor h = batch.feature_tensor();
  std::optional<detail::GcnNorm> norm;
  if (params.kind == GnnKind::Gcn) norm = detail::gcn_norm(t, batch, wdir);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    h = params.kind == GnnKind::Gin ? detail::gin_layer(t, batch, h, wdir, params.layers[i])
                                    : detail::gcn_layer(t, batch, h, *norm, params.layers[i]);
    if (i + 1 < params.layers.size()) h = ad::relu(t, h);
  }
  return h;
}

// Sum pooling per graph: graphs x width.
inline Tensor readout_sum(Tape& t, const Tensor& node_embeddings, const Batch& batch) {
  if (node_embeddings.rows() != batch.num_nodes) {
    throw ShapeError("readout_sum: embeddings have " + std::to_string(node_embeddings.rows()) +
                     " rows for " + std::to_string(batch.num_nodes) + " nodes");
  }
  return ad::scatter_add_rows(t, node_embeddings, batch.node_to_graph, batch.num_graphs);
}

inline Tensor predict_logits(Tape& t, const Tensor& graph_embeddings, const ClassifierParams& params) {
  if (graph_embeddings.cols() != params.fc.in_dim()) {
    throw ContractError("predict_logits: embedding width " + std::to_string(graph_embeddings.cols()) +
                        " != classifier input width " + std::to_string(params.fc.in_dim()));
  }
  return linear(t, graph_embeddings, params.fc);
}

}  // namespace pruneood
