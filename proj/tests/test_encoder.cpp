#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "pruneood/encoder.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/rng.hpp"

using namespace pruneood;

namespace {

Graph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t d, double density = 0.35) {
  Graph g;
  g.num_nodes = n;
  g.feature_dim = d;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t i = 0; i < n * d; ++i) g.features.push_back(u(rng));
  std::bernoulli_distribution keep(density);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      if (keep(rng)) g.edges.emplace_back(a, b);
    }
  }
  return g;
}

std::vector<double> node_embeddings(const Graph& g, const GnnParams& p, std::optional<std::vector<double>> w = {}) {
  Tape t;
  const Batch b = batch_graphs(std::vector<Graph>{g});
  std::optional<Tensor> wt;
  if (w) wt = Tensor::column(*w);
  return encode(t, b, wt, p).values();
}

std::vector<double> graph_logits(const std::vector<Graph>& gs, const GnnParams& p, const ClassifierParams& c) {
  Tape t;
  const Batch b = batch_graphs(gs);
  return predict_logits(t, readout_sum(t, encode(t, b, std::nullopt, p), b), c).values();
}

// Independent dense GIN forward pass written directly from the update rule:
// adjacency matrix, plain loops, no tape.
std::vector<double> dense_gin(const Graph& g, const GnnParams& p) {
  const std::size_t n = g.num_nodes;
  std::vector<std::vector<double>> adj(n, std::vector<double>(n, 0.0));
  for (auto [u, v] : g.edges) adj[u][v] = adj[v][u] = 1.0;
  std::vector<double> h = g.features;
  std::size_t width = g.feature_dim;
  auto affine = [&](const std::vector<double>& x, std::size_t in, const Linear& l) {
    const std::size_t out = l.out_dim();
    std::vector<double> y(n * out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        double s = l.bias.data()[o];
        for (std::size_t i = 0; i < in; ++i) s += x[r * in + i] * l.weight.data()[i * out + o];
        y[r * out + o] = s;
      }
    }
    return y;
  };
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& layer = p.layers[li];
    std::vector<double> z(n * width, 0.0);
    for (std::size_t v = 0; v < n; ++v) {
      for (std::size_t f = 0; f < width; ++f) {
        double s = (1.0 + layer.eps.item()) * h[v * width + f];
        for (std::size_t u = 0; u < n; ++u) s += adj[u][v] * h[u * width + f];
        z[v * width + f] = s;
      }
    }
    auto a = affine(z, width, layer.fc1);
    for (double& x : a) x = std::max(0.0, x);
    h = affine(a, layer.fc1.out_dim(), layer.fc2);
    width = layer.fc2.out_dim();
    if (li + 1 < p.layers.size()) {
      for (double& x : h) x = std::max(0.0, x);
    }
  }
  return h;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  EXPECT_EQ(a.size(), b.size());
  double m = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

GnnParams nonzero_eps(GnnParams p, double eps) {
  for (auto& l : p.layers) {
    if (l.eps.defined()) l.eps.mutable_data()[0] = eps;
  }
  return p;
}

}  // namespace

TEST(Encode, AllZeroWeightsEqualsEdgelessGraph) {
  std::mt19937_64 rng(1);
  Rng prng = make_stream(1, "enc");
  const Graph g = random_graph(rng, 7, 3);
  const auto p = make_gnn(GnnKind::Gin, 3, 8, 3, prng);
  Graph edgeless = g;
  edgeless.edges.clear();
  EXPECT_LE(max_abs_diff(node_embeddings(g, p, std::vector<double>(g.edges.size(), 0.0)), node_embeddings(edgeless, p)),
            1e-12);
}

TEST(Encode, ZeroWeightOnOneEdgeEqualsDeletingIt) {
  std::mt19937_64 rng(2);
  Rng prng = make_stream(2, "enc");
  for (auto kind : {GnnKind::Gin, GnnKind::Gcn}) {
    const auto p = make_gnn(kind, 3, 8, 3, prng);
    for (int trial = 0; trial < 10; ++trial) {
      const Graph g = random_graph(rng, 8, 3);
      if (g.edges.empty()) continue;
      const std::size_t drop = rng() % g.edges.size();
      std::vector<double> w(g.edges.size(), 1.0);
      w[drop] = 0.0;
      Graph deleted = g;
      deleted.edges.erase(deleted.edges.begin() + static_cast<std::ptrdiff_t>(drop));
      EXPECT_LE(max_abs_diff(node_embeddings(g, p, w), node_embeddings(deleted, p)), 1e-12) << to_string(kind);
    }
  }
}

TEST(Encode, UnitWeightsMatchUnweightedAndIndependentDenseForward) {
  std::mt19937_64 rng(3);
  Rng prng = make_stream(3, "enc");
  const auto p = nonzero_eps(make_gnn(GnnKind::Gin, 4, 6, 3, prng), 0.3);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph g = random_graph(rng, 9, 4);
    const auto unweighted = node_embeddings(g, p);
    EXPECT_LE(max_abs_diff(node_embeddings(g, p, std::vector<double>(g.edges.size(), 1.0)), unweighted), 1e-12);
    EXPECT_LE(max_abs_diff(unweighted, dense_gin(g, p)), 1e-12);
  }
}

TEST(Encode, NodePermutationPermutesEmbeddingsAndKeepsGraphLogits) {
  std::mt19937_64 rng(4);
  Rng prng = make_stream(4, "enc");
  for (auto kind : {GnnKind::Gin, GnnKind::Gcn}) {
    const auto p = make_gnn(kind, 3, 16, 3, prng);
    const auto c = make_classifier(16, 3, prng);
    for (int trial = 0; trial < 5; ++trial) {
      const Graph g = random_graph(rng, 10, 3);
      std::vector<std::size_t> perm(g.num_nodes);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Graph pg = g;
      for (std::size_t v = 0; v < g.num_nodes; ++v) {
        for (std::size_t f = 0; f < 3; ++f) pg.features[perm[v] * 3 + f] = g.features[v * 3 + f];
      }
      for (auto& [a, b] : pg.edges) {
        const std::size_t x = perm[a], y = perm[b];
        a = std::min(x, y);
        b = std::max(x, y);
      }
      const auto h = node_embeddings(g, p), ph = node_embeddings(pg, p);
      for (std::size_t v = 0; v < g.num_nodes; ++v) {
        for (std::size_t f = 0; f < 16; ++f) EXPECT_NEAR(ph[perm[v] * 16 + f], h[v * 16 + f], 1e-9);
      }
      EXPECT_LE(max_abs_diff(graph_logits({g}, p, c), graph_logits({pg}, p, c)), 1e-9) << to_string(kind);
    }
  }
}

TEST(Encode, WeightLengthAndRangeAreContractErrors) {
  std::mt19937_64 rng(5);
  Rng prng = make_stream(5, "enc");
  const Graph g = random_graph(rng, 6, 2, 0.8);
  const auto p = make_gnn(GnnKind::Gin, 2, 4, 2, prng);
  EXPECT_THROW(node_embeddings(g, p, std::vector<double>(g.edges.size() + 1, 1.0)), ContractError);
  std::vector<double> bad(g.edges.size(), 0.5);
  bad[0] = 1.5;
  EXPECT_THROW(node_embeddings(g, p, bad), ContractError);
  const auto wrong_dim = make_gnn(GnnKind::Gin, 3, 4, 2, prng);
  EXPECT_THROW(node_embeddings(g, wrong_dim), ContractError);
}

TEST(Readout, SingleNodeGraphsEqualNodeEmbedding) {
  Tape t;
  Graph a;
  a.num_nodes = 1;
  a.feature_dim = 2;
  a.features = {1, 2};
  Graph b = a;
  b.features = {3, -4};
  const Batch batch = batch_graphs(std::vector<Graph>{a, b});
  const Tensor x = batch.feature_tensor();
  EXPECT_EQ(readout_sum(t, x, batch).values(), x.values());
}

TEST(Readout, TwoDisjointCopiesDoubleTheReadout) {
  std::mt19937_64 rng(6);
  Rng prng = make_stream(6, "enc");
  const Graph g = random_graph(rng, 5, 2, 0.6);
  Graph twice = g;
  twice.num_nodes = 2 * g.num_nodes;
  twice.features.insert(twice.features.end(), g.features.begin(), g.features.end());
  for (auto [u, v] : g.edges) twice.edges.emplace_back(u + g.num_nodes, v + g.num_nodes);
  const auto p = make_gnn(GnnKind::Gin, 2, 5, 2, prng);
  auto pooled = [&](const Graph& x) {
    Tape t;
    const Batch b = batch_graphs(std::vector<Graph>{x});
    return readout_sum(t, encode(t, b, std::nullopt, p), b).values();
  };
  const auto one = pooled(g), two = pooled(twice);
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_NEAR(two[i], 2 * one[i], 1e-12);
}

TEST(Readout, RowsAreColumnSumsOfEachGraphSlice) {
  Tape t;
  Graph a;
  a.num_nodes = 2;
  a.feature_dim = 2;
  a.features = {1, 2, 3, 4};
  Graph b;
  b.num_nodes = 3;
  b.feature_dim = 2;
  b.features = {5, 6, 7, 8, 9, 10};
  const Batch batch = batch_graphs(std::vector<Graph>{a, b});
  EXPECT_EQ(readout_sum(t, batch.feature_tensor(), batch).values(), (std::vector<double>{4, 6, 21, 24}));
}

TEST(Classifier, ZeroWeightsGiveBias) {
  Tape t;
  ClassifierParams c{{Tensor::zeros({3, 2}), Tensor::from({1, 2}, {0.5, -1.5})}};
  const auto out = predict_logits(t, Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}), c).values();
  EXPECT_EQ(out, (std::vector<double>{0.5, -1.5, 0.5, -1.5}));
}

TEST(Classifier, IdentityWeightsPassEmbeddingsThrough) {
  Tape t;
  ClassifierParams c{{Tensor::from({2, 2}, {1, 0, 0, 1}), Tensor::zeros({1, 2})}};
  const Tensor x = Tensor::from({2, 2}, {1.5, -2, 3, 4});
  EXPECT_EQ(predict_logits(t, x, c).values(), x.values());
}

TEST(Classifier, MatchesDirectMatrixArithmetic) {
  Rng prng = make_stream(7, "enc");
  const auto c = make_classifier(4, 3, prng);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2, 2);
  std::vector<double> x(5 * 4);
  for (double& v : x) v = u(rng);
  Tape t;
  const auto out = predict_logits(t, Tensor::from({5, 4}, x), c).values();
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t k = 0; k < 3; ++k) {
      double s = c.fc.bias.data()[k];
      for (std::size_t i = 0; i < 4; ++i) s += x[r * 4 + i] * c.fc.weight.data()[i * 3 + k];
      EXPECT_NEAR(out[r * 3 + k], s, 1e-12);
    }
  }
  EXPECT_THROW(predict_logits(t, Tensor::zeros({5, 3}), c), ContractError);
}

TEST(Parameters, InitRangeAndNames) {
  Rng prng = make_stream(8, "enc");
  const auto p = make_gnn(GnnKind::Gin, 4, 16, 3, prng);
  const auto named = p.named_parameters("encoder");
  EXPECT_EQ(named.size(), 3u * 5u);
  EXPECT_EQ(named.front().first, "encoder.layer0.fc1.weight");
  EXPECT_EQ(named.back().first, "encoder.layer2.eps");
  for (double w : p.layers[0].fc1.weight.data()) EXPECT_LE(std::abs(w), 0.5);
  for (double w : p.layers[1].fc1.weight.data()) EXPECT_LE(std::abs(w), 0.25);
  EXPECT_EQ(make_gnn(GnnKind::Gcn, 4, 16, 2, prng).named_parameters("g").size(), 4u);
}

TEST(GradCheck, LogitsGradientsForEveryParameter) {
  std::mt19937_64 rng(9);
  Rng prng = make_stream(9, "enc");
  const std::vector<Graph> gs{random_graph(rng, 5, 3, 0.6), random_graph(rng, 4, 3, 0.7)};
  const Batch batch = batch_graphs(gs);
  std::vector<double> wv(batch.num_edges());
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (double& x : wv) x = u(rng);
  for (auto kind : {GnnKind::Gin, GnnKind::Gcn}) {
    auto p = nonzero_eps(make_gnn(kind, 3, 4, 2, prng), 0.1);
    const auto c = make_classifier(4, 2, prng);
    NamedTensors named = p.named_parameters("e");
    for (auto& kv : c.named_parameters("c")) named.push_back(kv);
    Tensor w = Tensor::column(wv, true);
    std::vector<Tensor> params{w};
    for (auto& [n, t] : named) params.push_back(t);
    const Tensor mix = Tensor::from({2, 2}, {0.3, -0.7, 1.1, 0.4});
    auto builder = [&](Tape& t, std::span<const Tensor> ps) {
      const Tensor logits = predict_logits(t, readout_sum(t, encode(t, batch, ps[0], p), batch), c);
      return ad::sum(t, ad::mul(t, logits, mix));
    };
    const auto rep = ad::grad_check(builder, params, 1e-5, 1e-3);
    EXPECT_TRUE(rep.passed) << to_string(kind) << ": " << rep.describe_worst();
  }
}
