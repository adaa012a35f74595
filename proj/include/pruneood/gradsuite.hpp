#pragma once

// Release-gate gradient suites: every built-in kernel against central finite
// differences on random shapes, the straight-through kernel against its exact
// contract, and the full training objective end to end on a small graph.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/encoder.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/losses.hpp"
#include "pruneood/rng.hpp"
#include "pruneood/selector.hpp"

namespace pruneood::gradsuite {

struct SuiteOptions {
  std::uint64_t seed = 0;
  std::size_t shapes = 10;
  double step = 1e-5;
  double kernel_tolerance = 1e-4;
  double end_to_end_tolerance = 1e-3;
  std::optional<ad::OpKind> inject_fault;
};

struct CheckResult {
  std::string name;
  std::size_t cases = 0;
  std::size_t elements = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::string worst;  // description of the worst element
};

struct SuiteReport {
  std::vector<CheckResult> checks;

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
  [[nodiscard]] std::vector<std::string> failed_names() const {
    std::vector<std::string> out;
    for (const auto& c : checks) {
      if (!c.passed) out.push_back(c.name);
    }
    return out;
  }
};

namespace detail {

using ad::OpKind;
using ad::Shape;
using ad::Tape;
using ad::Tensor;

// A loss that reduces any tensor to a scalar with fixed random weights. It is
// recorded as a custom op so that fault injection on a built-in kernel never
// touches the reduction.
inline Tensor weighted_sum(Tape& t, const Tensor& x, const std::vector<double>& weights) {
  double s = 0.0;
  const auto v = x.data();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
  return t.custom("weighted-sum", {x}, Tensor::scalar(s),
                  [weights](std::span<const double> g, const std::vector<Tensor>&, const Tensor&,
                            std::vector<std::vector<double>*>& dx) {
                    if (!dx[0]) return;
                    for (std::size_t i = 0; i < weights.size(); ++i) (*dx[0])[i] += g[0] * weights[i];
                  });
}

inline std::vector<double> uniform_values(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = lo + (hi - lo) * uniform_open(rng);
  return v;
}

// Values bounded away from zero so that relu and abs kinks sit far outside the
// finite-difference stencil.
inline std::vector<double> away_from_zero(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) {
    const double mag = 0.2 + 1.3 * uniform_open(rng);
    x = uniform_open(rng) < 0.5 ? -mag : mag;
  }
  return v;
}

inline Tensor param(Shape s, std::vector<double> v) { return Tensor::from(s, std::move(v), true); }

struct KernelCase {
  std::vector<Tensor> params;
  ad::OpAttrs attrs;
};

inline KernelCase make_case(OpKind kind, Shape s, Rng& rng) {
  const std::size_t r = s.rows;
  const std::size_t c = s.cols;
  KernelCase kc;
  auto dense = [&](Shape sh) { return param(sh, uniform_values(rng, sh.numel(), -1.5, 1.5)); };
  switch (kind) {
    case OpKind::MatMul: {
      const std::size_t inner = 1 + uniform_index(rng, 4);
      kc.params = {dense({r, inner}), dense({inner, c})};
      break;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
      kc.params = {dense(s), dense(s)};
      break;
    case OpKind::ScalarMul:
      kc.params = {dense(s)};
      kc.attrs.scalar = -2.0 + 4.0 * uniform_open(rng);
      break;
    case OpKind::ConcatLastDim:
      kc.params = {dense(s), dense({r, 1 + uniform_index(rng, 3)})};
      break;
    case OpKind::Relu:
    case OpKind::Abs:
      kc.params = {param(s, away_from_zero(rng, s.numel()))};
      break;
    case OpKind::Log:
      kc.params = {param(s, uniform_values(rng, s.numel(), 0.3, 2.5))};
      break;
    case OpKind::AddBias:
      kc.params = {dense(s), dense({1, c})};
      break;
    case OpKind::GatherRows: {
      kc.params = {dense(s)};
      const std::size_t n = 1 + uniform_index(rng, 2 * r);
      for (std::size_t i = 0; i < n; ++i) kc.attrs.index.push_back(uniform_index(rng, r));
      break;
    }
    case OpKind::ScatterAddRows: {
      kc.params = {dense(s)};
      kc.attrs.out_rows = 1 + uniform_index(rng, 4);
      for (std::size_t i = 0; i < r; ++i) kc.attrs.index.push_back(uniform_index(rng, kc.attrs.out_rows));
      break;
    }
    default:
      kc.params = {dense(s)};
      break;
  }
  return kc;
}

inline void fold(CheckResult& out, const ad::GradCheckReport& rep, const std::string& where) {
  ++out.cases;
  out.elements += rep.elements.size();
  if (out.worst.empty() || rep.max_error > out.max_error) {
    out.max_error = rep.max_error;
    out.worst = where + ": " + rep.describe_worst();
  }
  out.passed = out.passed && rep.passed;
}

// Straight-through contract: binary forward, backward passes the upstream
// gradient through unchanged.
inline CheckResult check_straight_through(const std::vector<Shape>& shapes, Rng& rng,
                                          const std::optional<OpKind>& fault) {
  CheckResult out{std::string(ad::op_name(OpKind::StraightThrough)), 0, 0, 0.0, 0.0, true, {}};
  for (const Shape& s : shapes) {
    Tensor p = param(s, uniform_values(rng, s.numel(), 0.0, 1.0));
    const std::vector<double> w = uniform_values(rng, s.numel(), -1.5, 1.5);
    Tape tape;
    if (fault) tape.inject_fault(*fault);
    const Tensor h = ad::straight_through(tape, p);
    tape.backward(weighted_sum(tape, h, w));
    ++out.cases;
    for (std::size_t i = 0; i < s.numel(); ++i) {
      ++out.elements;
      const double expect_fwd = p.data()[i] >= 0.5 ? 1.0 : 0.0;
      const double err = std::max(std::abs(h.data()[i] - expect_fwd), std::abs(p.grad()[i] - w[i]));
      if (err > out.max_error) {
        out.max_error = err;
        out.worst = "shape " + s.str() + " element " + std::to_string(i);
      }
    }
  }
  out.passed = out.max_error == 0.0;
  return out;
}

}  // namespace detail

inline std::vector<ad::Shape> random_shapes(std::size_t n, Rng& rng) {
  std::vector<ad::Shape> shapes;
  for (std::size_t i = 0; i < n; ++i) shapes.push_back({1 + uniform_index(rng, 5), 1 + uniform_index(rng, 5)});
  return shapes;
}

inline CheckResult check_kernel(ad::OpKind kind, const std::vector<ad::Shape>& shapes, Rng& rng,
                                const SuiteOptions& opts) {
  using namespace detail;
  if (kind == OpKind::StraightThrough) return check_straight_through(shapes, rng, opts.inject_fault);
  CheckResult out{std::string(ad::op_name(kind)), 0, 0, 0.0, opts.kernel_tolerance, true, {}};
  for (const Shape& s : shapes) {
    KernelCase kc = make_case(kind, s, rng);
    const Shape out_shape = ad::detail::infer_shape(kind, kc.params, kc.attrs);
    const std::vector<double> w = uniform_values(rng, out_shape.numel(), -1.5, 1.5);
    const ad::OpAttrs attrs = kc.attrs;
    ad::LossBuilder builder = [kind, attrs, w](Tape& t, std::span<const Tensor> ps) {
      std::vector<Tensor> inputs(ps.begin(), ps.end());
      return weighted_sum(t, t.apply(kind, std::move(inputs), attrs), w);
    };
    std::function<void(Tape&)> hook;
    if (opts.inject_fault) hook = [f = *opts.inject_fault](Tape& t) { t.inject_fault(f); };
    const auto rep = ad::grad_check(builder, kc.params, opts.step, opts.kernel_tolerance, hook);
    fold(out, rep, "shape " + s.str());
  }
  return out;
}

// A 6-node graph: a triangle joined by one bridge to a 3-node path, with
// distinct node features.
inline Graph end_to_end_graph(std::size_t feature_dim, Rng& rng) {
  Graph g;
  g.num_nodes = 6;
  g.feature_dim = feature_dim;
  g.features = detail::uniform_values(rng, 6 * feature_dim, -1.0, 1.0);
  g.edges = {{0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}, {4, 5}};
  g.label = 1;
  g.edge_truth = std::vector<bool>{true, true, true, false, false, false};
  return g;
}

// Gradient of L = L_GT + lambda1 L_e + lambda2 L_s with respect to every
// selector, encoder and classifier parameter. Edge weights use the soft
// deterministic path a = sigmoid(w): the hard straight-through forward is
// piecewise constant and has no finite-difference derivative, and its backward
// contract is checked separately.
inline CheckResult check_end_to_end(Rng& rng, const SuiteOptions& opts) {
  using namespace detail;
  const std::size_t d = 3, width = 4, classes = 2;
  const Graph g = end_to_end_graph(d, rng);
  const Batch batch = batch_graphs(std::vector<Graph>{g});
  GnnParams enc = make_gnn(GnnKind::Gin, d, width, 2, rng);
  const ClassifierParams cls = make_classifier(width, classes, rng);
  SelectorParams sel = make_selector(GnnKind::Gin, d, width, 2, rng);
  LossWeights weights;
  weights.lambda2 = 0.5;  // large enough that L_s contributes visibly

  std::vector<Tensor> params;
  for (auto& [n, t] : enc.named_parameters("encoder")) params.push_back(t);
  for (auto& [n, t] : cls.named_parameters("classifier")) params.push_back(t);
  for (auto& [n, t] : sel.named_parameters("selector")) params.push_back(t);
  // Move away from the zero-initialized biases and self-loop coefficients:
  // with zero biases a node whose hidden units are all inactive sits exactly
  // on a relu kink, where central differences are meaningless.
  std::vector<Tensor> generic;
  for (auto& layer : enc.layers) generic.insert(generic.end(), {layer.fc1.bias, layer.fc2.bias, layer.eps});
  for (auto& layer : sel.gnn.layers) generic.insert(generic.end(), {layer.fc1.bias, layer.fc2.bias, layer.eps});
  generic.insert(generic.end(), {cls.fc.bias, sel.fc1.bias, sel.fc2.bias});
  for (auto& t : generic) {
    for (double& x : t.mutable_data()) x = uniform_values(rng, 1, -0.3, 0.3)[0];
  }

  ad::LossBuilder builder = [&](Tape& t, std::span<const Tensor>) {
    const Tensor w = edge_logits(t, batch, sel);
    const Tensor a = ad::sigmoid(t, w);
    const Tensor p_hat = normalize_probs(t, w, batch);
    const auto lowest = bottom_k_edges(w.data(), batch.edge_offsets, weights.k_percent);
    const Tensor l_s = loss_align(t, p_hat, batch, lowest, weights.epsilon_mode, weights.fixed_epsilon);
    const Tensor l_e = loss_size(t, a, batch, weights.eta);
    const Tensor h = encode(t, batch, a, enc);
    const Tensor logits = predict_logits(t, readout_sum(t, h, batch), cls);
    return loss_total(t, loss_erm(t, logits, batch.labels), l_e, l_s, weights);
  };
  std::function<void(Tape&)> hook;
  if (opts.inject_fault) hook = [f = *opts.inject_fault](Tape& t) { t.inject_fault(f); };
  CheckResult out{"end-to-end", 0, 0, 0.0, opts.end_to_end_tolerance, true, {}};
  fold(out, ad::grad_check(builder, params, opts.step, opts.end_to_end_tolerance, hook), "6-node graph");
  return out;
}

inline SuiteReport run(const SuiteOptions& opts) {
  Rng rng = make_stream(opts.seed, "gradcheck");
  const auto shapes = random_shapes(opts.shapes, rng);
  SuiteReport report;
  for (ad::OpKind k : ad::kBuiltinKinds) report.checks.push_back(check_kernel(k, shapes, rng, opts));
  report.checks.push_back(check_end_to_end(rng, opts));
  return report;
}

inline void write_report(std::ostream& os, const SuiteReport& r) {
  for (const auto& c : r.checks) {
    os << (c.passed ? "PASS " : "FAIL ") << c.name << " cases=" << c.cases << " elements=" << c.elements
       << " max_rel_error=" << c.max_error << " tol=" << c.tolerance;
    if (!c.passed) os << " worst=[" << c.worst << "]";
    os << '\n';
  }
  os << (r.passed() ? "grad-check: PASS" : "grad-check: FAIL") << '\n';
}

}  // namespace pruneood::gradsuite
