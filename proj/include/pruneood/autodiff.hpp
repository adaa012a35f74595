#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation whose inputs require gradients, in creation
// order; backward() walks it in strict reverse. Tapes are rebuilt for every
// forward pass. Parameters are long-lived leaf tensors shared across tapes.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pruneood/errors.hpp"

namespace pruneood::ad {

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  [[nodiscard]] constexpr std::size_t numel() const { return rows * cols; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  [[nodiscard]] std::string str() const {
    return "[" + std::to_string(rows) + " x " + std::to_string(cols) + "]";
  }
};

struct TensorData {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until materialized
  bool requires_grad = false;
  std::int64_t tape_id = -1;  // index of the producing tape entry, -1 for leaves
};

// Shared handle to tensor storage. Copies alias the same buffer, which is what
// lets a tape entry refer back to parameters and intermediates.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return from(shape, std::vector<double>(shape.numel(), 0.0), requires_grad);
  }

  static Tensor filled(Shape shape, double v) {
    return from(shape, std::vector<double>(shape.numel(), v));
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " +
                       shape.str());
    }
    Tensor t;
    t.d_ = std::make_shared<TensorData>();
    t.d_->shape = shape;
    t.d_->value = std::move(values);
    t.d_->requires_grad = requires_grad;
    return t;
  }

  static Tensor column(std::vector<double> values, bool requires_grad = false) {
    const Shape s{values.size(), 1};
    return from(s, std::move(values), requires_grad);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from({1, 1}, {v}, requires_grad);
  }

  [[nodiscard]] bool defined() const { return static_cast<bool>(d_); }
  [[nodiscard]] const Shape& shape() const { return d_->shape; }
  [[nodiscard]] std::size_t rows() const { return d_->shape.rows; }
  [[nodiscard]] std::size_t cols() const { return d_->shape.cols; }
  [[nodiscard]] std::size_t numel() const { return d_->shape.numel(); }

  [[nodiscard]] std::span<const double> data() const { return d_->value; }
  [[nodiscard]] std::span<double> mutable_data() { return d_->value; }
  [[nodiscard]] const std::vector<double>& values() const { return d_->value; }

  [[nodiscard]] double operator()(std::size_t r, std::size_t c) const {
    return d_->value[r * d_->shape.cols + c];
  }
  [[nodiscard]] double item() const {
    if (numel() != 1) throw ShapeError("item(): tensor of shape " + shape().str());
    return d_->value[0];
  }

  [[nodiscard]] bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool on) { d_->requires_grad = on; }

  [[nodiscard]] bool has_grad() const { return !d_->grad.empty(); }
  // Materializes a zero buffer on first access.
  [[nodiscard]] std::span<double> grad() {
    if (d_->grad.empty()) d_->grad.assign(numel(), 0.0);
    return d_->grad;
  }
  [[nodiscard]] std::span<const double> grad() const {
    if (d_->grad.empty()) d_->grad.assign(numel(), 0.0);
    return d_->grad;
  }
  void zero_grad() {
    if (!d_->grad.empty()) std::fill(d_->grad.begin(), d_->grad.end(), 0.0);
  }

  [[nodiscard]] std::int64_t tape_id() const { return d_->tape_id; }

  // Same values, no history, no gradient.
  [[nodiscard]] Tensor detach() const { return from(shape(), d_->value); }

  [[nodiscard]] TensorData* impl() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

enum class OpKind {
  MatMul,
  Add,
  Sub,
  Mul,
  ScalarMul,
  ConcatLastDim,
  Relu,
  Sigmoid,
  Log,
  Exp,
  Square,
  Abs,
  SumAll,
  MeanAll,
  RowSum,
  LogSoftmaxRows,
  GatherRows,
  ScatterAddRows,
  AddBias,
  StraightThrough,
  Custom,
};

inline constexpr OpKind kBuiltinKinds[] = {
    OpKind::MatMul,     OpKind::Add,        OpKind::Sub,           OpKind::Mul,
    OpKind::ScalarMul,  OpKind::ConcatLastDim, OpKind::Relu,       OpKind::Sigmoid,
    OpKind::Log,        OpKind::Exp,        OpKind::Square,        OpKind::Abs,
    OpKind::SumAll,     OpKind::MeanAll,    OpKind::RowSum,        OpKind::LogSoftmaxRows,
    OpKind::GatherRows, OpKind::ScatterAddRows, OpKind::AddBias,   OpKind::StraightThrough,
};

inline std::string_view op_name(OpKind k) {
  switch (k) {
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "elementwise-mul";
    case OpKind::ScalarMul: return "scalar-mul";
    case OpKind::ConcatLastDim: return "concat-last-dim";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Log: return "log";
    case OpKind::Exp: return "exp";
    case OpKind::Square: return "square";
    case OpKind::Abs: return "abs";
    case OpKind::SumAll: return "sum-all";
    case OpKind::MeanAll: return "mean-all";
    case OpKind::RowSum: return "row-sum";
    case OpKind::LogSoftmaxRows: return "log-softmax-rows";
    case OpKind::GatherRows: return "gather-rows";
    case OpKind::ScatterAddRows: return "scatter-add-rows";
    case OpKind::AddBias: return "add-bias-broadcast";
    case OpKind::StraightThrough: return "straight-through";
    case OpKind::Custom: return "custom";
  }
  return "?";
}

inline std::optional<OpKind> op_from_name(std::string_view name) {
  for (OpKind k : kBuiltinKinds) {
    if (op_name(k) == name) return k;
  }
  return std::nullopt;
}

struct OpAttrs {
  double scalar = 0.0;               // scalar-mul factor
  std::vector<std::size_t> index;    // gather-rows / scatter-add-rows
  std::size_t out_rows = 0;          // scatter-add-rows
};

// Accumulates input adjoints given the output adjoint. input_grads[i] is null
// for inputs that do not require gradients.
using CustomBackward = std::function<void(std::span<const double> out_grad,
                                          const std::vector<Tensor>& inputs, const Tensor& output,
                                          std::vector<std::vector<double>*>& input_grads)>;

struct TapeEntry {
  OpKind kind;
  std::vector<Tensor> inputs;
  Tensor output;
  OpAttrs attrs;
  std::string name;
  CustomBackward custom;
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap view(const Tensor& t) { return {t.data().data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())}; }
inline ConstMap view(std::span<const double> s, Shape sh) {
  return {s.data(), Eigen::Index(sh.rows), Eigen::Index(sh.cols)};
}
inline MutMap view_mut(std::vector<double>& v, Shape sh) {
  return {v.data(), Eigen::Index(sh.rows), Eigen::Index(sh.cols)};
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

[[noreturn]] inline void shape_error(OpKind k, const std::vector<Tensor>& in, std::string_view why) {
  std::ostringstream os;
  os << op_name(k) << ": invalid shape (" << why << "); got";
  for (const auto& t : in) os << ' ' << t.shape().str();
  throw ShapeError(os.str());
}

inline void expect_arity(OpKind k, const std::vector<Tensor>& in, std::size_t n) {
  if (in.size() != n) {
    throw ContractError(std::string(op_name(k)) + ": expected " + std::to_string(n) +
                        " inputs, got " + std::to_string(in.size()));
  }
  for (const auto& t : in) {
    if (!t.defined()) throw ContractError(std::string(op_name(k)) + ": undefined input tensor");
  }
}

inline Shape infer_shape(OpKind k, const std::vector<Tensor>& in, const OpAttrs& attrs) {
  switch (k) {
    case OpKind::MatMul:
      expect_arity(k, in, 2);
      if (in[0].cols() != in[1].rows()) shape_error(k, in, "inner dimensions differ");
      return {in[0].rows(), in[1].cols()};
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
      expect_arity(k, in, 2);
      if (in[0].shape() != in[1].shape()) shape_error(k, in, "shapes must match");
      return in[0].shape();
    case OpKind::ConcatLastDim: {
      if (in.empty()) throw ContractError("concat-last-dim: no inputs");
      std::size_t cols = 0;
      for (const auto& t : in) {
        if (!t.defined()) throw ContractError("concat-last-dim: undefined input tensor");
        if (t.rows() != in[0].rows()) shape_error(k, in, "row counts must match");
        cols += t.cols();
      }
      return {in[0].rows(), cols};
    }
    case OpKind::ScalarMul:
    case OpKind::Relu:
    case OpKind::Sigmoid:
    case OpKind::Log:
    case OpKind::Exp:
    case OpKind::Square:
    case OpKind::Abs:
    case OpKind::StraightThrough:
      expect_arity(k, in, 1);
      return in[0].shape();
    case OpKind::SumAll:
      expect_arity(k, in, 1);
      return {1, 1};
    case OpKind::MeanAll:
      expect_arity(k, in, 1);
      if (in[0].numel() == 0) shape_error(k, in, "mean of empty tensor");
      return {1, 1};
    case OpKind::RowSum:
      expect_arity(k, in, 1);
      return {in[0].rows(), 1};
    case OpKind::LogSoftmaxRows:
      expect_arity(k, in, 1);
      if (in[0].cols() == 0) shape_error(k, in, "need at least one column");
      return in[0].shape();
    case OpKind::GatherRows:
      expect_arity(k, in, 1);
      for (std::size_t r = 0; r < attrs.index.size(); ++r) {
        if (attrs.index[r] >= in[0].rows()) {
          throw IndexError("gather-rows: output row " + std::to_string(r) + " reads source row " +
                           std::to_string(attrs.index[r]) + " but the source has " +
                           std::to_string(in[0].rows()) + " rows");
        }
      }
      return {attrs.index.size(), in[0].cols()};
    case OpKind::ScatterAddRows:
      expect_arity(k, in, 1);
      if (attrs.index.size() != in[0].rows()) shape_error(k, in, "index length must equal row count");
      for (std::size_t r = 0; r < attrs.index.size(); ++r) {
        if (attrs.index[r] >= attrs.out_rows) {
          throw IndexError("scatter-add-rows: source row " + std::to_string(r) + " targets row " +
                           std::to_string(attrs.index[r]) + " but out_rows is " +
                           std::to_string(attrs.out_rows));
        }
      }
      return {attrs.out_rows, in[0].cols()};
    case OpKind::AddBias:
      expect_arity(k, in, 2);
      if (in[1].rows() != 1 || in[1].cols() != in[0].cols()) {
        shape_error(k, in, "bias must be 1 x cols");
      }
      return in[0].shape();
    case OpKind::Custom:
      break;
  }
  throw ContractError("apply: custom ops must be recorded through Tape::custom");
}

inline std::vector<double> forward(OpKind k, const std::vector<Tensor>& in, const OpAttrs& attrs,
                                   Shape out_shape) {
  std::vector<double> out(out_shape.numel(), 0.0);
  auto unary = [&](auto&& f) {
    const auto x = in[0].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  };
  switch (k) {
    case OpKind::MatMul:
      view_mut(out, out_shape).noalias() = view(in[0]) * view(in[1]);
      break;
    case OpKind::Add: {
      const auto a = in[0].data(), b = in[1].data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
      break;
    }
    case OpKind::Sub: {
      const auto a = in[0].data(), b = in[1].data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
      break;
    }
    case OpKind::Mul: {
      const auto a = in[0].data(), b = in[1].data();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
      break;
    }
    case OpKind::ScalarMul:
      unary([s = attrs.scalar](double x) { return s * x; });
      break;
    case OpKind::ConcatLastDim: {
      std::size_t offset = 0;
      for (const auto& t : in) {
        const auto x = t.data();
        for (std::size_t r = 0; r < t.rows(); ++r) {
          std::copy_n(x.begin() + r * t.cols(), t.cols(), out.begin() + r * out_shape.cols + offset);
        }
        offset += t.cols();
      }
      break;
    }
    case OpKind::Relu:
      unary([](double x) { return x > 0.0 ? x : 0.0; });
      break;
    case OpKind::Sigmoid:
      unary([](double x) { return sigmoid(x); });
      break;
    case OpKind::Log:
      unary([](double x) { return std::log(x); });
      break;
    case OpKind::Exp:
      unary([](double x) { return std::exp(x); });
      break;
    case OpKind::Square:
      unary([](double x) { return x * x; });
      break;
    case OpKind::Abs:
      unary([](double x) { return std::abs(x); });
      break;
    case OpKind::StraightThrough:
      unary([](double p) { return p >= 0.5 ? 1.0 : 0.0; });
      break;
    case OpKind::SumAll:
    case OpKind::MeanAll: {
      double s = 0.0;
      for (double x : in[0].data()) s += x;
      out[0] = k == OpKind::SumAll ? s : s / static_cast<double>(in[0].numel());
      break;
    }
    case OpKind::RowSum: {
      const auto x = in[0].data();
      const std::size_t c = in[0].cols();
      for (std::size_t r = 0; r < in[0].rows(); ++r) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x[r * c + j];
        out[r] = s;
      }
      break;
    }
    case OpKind::LogSoftmaxRows: {
      const auto x = in[0].data();
      const std::size_t c = in[0].cols();
      for (std::size_t r = 0; r < in[0].rows(); ++r) {
        const double* row = x.data() + r * c;
        const double mx = *std::max_element(row, row + c);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
        const double lse = mx + std::log(s);
        for (std::size_t j = 0; j < c; ++j) out[r * c + j] = row[j] - lse;
      }
      break;
    }
    case OpKind::GatherRows: {
      const auto x = in[0].data();
      const std::size_t c = in[0].cols();
      for (std::size_t r = 0; r < attrs.index.size(); ++r) {
        std::copy_n(x.begin() + attrs.index[r] * c, c, out.begin() + r * c);
      }
      break;
    }
    case OpKind::ScatterAddRows: {
      const auto x = in[0].data();
      const std::size_t c = in[0].cols();
      for (std::size_t r = 0; r < attrs.index.size(); ++r) {
        double* dst = out.data() + attrs.index[r] * c;
        const double* src = x.data() + r * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
      }
      break;
    }
    case OpKind::AddBias: {
      const auto x = in[0].data(), b = in[1].data();
      const std::size_t c = in[0].cols();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + b[i % c];
      break;
    }
    case OpKind::Custom:
      break;
  }
  return out;
}

// Adds the contribution of one entry to its inputs' adjoints.
inline void backward(const TapeEntry& e, std::span<const double> g,
                     std::vector<std::vector<double>*>& dx) {
  const auto& in = e.inputs;
  const auto y = e.output.data();
  auto unary = [&](auto&& dfdx) {
    if (!dx[0]) return;
    const auto x = in[0].data();
    auto& d = *dx[0];
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * dfdx(x[i], y[i]);
  };
  switch (e.kind) {
    case OpKind::MatMul: {
      const auto G = view(g, e.output.shape());
      if (dx[0]) view_mut(*dx[0], in[0].shape()).noalias() += G * view(in[1]).transpose();
      if (dx[1]) view_mut(*dx[1], in[1].shape()).noalias() += view(in[0]).transpose() * G;
      break;
    }
    case OpKind::Add:
    case OpKind::Sub: {
      const double sign = e.kind == OpKind::Add ? 1.0 : -1.0;
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i];
      if (dx[1]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[1])[i] += sign * g[i];
      break;
    }
    case OpKind::Mul: {
      const auto a = in[0].data(), b = in[1].data();
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i] * b[i];
      if (dx[1]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[1])[i] += g[i] * a[i];
      break;
    }
    case OpKind::ScalarMul:
      unary([s = e.attrs.scalar](double, double) { return s; });
      break;
    case OpKind::ConcatLastDim: {
      const std::size_t oc = e.output.cols();
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const std::size_t c = in[k].cols();
        if (dx[k]) {
          auto& d = *dx[k];
          for (std::size_t r = 0; r < in[k].rows(); ++r) {
            for (std::size_t j = 0; j < c; ++j) d[r * c + j] += g[r * oc + offset + j];
          }
        }
        offset += c;
      }
      break;
    }
    case OpKind::Relu:
      unary([](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
      break;
    case OpKind::Sigmoid:
      unary([](double, double s) { return s * (1.0 - s); });
      break;
    case OpKind::Log:
      unary([](double x, double) { return 1.0 / x; });
      break;
    case OpKind::Exp:
      unary([](double, double ex) { return ex; });
      break;
    case OpKind::Square:
      unary([](double x, double) { return 2.0 * x; });
      break;
    case OpKind::Abs:
      unary([](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
      break;
    case OpKind::StraightThrough:
      unary([](double, double) { return 1.0; });
      break;
    case OpKind::SumAll:
    case OpKind::MeanAll: {
      if (!dx[0]) break;
      const double s = e.kind == OpKind::SumAll ? g[0] : g[0] / static_cast<double>(in[0].numel());
      for (double& d : *dx[0]) d += s;
      break;
    }
    case OpKind::RowSum: {
      if (!dx[0]) break;
      const std::size_t c = in[0].cols();
      auto& d = *dx[0];
      for (std::size_t r = 0; r < in[0].rows(); ++r) {
        for (std::size_t j = 0; j < c; ++j) d[r * c + j] += g[r];
      }
      break;
    }
    case OpKind::LogSoftmaxRows: {
      if (!dx[0]) break;
      const std::size_t c = in[0].cols();
      auto& d = *dx[0];
      for (std::size_t r = 0; r < in[0].rows(); ++r) {
        double gs = 0.0;
        for (std::size_t j = 0; j < c; ++j) gs += g[r * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          d[r * c + j] += g[r * c + j] - std::exp(y[r * c + j]) * gs;
        }
      }
      break;
    }
    case OpKind::GatherRows: {
      if (!dx[0]) break;
      const std::size_t c = in[0].cols();
      auto& d = *dx[0];
      for (std::size_t r = 0; r < e.attrs.index.size(); ++r) {
        double* dst = d.data() + e.attrs.index[r] * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += g[r * c + j];
      }
      break;
    }
    case OpKind::ScatterAddRows: {
      if (!dx[0]) break;
      const std::size_t c = in[0].cols();
      auto& d = *dx[0];
      for (std::size_t r = 0; r < e.attrs.index.size(); ++r) {
        const double* src = g.data() + e.attrs.index[r] * c;
        for (std::size_t j = 0; j < c; ++j) d[r * c + j] += src[j];
      }
      break;
    }
    case OpKind::AddBias: {
      const std::size_t c = in[0].cols();
      if (dx[0]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[0])[i] += g[i];
      if (dx[1]) for (std::size_t i = 0; i < g.size(); ++i) (*dx[1])[i % c] += g[i];
      break;
    }
    case OpKind::Custom:
      e.custom(g, e.inputs, e.output, dx);
      break;
  }
}

}  // namespace detail

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Tensor apply(OpKind kind, std::vector<Tensor> inputs, OpAttrs attrs = {}) {
    const Shape shape = detail::infer_shape(kind, inputs, attrs);
    Tensor out = Tensor::from(shape, detail::forward(kind, inputs, attrs, shape));
    record(TapeEntry{kind, std::move(inputs), out, std::move(attrs), {}, {}});
    return out;
  }

  // Records a user-defined operation. `output` holds the already computed
  // forward value.
  Tensor custom(std::string name, std::vector<Tensor> inputs, Tensor output, CustomBackward rule) {
    if (!rule) throw ContractError("custom op '" + name + "' needs a backward rule");
    record(TapeEntry{OpKind::Custom, std::move(inputs), output, {}, std::move(name), std::move(rule)});
    return output;
  }

  // Accumulates dLoss/dT into the grad buffer of every requires_grad tensor
  // reachable from `loss`. Gradients add up across calls; zero them between
  // optimizer steps.
  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
    }
    std::unordered_map<const TensorData*, std::vector<double>> adj;
    adj[loss.impl()] = {1.0};
    std::vector<std::vector<double>*> dx;
    std::vector<std::vector<double>> before;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      const auto found = adj.find(it->output.impl());
      if (found == adj.end()) continue;
      // Copy: emplacing input buffers below may rehash the map.
      const std::vector<double> g = found->second;
      dx.assign(it->inputs.size(), nullptr);
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        const Tensor& x = it->inputs[i];
        if (!x.requires_grad()) continue;
        auto [slot, inserted] = adj.try_emplace(x.impl());
        if (inserted) slot->second.assign(x.numel(), 0.0);
      }
      for (std::size_t i = 0; i < it->inputs.size(); ++i) {
        const Tensor& x = it->inputs[i];
        if (x.requires_grad()) dx[i] = &adj.find(x.impl())->second;
      }
      const bool faulty = fault_ && *fault_ == it->kind;
      if (faulty) {
        before.clear();
        for (auto* d : dx) before.push_back(d ? *d : std::vector<double>{});
      }
      detail::backward(*it, g, dx);
      if (faulty) {
        for (std::size_t i = 0; i < dx.size(); ++i) {
          if (!dx[i]) continue;
          auto& d = *dx[i];
          for (std::size_t j = 0; j < d.size(); ++j) d[j] = before[i][j] + 1.5 * (d[j] - before[i][j]);
        }
      }
    }
    for (auto& [ptr, buf] : adj) {
      auto* data = const_cast<TensorData*>(ptr);
      if (!data->requires_grad) continue;
      if (data->grad.empty()) data->grad.assign(buf.size(), 0.0);
      for (std::size_t j = 0; j < buf.size(); ++j) data->grad[j] += buf[j];
    }
  }

  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] const TapeEntry& entry(std::size_t i) const { return entries_.at(i); }

  // Verification hook: every backward rule of `kind` on this tape returns 1.5x
  // the correct gradient. Used by grad-check negative controls.
  void inject_fault(OpKind kind) { fault_ = kind; }

 private:
  void record(TapeEntry e) {
    const bool needs = std::any_of(e.inputs.begin(), e.inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (!needs) return;
    e.output.set_requires_grad(true);
    e.output.impl()->tape_id = static_cast<std::int64_t>(entries_.size());
    entries_.push_back(std::move(e));
  }

  std::vector<TapeEntry> entries_;
  std::optional<OpKind> fault_;
};

// Typed wrappers around Tape::apply.

inline Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(OpKind::MatMul, {a, b}); }
inline Tensor add(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(OpKind::Add, {a, b}); }
inline Tensor sub(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(OpKind::Sub, {a, b}); }
inline Tensor mul(Tape& t, const Tensor& a, const Tensor& b) { return t.apply(OpKind::Mul, {a, b}); }
inline Tensor scale(Tape& t, const Tensor& a, double s) {
  OpAttrs attrs;
  attrs.scalar = s;
  return t.apply(OpKind::ScalarMul, {a}, std::move(attrs));
}
inline Tensor concat(Tape& t, std::vector<Tensor> parts) { return t.apply(OpKind::ConcatLastDim, std::move(parts)); }
inline Tensor relu(Tape& t, const Tensor& a) { return t.apply(OpKind::Relu, {a}); }
inline Tensor sigmoid(Tape& t, const Tensor& a) { return t.apply(OpKind::Sigmoid, {a}); }
inline Tensor log(Tape& t, const Tensor& a) { return t.apply(OpKind::Log, {a}); }
inline Tensor exp(Tape& t, const Tensor& a) { return t.apply(OpKind::Exp, {a}); }
inline Tensor square(Tape& t, const Tensor& a) { return t.apply(OpKind::Square, {a}); }
inline Tensor abs(Tape& t, const Tensor& a) { return t.apply(OpKind::Abs, {a}); }
inline Tensor sum(Tape& t, const Tensor& a) { return t.apply(OpKind::SumAll, {a}); }
inline Tensor mean(Tape& t, const Tensor& a) { return t.apply(OpKind::MeanAll, {a}); }
inline Tensor row_sum(Tape& t, const Tensor& a) { return t.apply(OpKind::RowSum, {a}); }
inline Tensor log_softmax_rows(Tape& t, const Tensor& a) { return t.apply(OpKind::LogSoftmaxRows, {a}); }
inline Tensor add_bias(Tape& t, const Tensor& x, const Tensor& b) { return t.apply(OpKind::AddBias, {x, b}); }
// Forward: 1 where p >= 0.5 else 0. Backward: identity.
inline Tensor straight_through(Tape& t, const Tensor& p) { return t.apply(OpKind::StraightThrough, {p}); }

inline Tensor gather_rows(Tape& t, const Tensor& x, std::vector<std::size_t> index) {
  OpAttrs attrs;
  attrs.index = std::move(index);
  return t.apply(OpKind::GatherRows, {x}, std::move(attrs));
}

inline Tensor scatter_add_rows(Tape& t, const Tensor& x, std::vector<std::size_t> index,
                               std::size_t out_rows) {
  OpAttrs attrs;
  attrs.index = std::move(index);
  attrs.out_rows = out_rows;
  return t.apply(OpKind::ScatterAddRows, {x}, std::move(attrs));
}

// Broadcasts a column (n x 1) across `cols` columns via an outer product with ones.
inline Tensor broadcast_cols(Tape& t, const Tensor& column, std::size_t cols) {
  return matmul(t, column, Tensor::filled({1, cols}, 1.0));
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking.

struct GradCheckElement {
  std::size_t param = 0;
  std::size_t element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double error = 0.0;  // relative, or absolute when both magnitudes < 1e-8
};

struct GradCheckReport {
  std::vector<GradCheckElement> elements;
  double max_error = 0.0;
  std::size_t worst = 0;  // index into elements
  double tolerance = 0.0;
  bool passed = true;

  [[nodiscard]] std::string describe_worst() const {
    if (elements.empty()) return "no elements";
    const auto& e = elements[worst];
    std::ostringstream os;
    os.precision(6);
    os << "param " << e.param << " element " << e.element << ": analytic " << e.analytic
       << " numeric " << e.numeric << " error " << e.error;
    return os.str();
  }
};

using LossBuilder = std::function<Tensor(Tape&, std::span<const Tensor>)>;

inline double grad_error(double analytic, double numeric) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  const double diff = std::abs(analytic - numeric);
  return scale < 1e-8 ? diff : diff / scale;
}

// Compares backward() against central differences for every element of every
// parameter. The builder must be a deterministic function of parameter values.
inline GradCheckReport grad_check(const LossBuilder& builder, std::span<Tensor> params, double step,
                                  double tol, const std::function<void(Tape&)>& prepare_tape = {}) {
  if (step <= 0.0) throw ContractError("grad_check: step must be positive");
  std::vector<std::vector<double>> saved_grads;
  for (auto& p : params) {
    saved_grads.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }
  auto evaluate = [&](bool with_backward, bool with_hook) {
    Tape tape;
    if (with_hook && prepare_tape) prepare_tape(tape);
    Tensor loss = builder(tape, params);
    if (loss.numel() != 1) throw ContractError("grad_check: builder must return a scalar");
    if (with_backward) tape.backward(loss);
    return loss.item();
  };
  const double base = evaluate(true, true);
  if (evaluate(false, false) != base) {
    throw ContractError("grad_check: builder is not deterministic (two forward passes differ)");
  }
  GradCheckReport report;
  report.tolerance = tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto values = params[pi].mutable_data();
    const auto analytic = params[pi].grad();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double orig = values[j];
      values[j] = orig + step;
      const double up = evaluate(false, false);
      values[j] = orig - step;
      const double down = evaluate(false, false);
      values[j] = orig;
      GradCheckElement el{pi, j, analytic[j], (up - down) / (2.0 * step), 0.0};
      el.error = grad_error(el.analytic, el.numeric);
      if (report.elements.empty() || el.error > report.max_error) {
        report.max_error = el.error;
        report.worst = report.elements.size();
      }
      report.elements.push_back(el);
    }
  }
  report.passed = report.max_error <= tol;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto g = params[pi].grad();
    std::copy(saved_grads[pi].begin(), saved_grads[pi].end(), g.begin());
  }
  return report;
}

}  // namespace pruneood::ad
