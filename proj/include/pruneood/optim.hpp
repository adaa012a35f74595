#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "pruneood/autodiff.hpp"
#include "pruneood/errors.hpp"

namespace pruneood {

struct AdamSlot {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t step = 0;
};

// Moment buffers for a fixed, ordered list of parameters. Each slot keeps its
// own step count so parameters that sit out some updates (the selector during
// warm-up) get correct bias correction once they start.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<AdamSlot> slots;

  static AdamState for_params(std::span<const ad::Tensor> params) {
    AdamState s;
    for (const auto& p : params) s.slots.push_back({std::vector<double>(p.numel(), 0.0), std::vector<double>(p.numel(), 0.0), 0});
    return s;
  }
};

// Bias-corrected Adam update of params[i] with grads[i]. When `active` is
// non-empty, parameters with active[i] == false are left untouched.
inline void adam_step(std::span<ad::Tensor> params, std::span<const std::span<const double>> grads,
                      AdamState& state, double lr, const std::vector<bool>& active = {}) {
  if (params.size() != grads.size() || params.size() != state.slots.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " params, " +
                        std::to_string(grads.size()) + " grads, " + std::to_string(state.slots.size()) +
                        " state slots");
  }
  if (!active.empty() && active.size() != params.size()) {
    throw ContractError("adam_step: active mask length differs from parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active.empty() && !active[i]) continue;
    auto x = params[i].mutable_data();
    const auto g = grads[i];
    AdamSlot& s = state.slots[i];
    if (g.size() != x.size() || s.m.size() != x.size()) {
      throw ContractError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    ++s.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(s.step));
    for (std::size_t j = 0; j < x.size(); ++j) {
      s.m[j] = state.beta1 * s.m[j] + (1.0 - state.beta1) * g[j];
      s.v[j] = state.beta2 * s.v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = s.m[j] / c1;
      const double vhat = s.v[j] / c2;
      x[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// Convenience: uses each parameter's accumulated grad buffer.
inline void adam_step(std::span<ad::Tensor> params, AdamState& state, double lr,
                      const std::vector<bool>& active = {}) {
  std::vector<std::span<const double>> grads;
  grads.reserve(params.size());
  for (auto& p : params) grads.emplace_back(p.grad());
  adam_step(params, grads, state, lr, active);
}

}  // namespace pruneood
