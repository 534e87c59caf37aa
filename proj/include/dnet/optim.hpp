#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dnet/tensor.hpp"

namespace dnet {

/// Moment estimates of ADAM, one pair of arrays per parameter.
template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected ADAM update in place.  Every parameter must carry a
/// gradient; gradients are cleared afterwards.
template <class T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamOptions& opt = {}) {
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw StateError("adam_step: optimizer tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel())
      throw StateError("adam_step: moment shape mismatch for parameter " + std::to_string(i));
    if (!params[i].has_grad())
      throw StateError("adam_step: parameter " + std::to_string(i) + " has no gradient");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      const double mj = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
      const double vj = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = opt.lr * (mj / c1) / (std::sqrt(vj / c2) + opt.eps);
      w[j] = static_cast<T>(w[j] - update);
    }
    params[i].clear_grad();
  }
}

}  // namespace dnet
