#pragma once

// Channel-wise fusion of branch set features into the global feature.

#include <string>
#include <vector>

#include "dnet/nn.hpp"

namespace dnet {

enum class FusionMode { learned, max, mean, concat };

struct FusionConfig {
  FusionMode mode = FusionMode::learned;
  std::size_t hidden = 256;  ///< bottleneck of each descriptor MLP
};

/// One descriptor MLP (W -> hidden -> W, ReLU in between) per branch.
template <class T>
struct FusionParams {
  std::vector<Mlp<T>> descriptors;

  FusionParams() = default;
  FusionParams(std::size_t branches, std::size_t width, std::size_t hidden, Rng& rng) {
    for (std::size_t b = 0; b < branches; ++b) descriptors.emplace_back(std::vector<std::size_t>{width, hidden, width}, rng, false);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t b = 0; b < descriptors.size(); ++b) descriptors[b].collect(out, prefix + ".omega" + std::to_string(b));
  }
};

namespace detail {

template <class T>
std::size_t common_width(const std::vector<Tensor<T>>& features, const char* op) {
  if (features.empty()) throw DimensionError(std::string(op) + ": no branch features");
  const std::size_t w = features.front().numel();
  for (const auto& f : features)
    if (f.numel() != w)
      throw DimensionError(std::string(op) + ": branch widths differ (" + std::to_string(w) + " vs " +
                           std::to_string(f.numel()) + ")");
  return w;
}

template <class T>
Tensor<T> stack_rows(const std::vector<Tensor<T>>& features) {
  std::vector<Tensor<T>> rows;
  for (const auto& f : features) rows.push_back(reshape(f, {1, f.numel()}));
  return rows.size() == 1 ? rows.front() : concat(rows, 0);
}

}  // namespace detail

/// psi (B x W): per channel, a softmax over branches of the mapped
/// descriptors omega_b = MLP_b(f_b).
template <class T>
Tensor<T> fusion_weights(const std::vector<Tensor<T>>& features, const FusionParams<T>& params) {
  const std::size_t w = detail::common_width(features, "fusion_weights");
  if (params.descriptors.size() != features.size())
    throw DimensionError("fusion_weights: " + std::to_string(features.size()) + " branches but " +
                         std::to_string(params.descriptors.size()) + " descriptor networks");
  std::vector<Tensor<T>> omegas;
  for (std::size_t b = 0; b < features.size(); ++b) {
    auto omega = params.descriptors[b](reshape(features[b], {1, w}));
    if (omega.numel() != w) throw DimensionError("fusion_weights: descriptor width mismatch");
    omegas.push_back(omega);
  }
  return softmax(detail::stack_rows(omegas), 0);
}

/// f_g[c] = sum_b psi[b][c] * f_b[c].
template <class T>
Tensor<T> fuse(const Tensor<T>& psi, const std::vector<Tensor<T>>& features) {
  const std::size_t w = detail::common_width(features, "fuse");
  if (psi.rank() != 2 || psi.dim(0) != features.size() || psi.dim(1) != w)
    throw DimensionError("fuse: weights " + to_string(psi.shape()) + " do not match " +
                         std::to_string(features.size()) + " features of width " + std::to_string(w));
  return sum_axis(mul(psi, detail::stack_rows(features)), 0);
}

/// Parameter-free alternatives used in ablations.
template <class T>
Tensor<T> fuse_fixed(const std::vector<Tensor<T>>& features, FusionMode mode) {
  const std::size_t w = detail::common_width(features, "fuse");
  const auto stacked = detail::stack_rows(features);
  switch (mode) {
    case FusionMode::max: return max_reduce(stacked, 0).first;
    case FusionMode::mean: return scale(sum_axis(stacked, 0), T(1) / static_cast<T>(features.size()));
    case FusionMode::concat: return reshape(stacked, {features.size() * w});
    case FusionMode::learned: break;
  }
  throw ParameterError("fuse_fixed: learned fusion needs descriptor networks");
}

}  // namespace dnet
