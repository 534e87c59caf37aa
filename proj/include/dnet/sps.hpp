#pragma once

// Self-attentive point searching: a per-point distinction score from
// bilinear attention between two learned projections, and the split of a
// cloud into its most and least distinctive points.

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dnet/geometry.hpp"
#include "dnet/nn.hpp"

namespace dnet {

/// Axis over which exp(s_ij) is normalized.
///   column: softmax over i for each fixed j; alpha_i is the attention mass
///           point i receives from all points.
///   row:    softmax over j for each fixed i; alpha_j collects column sums.
/// Both give sum(alpha) = N.
enum class NormalizeAxis { column, row };

struct SpsConfig {
  std::size_t dim = 64;
  NormalizeAxis normalize_axis = NormalizeAxis::column;
};

/// The two projections g = x W_g and h = x W_h.
template <class T>
struct SpsParams {
  Tensor<T> w_g;
  Tensor<T> w_h;

  SpsParams() = default;
  SpsParams(std::size_t in_width, std::size_t dim, Rng& rng)
      : w_g(xavier_uniform<T>(in_width, dim, rng)), w_h(xavier_uniform<T>(in_width, dim, rng)) {}

  std::size_t in_width() const { return w_g.dim(0); }
  std::size_t dim() const { return w_g.dim(1); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".w_g", w_g});
    out.push_back({prefix + ".w_h", w_h});
  }
};

/// alpha (N) from points (N x D_in): s_ij = g(p_i).h(p_j), beta normalized by
/// softmax, alpha_i = sum_j beta_{j,i}.
template <class T>
Tensor<T> attentive_scores(const Tensor<T>& points, const SpsParams<T>& params,
                           NormalizeAxis axis = NormalizeAxis::column) {
  if (points.rank() != 2 || points.dim(0) < 2)
    throw ParameterError("attentive_scores: need at least 2 points, got shape " + to_string(points.shape()));
  if (points.dim(1) != params.in_width())
    throw DimensionError("attentive_scores: point width " + std::to_string(points.dim(1)) +
                         " does not match projection input " + std::to_string(params.in_width()));
  const auto g = matmul(points, params.w_g);
  const auto h = matmul(points, params.w_h);
  const auto s = matmul(g, transpose(h));  // s[i][j]
  if (axis == NormalizeAxis::column) return sum_axis(softmax(s, 0), 1);
  return sum_axis(softmax(s, 1), 0);
}

struct DistinctionResult {
  std::vector<float> alpha;
  IndexList idx_high;
  IndexList idx_low;
};

/// Indices of the n1 largest scores (descending) and the n1 smallest
/// (ascending); equal scores are ordered by lower index.
template <class T>
std::pair<IndexList, IndexList> select_distinctive(std::span<const T> alpha, std::size_t n1) {
  const std::size_t n = alpha.size();
  if (n1 > n) throw ParameterError("select_distinctive: N1=" + std::to_string(n1) + " exceeds N=" + std::to_string(n));
  IndexList order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  IndexList high = order, low = order;
  const auto mid_h = high.begin() + static_cast<std::ptrdiff_t>(n1);
  std::partial_sort(high.begin(), mid_h, high.end(), [&](std::size_t a, std::size_t b) {
    return alpha[a] > alpha[b] || (alpha[a] == alpha[b] && a < b);
  });
  const auto mid_l = low.begin() + static_cast<std::ptrdiff_t>(n1);
  std::partial_sort(low.begin(), mid_l, low.end(), [&](std::size_t a, std::size_t b) {
    return alpha[a] < alpha[b] || (alpha[a] == alpha[b] && a < b);
  });
  high.resize(n1);
  low.resize(n1);
  detail::record_decisions(high);
  detail::record_decisions(low);
  return {std::move(high), std::move(low)};
}

/// The high and low distinctive point sets as clouds (coordinates, normals
/// and part labels gathered row by row).
inline std::pair<PointCloud, PointCloud> split_sets(const PointCloud& cloud, const DistinctionResult& result) {
  return {cloud.subset(result.idx_high), cloud.subset(result.idx_low)};
}

}  // namespace dnet
