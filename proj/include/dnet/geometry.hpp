#pragma once

// Point clouds, neighborhoods and point sampling.

#include <algorithm>
#include <bit>
#include <cstring>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dnet/errors.hpp"
#include "dnet/random.hpp"
#include "dnet/tensor.hpp"

namespace dnet {

using Vec3 = std::array<float, 3>;

/// N points with optional unit normals, a class label and optional
/// per-point part labels.  Coordinates are stored row-major (N x 3).
struct PointCloud {
  std::vector<float> points;
  std::vector<float> normals;
  int label = -1;
  std::vector<int> part_labels;

  std::size_t size() const { return points.size() / 3; }
  bool has_normals() const { return !normals.empty(); }
  Vec3 point(std::size_t i) const { return {points[3 * i], points[3 * i + 1], points[3 * i + 2]}; }
  Vec3 normal(std::size_t i) const { return {normals[3 * i], normals[3 * i + 1], normals[3 * i + 2]}; }

  /// Per-point input features: x y z, followed by nx ny nz when requested.
  std::vector<float> features(bool with_normals) const {
    if (!with_normals) return points;
    if (!has_normals()) throw ParameterError("cloud has no normals but normal features were requested");
    std::vector<float> out(size() * 6);
    for (std::size_t i = 0; i < size(); ++i) {
      std::copy_n(points.begin() + 3 * i, 3, out.begin() + 6 * i);
      std::copy_n(normals.begin() + 3 * i, 3, out.begin() + 6 * i + 3);
    }
    return out;
  }

  /// Sub-cloud made of the given rows, in order.
  PointCloud subset(const IndexList& idx) const {
    PointCloud out;
    out.label = label;
    for (auto i : idx) {
      if (i >= size()) throw IndexError("subset: index " + std::to_string(i) + " out of range");
      out.points.insert(out.points.end(), points.begin() + 3 * i, points.begin() + 3 * i + 3);
      if (has_normals()) out.normals.insert(out.normals.end(), normals.begin() + 3 * i, normals.begin() + 3 * i + 3);
      if (!part_labels.empty()) out.part_labels.push_back(part_labels[i]);
    }
    return out;
  }
};

enum class MetricSpace { coordinates, features };

/// k nearest neighbors of every row, nearest first.
struct NeighborGraph {
  std::size_t k = 0;
  IndexList indices;  // N x k
  MetricSpace metric_space = MetricSpace::coordinates;

  std::size_t size() const { return k ? indices.size() / k : 0; }
  std::span<const std::size_t> row(std::size_t i) const { return {indices.data() + i * k, k}; }
};

/// Recenters the cloud on its centroid and scales the farthest point to unit
/// distance.  Normals are left unchanged.
inline PointCloud normalize_unit_sphere(const PointCloud& cloud) {
  const std::size_t n = cloud.size();
  if (n == 0) throw GeometryError("normalize_unit_sphere: empty cloud");
  std::array<double, 3> c{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d) c[d] += cloud.points[3 * i + d];
  for (auto& v : c) v /= static_cast<double>(n);
  double radius = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double r2 = 0;
    for (int d = 0; d < 3; ++d) {
      const double x = cloud.points[3 * i + d] - c[d];
      r2 += x * x;
    }
    radius = std::max(radius, r2);
  }
  radius = std::sqrt(radius);
  if (!(radius > 1e-12)) throw GeometryError("normalize_unit_sphere: all points coincide");
  PointCloud out = cloud;
  for (std::size_t i = 0; i < n; ++i)
    for (int d = 0; d < 3; ++d)
      out.points[3 * i + d] = static_cast<float>((cloud.points[3 * i + d] - c[d]) / radius);
  return out;
}

/// Brute-force k-nearest neighbors over the rows of an N x D array under
/// Euclidean distance.  Rows are ordered by ascending distance, ties by lower
/// index.  With exclude_self a point is never its own neighbor.
template <class T>
NeighborGraph knn(std::span<const T> features, std::size_t n, std::size_t dims, std::size_t k,
                  bool exclude_self = true, MetricSpace space = MetricSpace::coordinates) {
  if (features.size() != n * dims)
    throw DimensionError("knn: feature array of length " + std::to_string(features.size()) + " is not " +
                         std::to_string(n) + "x" + std::to_string(dims));
  const std::size_t available = exclude_self ? n - 1 : n;
  if (n == 0 || k == 0 || k > available)
    throw ParameterError("knn: k=" + std::to_string(k) + " requires k < N (N=" + std::to_string(n) + ")");

  // Column-major copy (rows padded to a multiple of JB) so that distances
  // vectorize over j while each pair is still accumulated over dimensions
  // in a fixed order.
  // Candidates are packed in panels of JB columns, [panel][d][JB], so the
  // walk over dimensions is sequential.  Each pair is still accumulated over
  // dimensions in a fixed order.
  using V [[gnu::vector_size(64)]] = T;
  constexpr std::size_t IB = 4, JV = 2, JB = JV * 64 / sizeof(T);
  const std::size_t stride = (n + JB - 1) / JB * JB;
  const std::size_t rows = (n + IB - 1) / IB * IB;
  std::vector<T> panels(dims * stride, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dims; ++d) panels[(i / JB) * dims * JB + d * JB + i % JB] = features[i * dims + d];
  std::vector<T> centers(rows * dims, T(0));
  std::copy(features.begin(), features.end(), centers.begin());

  NeighborGraph graph;
  graph.k = k;
  graph.metric_space = space;
  graph.indices.resize(n * k);
  std::vector<T> block(IB * stride);
  std::vector<std::size_t> order(n);
  std::vector<std::uint64_t> keys(k);
  for (std::size_t i0 = 0; i0 < n; i0 += IB) {
    const std::size_t ib = std::min(IB, n - i0);
    const T* c0 = centers.data() + i0 * dims;
    for (std::size_t j0 = 0; j0 < stride; j0 += JB) {
      const T* panel = panels.data() + j0 * dims;
      V a00{}, a01{}, a10{}, a11{}, a20{}, a21{}, a30{}, a31{};
      for (std::size_t d = 0; d < dims; ++d) {
        V x0, x1;
        std::memcpy(&x0, panel + d * JB, sizeof(V));
        std::memcpy(&x1, panel + d * JB + JB / 2, sizeof(V));
        V t;
        t = x0 - c0[d], a00 += t * t;
        t = x1 - c0[d], a01 += t * t;
        t = x0 - c0[dims + d], a10 += t * t;
        t = x1 - c0[dims + d], a11 += t * t;
        t = x0 - c0[2 * dims + d], a20 += t * t;
        t = x1 - c0[2 * dims + d], a21 += t * t;
        t = x0 - c0[3 * dims + d], a30 += t * t;
        t = x1 - c0[3 * dims + d], a31 += t * t;
      }
      const V acc[IB][JV] = {{a00, a01}, {a10, a11}, {a20, a21}, {a30, a31}};
      for (std::size_t r = 0; r < IB; ++r) std::memcpy(block.data() + r * stride + j0, acc[r], sizeof(acc[r]));
    }
    for (std::size_t i = i0; i < i0 + ib; ++i) {
      const T* dist = block.data() + (i - i0) * stride;
      if constexpr (sizeof(T) == 4) {
        // Non-negative floats order like their bit patterns, so (distance,
        // index) packs into one integer key with the tie rule built in.
        // Sorted insertion into the k best keys seen so far.
        std::size_t filled = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (exclude_self && j == i) continue;
          const std::uint64_t key = std::uint64_t{std::bit_cast<std::uint32_t>(dist[j])} << 32 | j;
          if (filled == k && key >= keys[k - 1]) continue;
          std::size_t pos = filled < k ? filled++ : k - 1;
          while (pos > 0 && keys[pos - 1] > key) {
            keys[pos] = keys[pos - 1];
            --pos;
          }
          keys[pos] = key;
        }
        for (std::size_t e = 0; e < k; ++e) graph.indices[i * k + e] = keys[e] & 0xffffffffu;
      } else {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (exclude_self) std::swap(order[i], order[n - 1]);
        const auto less = [&](std::size_t a, std::size_t b) {
          return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
        };
        auto last = order.begin() + static_cast<std::ptrdiff_t>(available);
        std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), last, less);
        std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), less);
        std::copy_n(order.begin(), k, graph.indices.begin() + i * k);
      }
    }
  }
  detail::record_decisions(graph.indices);
  return graph;
}

/// Greedy farthest point sampling from `start`; each step takes the point
/// whose distance to the selected set is largest, ties to the lower index.
template <class T>
IndexList fps(std::span<const T> points, std::size_t m, std::size_t start = 0) {
  const std::size_t n = points.size() / 3;
  if (m == 0 || m > n)
    throw ParameterError("fps: cannot select " + std::to_string(m) + " of " + std::to_string(n) + " points");
  if (start >= n) throw IndexError("fps: start index " + std::to_string(start) + " out of range");
  IndexList chosen{start};
  chosen.reserve(m);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t last = start;
  while (chosen.size() < m) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d2 = 0;
      for (int d = 0; d < 3; ++d) {
        const double x = static_cast<double>(points[3 * i + d]) - points[3 * last + d];
        d2 += x * x;
      }
      nearest[i] = std::min(nearest[i], d2);
      if (nearest[i] > best_d) {
        best_d = nearest[i];
        best = i;
      }
    }
    chosen.push_back(best);
    last = best;
  }
  detail::record_decisions(chosen);
  return chosen;
}

/// m distinct indices drawn uniformly from [0, n), reproducible per seed.
inline IndexList random_sample(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m > n) throw ParameterError("random_sample: cannot draw " + std::to_string(m) + " of " + std::to_string(n));
  IndexList idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  return idx;
}

}  // namespace dnet
