#pragma once

// Stacked self-gated convolution: input alignment, edge convolution over
// k-NN graphs, per-depth self-gates and the max-pooled set feature.

#include <string>
#include <vector>

#include "dnet/geometry.hpp"
#include "dnet/nn.hpp"

namespace dnet {

enum class GateMode { scalar, channel };

struct SgcConfig {
  std::vector<std::size_t> widths{64, 64, 64, 128};
  std::size_t k = 20;
  bool dynamic_graph = true;
  bool gating = true;
  GateMode gate = GateMode::scalar;
  std::size_t lift_width = 1024;  ///< width of the set feature
};

struct TransformConfig {
  std::size_t edge_width = 64;
  std::size_t point_width = 128;
  std::size_t hidden_width = 64;
};

/// Edge features h_ij = f_i (+) (f_j - f_i) for the k neighbors j of every
/// point i; shape N x k x 2C.
template <class T>
Tensor<T> edge_features(const Tensor<T>& f, const NeighborGraph& graph) {
  if (f.rank() != 2) throw DimensionError("edge_features: features must be N x C, got " + to_string(f.shape()));
  const std::size_t n = f.dim(0), c = f.dim(1), k = graph.k;
  if (graph.size() != n)
    throw DimensionError("edge_features: graph has " + std::to_string(graph.size()) + " rows for " +
                         std::to_string(n) + " points");
  for (auto j : graph.indices)
    if (j >= n) throw IndexError("edge_features: neighbor index " + std::to_string(j) + " out of range");
  const auto& v = f.values();
  std::vector<T> out(n * k * 2 * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < k; ++e) {
      const std::size_t j = graph.indices[i * k + e];
      T* dst = out.data() + (i * k + e) * 2 * c;
      for (std::size_t d = 0; d < c; ++d) {
        dst[d] = v[i * c + d];
        dst[c + d] = v[j * c + d] - v[i * c + d];
      }
    }
  return Tensor<T>::from_op({n, k, 2 * c}, std::move(out), {f}, [f, graph, n, c, k](const std::vector<T>& g) {
    auto* gf = f.grad_sink();
    if (!gf) return;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < k; ++e) {
        const std::size_t j = graph.indices[i * k + e];
        const T* src = g.data() + (i * k + e) * 2 * c;
        for (std::size_t d = 0; d < c; ++d) {
          (*gf)[i * c + d] += src[d] - src[c + d];
          (*gf)[j * c + d] += src[c + d];
        }
      }
  });
}

/// One edge convolution: relu(max over neighbors of W h_ij + b) with a
/// shared linear map W of shape 2C x C_out.
///
/// Since W h_ij = f_i (W_a - W_b) + f_j W_b, the map is evaluated once per
/// point and the neighbor maximum is taken over the f_j W_b terms.
template <class T>
struct EdgeConv {
  Linear<T> mlp;

  EdgeConv() = default;
  EdgeConv(std::size_t in, std::size_t out, Rng& rng) : mlp(2 * in, out, rng) {}

  std::size_t in_width() const { return mlp.in_features() / 2; }
  std::size_t out_width() const { return mlp.out_features(); }

  Tensor<T> operator()(const Tensor<T>& f, const NeighborGraph& graph) const {
    const std::size_t c = in_width();
    if (f.rank() != 2 || f.dim(1) != c)
      throw DimensionError("edge conv expects N x " + std::to_string(c) + " features, got " + to_string(f.shape()));
    if (graph.size() != f.dim(0))
      throw DimensionError("edge conv: graph has " + std::to_string(graph.size()) + " rows for " +
                           std::to_string(f.dim(0)) + " points");
    const auto w_center = slice(mlp.weight, 0, 0, c);
    const auto w_diff = slice(mlp.weight, 0, c, 2 * c);
    const auto self_term = linear(f, sub(w_center, w_diff), mlp.bias);
    const auto nb = matmul(f, w_diff);
    return relu(add(self_term, gather_max(nb, graph.indices, graph.k)));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const { mlp.collect(out, prefix); }
};

/// theta = sigmoid(MLP(f)), f_hat = theta * f.  The gate MLP is
/// zero-initialized so every gate starts at 0.5.
template <class T>
struct SelfGate {
  Linear<T> mlp;
  GateMode mode = GateMode::scalar;

  SelfGate() = default;
  SelfGate(std::size_t width, GateMode gate_mode, Rng& rng)
      : mlp(width, gate_mode == GateMode::scalar ? 1 : width, rng, Init::zero), mode(gate_mode) {}

  /// Gate values theta: N x 1 (scalar mode) or N x C (channel mode).
  Tensor<T> gate(const Tensor<T>& f) const { return sigmoid(mlp(f)); }

  Tensor<T> operator()(const Tensor<T>& f) const { return mul(f, gate(f)); }

  void collect(ParameterList<T>& out, const std::string& prefix) const { mlp.collect(out, prefix); }
};

template <class T>
Tensor<T> identity3() {
  return Tensor<T>({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
}

/// Learned 3x3 alignment M = I + Delta, estimated from edge features of the
/// coordinates (edge conv, per-point layer, max over points, MLP to 9
/// values).  The last layer is zero-initialized, so M starts at identity.
template <class T>
struct InputTransform {
  EdgeConv<T> edge;
  Linear<T> point;
  Linear<T> hidden;
  Linear<T> out;

  InputTransform() = default;
  InputTransform(const TransformConfig& cfg, Rng& rng)
      : edge(3, cfg.edge_width, rng),
        point(cfg.edge_width, cfg.point_width, rng),
        hidden(cfg.point_width, cfg.hidden_width, rng),
        out(cfg.hidden_width, 9, rng, Init::zero) {}

  /// The alignment matrix for coordinates xyz (N x 3) under graph.
  Tensor<T> matrix(const Tensor<T>& xyz, const NeighborGraph& graph) const {
    const auto e = edge(xyz, graph);
    const auto p = relu(point(e));
    const auto pooled = reshape(max_reduce(p, 0).first, {1, p.dim(1)});
    const auto delta = out(relu(hidden(pooled)));
    return add(identity3<T>(), reshape(delta, {3, 3}));
  }

  /// Returns (M, features with their xyz block, and normal block when
  /// present, multiplied by M).
  std::pair<Tensor<T>, Tensor<T>> operator()(const Tensor<T>& features, const NeighborGraph& graph) const {
    const auto xyz = features.dim(1) == 3 ? features : slice(features, 1, 0, 3);
    const auto m = matrix(xyz, graph);
    auto aligned = matmul(xyz, m);
    if (features.dim(1) > 3) aligned = concat<T>({aligned, matmul(slice(features, 1, 3, 6), m)}, 1);
    return {m, aligned};
  }

  void collect(ParameterList<T>& out_list, const std::string& prefix) const {
    edge.collect(out_list, prefix + ".edge");
    point.collect(out_list, prefix + ".point");
    hidden.collect(out_list, prefix + ".hidden");
    out.collect(out_list, prefix + ".out");
  }
};

/// Set feature of a point set plus the per-point features it was pooled from.
template <class T>
struct SetFeatureResult {
  Tensor<T> set_feature;     ///< W
  Tensor<T> point_features;  ///< N x W, before the max over points
};

/// Concatenates gated depth features, lifts them with a shared layer
/// (linear + ReLU) and max-pools over points.
template <class T>
SetFeatureResult<T> set_feature(const std::vector<Tensor<T>>& gated, const Linear<T>& lift) {
  if (gated.empty()) throw DimensionError("set_feature: no depth features");
  const std::size_t n = gated.front().dim(0);
  for (const auto& g : gated)
    if (g.rank() != 2 || g.dim(0) != n)
      throw DimensionError("set_feature: inconsistent point counts across depths");
  const auto cat = gated.size() == 1 ? gated.front() : concat(gated, 1);
  if (cat.dim(1) != lift.in_features())
    throw DimensionError("set_feature: concatenated width " + std::to_string(cat.dim(1)) + " but lift expects " +
                         std::to_string(lift.in_features()));
  auto per_point = relu(lift(cat));
  auto pooled = max_reduce(per_point, 0).first;
  return {pooled, per_point};
}

/// Neighbor count actually used for a set of n points.
inline std::size_t effective_k(std::size_t k, std::size_t n) {
  if (n < 2) throw ParameterError("a point set needs at least 2 points for neighborhoods, got " + std::to_string(n));
  return std::min(k, n - 1);
}

/// Output of one branch: the set feature, per-point features and the gates.
template <class T>
struct BranchOutput {
  Tensor<T> set_feature;
  Tensor<T> point_features;
  std::vector<Tensor<T>> depth_features;  ///< f^t after each convolution
  std::vector<Tensor<T>> gates;           ///< theta^t (empty without gating)
};

/// Stacked self-gated convolution over one point set.
template <class T>
struct SgcBranch {
  SgcConfig config;
  std::vector<EdgeConv<T>> layers;
  std::vector<SelfGate<T>> gates;
  Linear<T> lift;

  SgcBranch() = default;
  SgcBranch(std::size_t in_width, const SgcConfig& cfg, Rng& rng) : config(cfg) {
    if (cfg.widths.empty()) throw ParameterError("sgc: at least one layer width is required");
    std::size_t c = in_width, total = 0;
    for (auto w : cfg.widths) {
      layers.emplace_back(c, w, rng);
      if (cfg.gating) gates.emplace_back(w, cfg.gate, rng);
      c = w;
      total += w;
    }
    lift = Linear<T>(total, cfg.lift_width, rng);
  }

  /// Graph for layer t (0-based): coordinates at t = 0, or whenever the
  /// graph is static; the current features otherwise.
  NeighborGraph layer_graph(std::size_t t, const Tensor<T>& f, const NeighborGraph& coord_graph) const {
    if (t == 0 || !config.dynamic_graph) return coord_graph;
    return knn<T>(f.data(), f.dim(0), f.dim(1), coord_graph.k, true, MetricSpace::features);
  }

  BranchOutput<T> operator()(const Tensor<T>& features, const NeighborGraph& coord_graph) const {
    BranchOutput<T> out;
    std::vector<Tensor<T>> gated;
    Tensor<T> f = features;
    for (std::size_t t = 0; t < layers.size(); ++t) {
      f = layers[t](f, layer_graph(t, f, coord_graph));
      out.depth_features.push_back(f);
      if (config.gating) {
        auto theta = gates[t].gate(f);
        out.gates.push_back(theta);
        gated.push_back(mul(f, theta));
      } else {
        gated.push_back(f);
      }
    }
    auto sf = set_feature(gated, lift);
    out.set_feature = sf.set_feature;
    out.point_features = sf.point_features;
    return out;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t t = 0; t < layers.size(); ++t) {
      layers[t].collect(out, prefix + ".conv" + std::to_string(t));
      if (config.gating) gates[t].collect(out, prefix + ".gate" + std::to_string(t));
    }
    lift.collect(out, prefix + ".lift");
  }
};

/// Coordinate-space graph of an N x 3 coordinate array.
template <class T>
NeighborGraph coordinate_graph(std::span<const T> xyz, std::size_t k) {
  const std::size_t n = xyz.size() / 3;
  return knn<T>(xyz, n, 3, effective_k(k, n), true, MetricSpace::coordinates);
}

}  // namespace dnet
