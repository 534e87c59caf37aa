#pragma once

// Brute-force reference implementations and the finite-difference gradient
// checker, shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dnet/fusion.hpp"
#include "dnet/geometry.hpp"
#include "dnet/ops.hpp"
#include "dnet/sps.hpp"

namespace dnet::test {

using TD = Tensor<double>;

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <class T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double lo = -1.0,
                        double hi = 1.0) {
  const auto v = uniform_values(numel(shape), rng, lo, hi);
  return Tensor<T>(std::move(shape), std::vector<T>(v.begin(), v.end()), requires_grad);
}

/// sum(x * r) for a fixed random r: turns any output into a generic scalar.
inline TD project(const TD& x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(x, TD(x.shape(), uniform_values(x.numel(), rng), false)));
}

struct GradcheckReport {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbations that changed a discrete choice
  double worst = 0;
  std::string worst_at;
};

/// Central differences (step h) of the scalar `loss` against every element
/// of `params`, compared with the gradients from backward.  A perturbation
/// that changes any recorded discrete decision (ReLU mask, argmax, neighbor
/// list, selection) lies across a kink and is skipped.  The relative error
/// uses max(|analytic|, |numeric|, floor) as denominator so that gradients
/// that are zero up to rounding do not divide by zero.
inline GradcheckReport gradcheck(const std::vector<TD>& params, const std::function<TD()>& loss, double h = 1e-3,
                                 double floor = 1e-3) {
  for (const auto& p : params) p.clear_grad();
  std::uint64_t base_fp;
  {
    DecisionRecorder rec;
    const auto l = loss();
    base_fp = rec.fingerprint();
    backward(l);
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.numel(), 0.0);
    p.clear_grad();
  }
  auto eval = [&](std::uint64_t& fp) {
    NoGradGuard ng;
    DecisionRecorder rec;
    const double v = loss().item();
    fp = rec.fingerprint();
    return v;
  };
  GradcheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto w = params[pi].mutable_data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double saved = w[j];
      std::uint64_t fp_plus, fp_minus;
      w[j] = saved + h;
      const double lp = eval(fp_plus);
      w[j] = saved - h;
      const double lm = eval(fp_minus);
      w[j] = saved;
      if (fp_plus != base_fp || fp_minus != base_fp) {
        ++rep.skipped;
        continue;
      }
      const double num = (lp - lm) / (2 * h);
      const double a = analytic[pi][j];
      const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
      ++rep.checked;
      if (rel > rep.worst) {
        rep.worst = rel;
        rep.worst_at = "param " + std::to_string(pi) + "[" + std::to_string(j) + "] analytic " + std::to_string(a) +
                       " numeric " + std::to_string(num);
      }
    }
  }
  return rep;
}

// O(N^2) neighbor lists: sort every other row by (squared distance, index).
// The distance is accumulated as d += t*t in T, the same arithmetic form as
// the library, so equal inputs give equal keys.
template <class T>
IndexList knn_oracle(const std::vector<T>& f, std::size_t n, std::size_t dims, std::size_t k, bool exclude_self) {
  IndexList out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<T, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (exclude_self && j == i) continue;
      T d = 0;
      for (std::size_t c = 0; c < dims; ++c) {
        const T t = f[j * dims + c] - f[i * dims + c];
        d += t * t;
      }
      cand.push_back({d, j});
    }
    std::sort(cand.begin(), cand.end());
    for (std::size_t e = 0; e < k; ++e) out.push_back(cand[e].second);
  }
  return out;
}

// Plain greedy farthest point sampling.
inline IndexList fps_oracle(const std::vector<float>& p, std::size_t m, std::size_t start) {
  const std::size_t n = p.size() / 3;
  IndexList chosen{start};
  while (chosen.size() < m) {
    std::size_t best = 0;
    double best_d = -1;
    for (std::size_t i = 0; i < n; ++i) {
      double dmin = INFINITY;
      for (auto s : chosen) {
        double d = 0;
        for (int c = 0; c < 3; ++c) d += std::pow(double(p[3 * i + c]) - p[3 * s + c], 2);
        dmin = std::min(dmin, d);
      }
      if (dmin > best_d) best_d = dmin, best = i;
    }
    chosen.push_back(best);
  }
  return chosen;
}

// Attentive scores with loops in double: s_ij = g_i . h_j, beta_{j,i} =
// exp(s_ij) / sum_i' exp(s_i'j), alpha_i = sum_j beta_{j,i}.  The row
// variant normalizes over j instead and sums columns.
inline std::vector<double> alpha_oracle(const std::vector<double>& p, std::size_t n, std::size_t din,
                                        const std::vector<double>& wg, const std::vector<double>& wh, std::size_t dim,
                                        NormalizeAxis axis) {
  std::vector<double> g(n * dim, 0), h(n * dim, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d)
      for (std::size_t c = 0; c < din; ++c) {
        g[i * dim + d] += p[i * din + c] * wg[c * dim + d];
        h[i * dim + d] += p[i * din + c] * wh[c * dim + d];
      }
  std::vector<double> s(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t d = 0; d < dim; ++d) s[i * n + j] += g[i * dim + d] * h[j * dim + d];
  std::vector<double> alpha(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    double z = 0;
    for (std::size_t i = 0; i < n; ++i) z += std::exp(axis == NormalizeAxis::column ? s[i * n + j] : s[j * n + i]);
    for (std::size_t i = 0; i < n; ++i)
      alpha[i] += std::exp(axis == NormalizeAxis::column ? s[i * n + j] : s[j * n + i]) / z;
  }
  return alpha;
}

// h_ij = f_i (+) (f_j - f_i), laid out N x k x 2C.
inline std::vector<double> edge_features_oracle(const std::vector<float>& f, std::size_t n, std::size_t c,
                                                const NeighborGraph& g) {
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t e = 0; e < g.k; ++e) {
      const std::size_t j = g.indices[i * g.k + e];
      for (std::size_t d = 0; d < c; ++d) out.push_back(f[i * c + d]);
      for (std::size_t d = 0; d < c; ++d) out.push_back(double(f[j * c + d]) - f[i * c + d]);
    }
  return out;
}

// One edge-convolution layer from its definition, in double:
// out_i = relu(max_j W^T [f_i, f_j - f_i] + b).
inline std::vector<double> edgeconv_oracle(const std::vector<float>& f, std::size_t n, std::size_t c,
                                           const NeighborGraph& g, const Linear<float>& mlp) {
  const std::size_t out = mlp.out_features();
  std::vector<double> res(n * out);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out; ++o) {
      double best = -INFINITY;
      for (std::size_t e = 0; e < g.k; ++e) {
        const std::size_t j = g.indices[i * g.k + e];
        double v = mlp.bias[o];
        for (std::size_t d = 0; d < c; ++d) {
          v += double(f[i * c + d]) * mlp.weight.at(d, o);
          v += (double(f[j * c + d]) - f[i * c + d]) * mlp.weight.at(c + d, o);
        }
        best = std::max(best, v);
      }
      res[i * out + o] = std::max(best, 0.0);
    }
  return res;
}

// omega = W2^T relu(W1^T f + b1) + b2 per branch, then a softmax over the
// branches for every channel.  Result is branch-major, B x W.
inline std::vector<double> psi_oracle(const std::vector<Tensor<float>>& feats, const FusionParams<float>& p) {
  const std::size_t b = feats.size(), w = feats[0].numel();
  std::vector<double> omega(b * w);
  for (std::size_t m = 0; m < b; ++m) {
    const auto& l1 = p.descriptors[m].layers[0];
    const auto& l2 = p.descriptors[m].layers[1];
    const std::size_t hid = l1.out_features();
    std::vector<double> h(hid);
    for (std::size_t j = 0; j < hid; ++j) {
      double v = l1.bias[j];
      for (std::size_t c = 0; c < w; ++c) v += double(feats[m][c]) * l1.weight.at(c, j);
      h[j] = std::max(v, 0.0);
    }
    for (std::size_t c = 0; c < w; ++c) {
      double v = l2.bias[c];
      for (std::size_t j = 0; j < hid; ++j) v += h[j] * l2.weight.at(j, c);
      omega[m * w + c] = v;
    }
  }
  std::vector<double> psi(b * w);
  for (std::size_t c = 0; c < w; ++c) {
    double z = 0;
    for (std::size_t m = 0; m < b; ++m) z += std::exp(omega[m * w + c]);
    for (std::size_t m = 0; m < b; ++m) psi[m * w + c] = std::exp(omega[m * w + c]) / z;
  }
  return psi;
}

// f_g[c] = sum_m psi[m][c] * f_m[c].
inline std::vector<double> fuse_oracle(const Tensor<float>& psi, const std::vector<Tensor<float>>& feats) {
  const std::size_t w = feats[0].numel();
  std::vector<double> out(w, 0);
  for (std::size_t m = 0; m < feats.size(); ++m)
    for (std::size_t c = 0; c < w; ++c) out[c] += double(psi.at(m, c)) * feats[m][c];
  return out;
}

}  // namespace dnet::test
