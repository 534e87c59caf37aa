#pragma once

// Differentiable tensor operations.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "dnet/detail/gemm.hpp"
#include "dnet/tensor.hpp"

namespace dnet {

/// Integer companion of a Tensor, e.g. the argmax positions of max_reduce.
struct IndexTensor {
  Shape shape;
  IndexList indices;
};

namespace detail {

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b)
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

inline void require_matrix(const Shape& s, const char* op, const char* what) {
  if (s.size() != 2)
    throw DimensionError(std::string(op) + ": " + what + " must be a matrix, got " + to_string(s));
}


// Backward of y = x w for an upstream gradient g with few nonzeros (the
// lift before a max-pool has at most one per channel).  Every sum runs over
// the same terms in the same order as the dense kernel.
template <class T>
bool linear_backward_sparse(std::size_t n, std::size_t din, std::size_t dout, const T* g, const T* x, const T* w,
                            T* gx, T* gw) {
  std::size_t count = 0;
  for (std::size_t e = 0; e < n * dout; ++e) count += g[e] != T(0);
  if (count * 8 > n * dout) return false;

  if (gw) {
    // Column o of g as up to kLayers (row, value) pairs; layer l holds the
    // l-th nonzero of every column in ascending row order.
    constexpr std::size_t kLayers = 4;
    std::vector<std::int32_t> rows(kLayers * dout, 0);
    std::vector<T> vals(kLayers * dout, T(0));
    std::vector<std::uint8_t> depth(dout, 0);
    std::size_t layers = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < dout; ++o)
        if (g[i * dout + o] != T(0)) {
          const std::size_t l = depth[o]++;
          if (l == kLayers) return false;
          rows[l * dout + o] = static_cast<std::int32_t>(i);
          vals[l * dout + o] = g[i * dout + o];
          layers = std::max(layers, l + 1);
        }
    T* xt = scratch<T>(din * n, 1);
    transpose_into(n, din, x, xt, false);
    for (std::size_t j = 0; j < din; ++j) {
      const T* xr = xt + j * n;
      T* out = gw + j * dout;
      if (layers == 1) {
        const std::int32_t* r0 = rows.data();
        const T* v0 = vals.data();
        for (std::size_t o = 0; o < dout; ++o) out[o] += T(0) + xr[r0[o]] * v0[o];
        continue;
      }
      for (std::size_t o = 0; o < dout; ++o) {
        T acc = T(0);
        for (std::size_t l = 0; l < layers; ++l) acc += xr[rows[l * dout + o]] * vals[l * dout + o];
        out[o] += acc;
      }
    }
  }
  if (gx) {
    struct Entry {
      std::uint32_t i, o;
      T v;
    };
    std::vector<Entry> nz;
    nz.reserve(count);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < dout; ++o)
        if (g[i * dout + o] != T(0)) nz.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(o), g[i * dout + o]});
    // Accumulated transposed so that each row of w is read once.
    T* gxt = scratch<T>(din * n, 1);
    std::fill_n(gxt, din * n, T(0));
    for (std::size_t j = 0; j < din; ++j) {
      const T* wr = w + j * dout;
      T* out = gxt + j * n;
      for (const auto& e : nz) out[e.i] += e.v * wr[e.o];
    }
    transpose_into(din, n, gxt, gx, true);
  }
  return true;
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  // Either equal shapes, or b is a vector broadcast along the last axis of a.
  const bool broadcast = a.shape() != b.shape();
  if (broadcast && (b.rank() != 1 || b.dim(0) != a.shape().back()))
    throw DimensionError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const std::size_t width = b.numel(), rows = a.numel() / width;
  std::vector<T> out(a.values());
  const T* bv = b.values().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * width;
    const T* src = broadcast ? bv : bv + r * width;
    for (std::size_t j = 0; j < width; ++j) o[j] += src[j];
  }
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b},
                            [a, b, broadcast, width, rows](const std::vector<T>& g) {
                              if (auto* ga = a.grad_sink())
                                for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
                              if (auto* gb = b.grad_sink())
                                for (std::size_t r = 0; r < rows; ++r) {
                                  T* dst = gb->data() + (broadcast ? 0 : r * width);
                                  const T* src = g.data() + r * width;
                                  for (std::size_t j = 0; j < width; ++j) dst[j] += src[j];
                                }
                            });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a.shape(), b.shape(), "sub");
  std::vector<T> out(a.values());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
    if (auto* ga = a.grad_sink())
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (auto* gb = b.grad_sink())
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

/// Elementwise product.  `b` may instead hold one scalar per leading-axis
/// row of `a` (shape [N] or [N x 1]), which scales each row of `a`.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool per_row = a.shape() != b.shape();
  if (per_row) {
    const bool ok = b.numel() == a.dim(0) && (b.rank() == 1 || (b.rank() == 2 && b.dim(1) == 1));
    if (!ok)
      throw DimensionError("mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (!per_row) {
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [a, b](const std::vector<T>& g) {
      const auto& av = a.values();
      const auto& bv = b.values();
      if (auto* ga = a.grad_sink())
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
      if (auto* gb = b.grad_sink())
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    });
  }
  const std::size_t rows = a.dim(0), row = a.numel() / rows;
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<T> out(av.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < row; ++j) out[r * row + j] = av[r * row + j] * bv[r];
  return Tensor<T>::from_op(a.shape(), std::move(out), {a, b}, [a, b, rows, row](const std::vector<T>& g) {
    const auto& av = a.values();
    const auto& bv = b.values();
    if (auto* ga = a.grad_sink())
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < row; ++j) (*ga)[r * row + j] += g[r * row + j] * bv[r];
    if (auto* gb = b.grad_sink())
      for (std::size_t r = 0; r < rows; ++r) {
        accum_t<T> s = 0;
        for (std::size_t j = 0; j < row; ++j) s += static_cast<accum_t<T>>(g[r * row + j]) * av[r * row + j];
        (*gb)[r] += static_cast<T>(s);
      }
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.values());
  for (auto& v : out) v *= factor;
  return Tensor<T>::from_op(a.shape(), std::move(out), {a}, [a, factor](const std::vector<T>& g) {
    if (auto* ga = a.grad_sink())
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * factor;
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.values());
  for (auto& v : out) v = v > T(0) ? v : T(0);
  if (auto* log = detail::decision_log())
    for (auto v : out) log->mix(v > T(0));
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [x](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink()) {
      const auto& xv = x.values();
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += xv[i] > T(0) ? g[i] : T(0);
    }
  });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const auto& xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  auto y = out;
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [x, y](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

/// Matrix product a (M x K) * b (K x N).
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a.shape(), "matmul", "left operand");
  detail::require_matrix(b.shape(), "matmul", "right operand");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ, " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
  std::vector<T> out(m * n);
  detail::gemm(m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor<T>::from_op({m, n}, std::move(out), {a, b}, [a, b, m, n, k](const std::vector<T>& g) {
    // ga (M x K) += g B^T;  gb (K x N) += A^T g, formed as (g^T A)^T so that
    // sparse rows of g are skipped.
    if (auto* ga = a.grad_sink())
      detail::gemm(m, k, n, g.data(), b.values().data(), ga->data(), {false, true, false, true});
    if (auto* gb = b.grad_sink())
      detail::gemm(n, k, m, g.data(), a.values().data(), gb->data(), {true, false, true, true});
  });
}

/// Affine map x (N x Din) * W (Din x Dout) + b (Dout).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_matrix(x.shape(), "linear", "input");
  detail::require_matrix(w.shape(), "linear", "weight");
  if (x.dim(1) != w.dim(0))
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
  if (b.rank() != 1 || b.dim(0) != w.dim(1))
    throw DimensionError("linear: bias " + to_string(b.shape()) + " incompatible with weight " +
                         to_string(w.shape()));
  const std::size_t n = x.dim(0), din = w.dim(0), dout = w.dim(1);
  std::vector<T> out(n * dout);
  detail::gemm(n, dout, din, x.values().data(), w.values().data(), out.data());
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dout; ++j) out[i * dout + j] += bv[j];
  return Tensor<T>::from_op(
      {n, dout}, std::move(out), {x, w, b}, [x, w, b, n, din, dout](const std::vector<T>& g) {
        auto* gx = x.grad_sink();
        auto* gw = w.grad_sink();
        if (!detail::linear_backward_sparse(n, din, dout, g.data(), x.values().data(), w.values().data(),
                                            gx ? gx->data() : nullptr, gw ? gw->data() : nullptr)) {
          if (gx) detail::gemm(n, din, dout, g.data(), w.values().data(), gx->data(), {false, true, false, true});
          if (gw) detail::gemm(dout, din, n, g.data(), x.values().data(), gw->data(), {true, false, true, true});
        }
        if (auto* gb = b.grad_sink())
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < dout; ++j) (*gb)[j] += g[i * dout + j];
      });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_matrix(x.shape(), "transpose", "input");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(r * c);
  detail::transpose(r, c, x.values().data(), out.data());
  return Tensor<T>::from_op({c, r}, std::move(out), {x}, [x, r, c](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink()) {
      std::vector<T> back(r * c);
      detail::transpose(c, r, g.data(), back.data());
      for (std::size_t i = 0; i < back.size(); ++i) (*gx)[i] += back[i];
    }
  });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  return Tensor<T>::from_op(std::move(shape), x.values(), {x}, [x](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

/// Joins tensors along `axis`; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  Shape shape = xs.front().shape();
  if (axis >= shape.size())
    throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for shape " + to_string(shape));
  std::size_t total = 0;
  for (const auto& x : xs) {
    Shape s = x.shape();
    if (s.size() != shape.size())
      throw DimensionError("concat: rank mismatch " + to_string(shape) + " vs " + to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != shape[d])
        throw DimensionError("concat: incompatible shapes " + to_string(shape) + " and " + to_string(s));
    total += s[axis];
  }
  shape[axis] = total;
  const auto split = detail::split_axis(shape, axis, "concat");
  std::vector<T> out(numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& x : xs) {
    const std::size_t ext = x.dim(axis);
    const auto& v = x.values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(v.begin() + o * ext * split.inner, ext * split.inner,
                  out.begin() + (o * total + offset) * split.inner);
    offsets.push_back(offset);
    offset += ext;
  }
  return Tensor<T>::from_op(shape, std::move(out), xs, [xs, offsets, split, total, axis](const std::vector<T>& g) {
    for (std::size_t t = 0; t < xs.size(); ++t) {
      auto* gx = xs[t].grad_sink();
      if (!gx) continue;
      const std::size_t ext = xs[t].dim(axis);
      for (std::size_t o = 0; o < split.outer; ++o) {
        const T* src = g.data() + (o * total + offsets[t]) * split.inner;
        T* dst = gx->data() + o * ext * split.inner;
        for (std::size_t i = 0; i < ext * split.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

/// The sub-range [begin, end) of `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const auto split = detail::split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > split.extent)
    throw IndexError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for extent " + std::to_string(split.extent));
  Shape shape = x.shape();
  shape[axis] = end - begin;
  const std::size_t ext = end - begin;
  std::vector<T> out(numel(shape));
  const auto& v = x.values();
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(v.begin() + (o * split.extent + begin) * split.inner, ext * split.inner,
                out.begin() + o * ext * split.inner);
  return Tensor<T>::from_op(shape, std::move(out), {x}, [x, split, begin, ext](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t o = 0; o < split.outer; ++o) {
        const T* src = g.data() + o * ext * split.inner;
        T* dst = gx->data() + (o * split.extent + begin) * split.inner;
        for (std::size_t i = 0; i < ext * split.inner; ++i) dst[i] += src[i];
      }
  });
}

/// Rows of x (indexing the leading axis) in the order given by idx.
/// Repeated indices accumulate their gradients.
template <class T>
Tensor<T> gather_rows(const Tensor<T>& x, const IndexList& idx) {
  const std::size_t n = x.dim(0);
  const std::size_t row = x.numel() / n;
  for (auto i : idx)
    if (i >= n)
      throw IndexError("gather_rows: index " + std::to_string(i) + " out of range for " + std::to_string(n) +
                       " rows");
  if (idx.empty()) throw DimensionError("gather_rows: empty index list");
  Shape shape = x.shape();
  shape[0] = idx.size();
  std::vector<T> out(idx.size() * row);
  const auto& v = x.values();
  for (std::size_t m = 0; m < idx.size(); ++m)
    std::copy_n(v.begin() + idx[m] * row, row, out.begin() + m * row);
  return Tensor<T>::from_op(shape, std::move(out), {x}, [x, idx, row](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t m = 0; m < idx.size(); ++m) {
        T* dst = gx->data() + idx[m] * row;
        const T* src = g.data() + m * row;
        for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
      }
  });
}

/// x (1 x D) or (D) repeated into n rows.
template <class T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t n) {
  const std::size_t d = x.numel();
  std::vector<T> out(n * d);
  for (std::size_t i = 0; i < n; ++i) std::copy(x.values().begin(), x.values().end(), out.begin() + i * d);
  return Tensor<T>::from_op({n, d}, std::move(out), {x}, [x, n, d](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gx)[j] += g[i * d + j];
  });
}

/// Maximum along `axis`; ties resolve to the first maximal position, which is
/// also where the backward pass routes the gradient.
template <class T>
std::pair<Tensor<T>, IndexTensor> max_reduce(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "max_reduce");
  const Shape shape = detail::drop_axis(x.shape(), axis);
  std::vector<T> out(s.outer * s.inner);
  IndexList arg(s.outer * s.inner, 0);
  const auto& v = x.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    const T* base = v.data() + o * s.extent * s.inner;
    T* best = out.data() + o * s.inner;
    std::size_t* where = arg.data() + o * s.inner;
    std::copy_n(base, s.inner, best);
    for (std::size_t e = 1; e < s.extent; ++e) {
      const T* row = base + e * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i)
        if (row[i] > best[i]) {
          best[i] = row[i];
          where[i] = e;
        }
    }
  }
  detail::record_decisions(arg);
  auto values = Tensor<T>::from_op(shape, std::move(out), {x}, [x, arg, s](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i)
          (*gx)[(o * s.extent + arg[o * s.inner + i]) * s.inner + i] += g[o * s.inner + i];
  });
  return {values, IndexTensor{shape, std::move(arg)}};
}

/// out[i] = max over e < k of x[idx[i*k + e]] (rows of x), i.e.
/// max_reduce(reshape(gather_rows(x, idx), {M, k, C}), 1) without the
/// intermediate M x k x C tensor.  Ties resolve to the first position.
template <class T>
Tensor<T> gather_max(const Tensor<T>& x, const IndexList& idx, std::size_t k) {
  detail::require_matrix(x.shape(), "gather_max", "input");
  if (k == 0 || idx.empty() || idx.size() % k != 0)
    throw DimensionError("gather_max: " + std::to_string(idx.size()) + " indices do not form rows of " +
                         std::to_string(k));
  const std::size_t n = x.dim(0), c = x.dim(1), m = idx.size() / k;
  for (auto i : idx)
    if (i >= n)
      throw IndexError("gather_max: index " + std::to_string(i) + " out of range for " + std::to_string(n) + " rows");
  const auto& v = x.values();
  std::vector<T> out(m * c);
  // Source row of each maximum; 32-bit so the select vectorizes with floats.
  std::vector<std::uint32_t> arg(m * c);
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict best = out.data() + i * c;
    std::uint32_t* __restrict where = arg.data() + i * c;
    const std::size_t first = idx[i * k];
    std::copy_n(v.data() + first * c, c, best);
    std::fill_n(where, c, static_cast<std::uint32_t>(first));
    for (std::size_t e = 1; e < k; ++e) {
      const std::uint32_t j = static_cast<std::uint32_t>(idx[i * k + e]);
      const T* __restrict row = v.data() + std::size_t{j} * c;
      for (std::size_t d = 0; d < c; ++d) {
        const bool gt = row[d] > best[d];
        best[d] = gt ? row[d] : best[d];
        where[d] = gt ? j : where[d];
      }
    }
  }
  if (auto* log = detail::decision_log())
    for (auto w : arg) log->mix(w);
  return Tensor<T>::from_op({m, c}, std::move(out), {x}, [x, arg = std::move(arg), m, c](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t d = 0; d < c; ++d) (*gx)[std::size_t{arg[i * c + d]} * c + d] += g[i * c + d];
  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  accum_t<T> total = 0;
  for (auto v : x.values()) total += v;
  return Tensor<T>::from_op({1}, {static_cast<T>(total)}, {x}, [x](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (auto& v : *gx) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

/// Sum along `axis`, removing it.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "sum_axis");
  std::vector<T> out(s.outer * s.inner);
  const auto& v = x.values();
  std::vector<accum_t<T>> acc(s.inner);
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::fill(acc.begin(), acc.end(), accum_t<T>(0));
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* row = v.data() + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) acc[i] += row[i];
    }
    for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] = static_cast<T>(acc[i]);
  }
  return Tensor<T>::from_op(detail::drop_axis(x.shape(), axis), std::move(out), {x},
                            [x, s](const std::vector<T>& g) {
                              if (auto* gx = x.grad_sink())
                                for (std::size_t o = 0; o < s.outer; ++o)
                                  for (std::size_t e = 0; e < s.extent; ++e)
                                    for (std::size_t i = 0; i < s.inner; ++i)
                                      (*gx)[(o * s.extent + e) * s.inner + i] += g[o * s.inner + i];
                            });
}

/// Softmax along `axis` with max subtraction.  Sums are accumulated in a
/// wider type so results do not depend on the order of the slice.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis, "softmax");
  const auto& v = x.values();
  for (auto e : v)
    if (!std::isfinite(e)) throw NumericError("softmax: non-finite input");
  std::vector<T> out(v.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T hi = v[base];
      for (std::size_t e = 1; e < s.extent; ++e) hi = std::max(hi, v[base + e * s.inner]);
      accum_t<T> total = 0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T ex = std::exp(v[base + e * s.inner] - hi);
        out[base + e * s.inner] = ex;
        total += ex;
      }
      for (std::size_t e = 0; e < s.extent; ++e)
        out[base + e * s.inner] = static_cast<T>(out[base + e * s.inner] / total);
    }
  auto y = out;
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [x, y, s](const std::vector<T>& g) {
    auto* gx = x.grad_sink();
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        accum_t<T> dot = 0;
        for (std::size_t e = 0; e < s.extent; ++e)
          dot += static_cast<accum_t<T>>(g[base + e * s.inner]) * y[base + e * s.inner];
        for (std::size_t e = 0; e < s.extent; ++e) {
          const std::size_t at = base + e * s.inner;
          (*gx)[at] += static_cast<T>(y[at] * (g[at] - dot));
        }
      }
  });
}

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by 1/(1-rate); otherwise identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0))
    throw ParameterError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = unit(rng) < rate ? T(0) : keep_scale;
  std::vector<T> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return Tensor<T>::from_op(x.shape(), std::move(out), {x}, [x, mask](const std::vector<T>& g) {
    if (auto* gx = x.grad_sink())
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

}  // namespace dnet
