#pragma once

// Dense row-major matrix product used by every linear layer.
//
// Each output element is accumulated over the inner dimension in the same
// order by the same instruction sequence, independent of its row or column
// position.  A row of C therefore depends only on the matching row of A,
// which keeps layers exactly equivariant under point permutations.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <memory>
#include <new>
#include <vector>

namespace dnet::detail {

template <class T>
struct SimdTraits {
  typedef T vec __attribute__((vector_size(64)));
  static constexpr std::size_t width = 64 / sizeof(T);
};

template <class T>
struct AlignedBuffer {
  explicit AlignedBuffer(std::size_t n)
      : size(n),
        data(static_cast<T*>(::operator new[](std::max<std::size_t>(n, 1) * sizeof(T),
                                              std::align_val_t{64}))) {
    std::fill_n(data, n, T(0));
  }
  ~AlignedBuffer() { ::operator delete[](data, std::align_val_t{64}); }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;

  std::size_t size;
  T* data;
};

/// Per-thread growable scratch memory, reused across calls so that large
/// temporaries do not hit the allocator (and fresh pages) every time.
template <class T>
T* scratch(std::size_t n, int slot) {
  struct Slot {
    T* data = nullptr;
    std::size_t size = 0;
    ~Slot() { ::operator delete[](data, std::align_val_t{64}); }
  };
  thread_local Slot slots[3];
  Slot& s = slots[slot];
  if (s.size < n) {
    ::operator delete[](s.data, std::align_val_t{64});
    s.size = std::max(n, 2 * s.size);
    s.data = static_cast<T*>(::operator new[](s.size * sizeof(T), std::align_val_t{64}));
  }
  return s.data;
}

template <class T>
void transpose_into(std::size_t rows, std::size_t cols, const T* in, T* out, bool accumulate);

/// Operand layouts for gemm: an operand flagged transposed is stored as the
/// row-major transpose of its logical shape.
struct GemmLayout {
  bool trans_a = false;  ///< A is stored k x m
  bool trans_b = false;  ///< B is stored n x k
  bool trans_c = false;  ///< C is stored n x m
  bool accumulate = false;
};

/// C (m x n) = A (m x k) * B (k x n), or C += A*B when accumulating.
/// k-steps at which all rows of a register block of A are zero are skipped,
/// which makes products with sparse left operands (max-pool gradients) cheap.
template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, GemmLayout layout) {
  using V = typename SimdTraits<T>::vec;
  constexpr std::size_t W = SimdTraits<T>::width;
  constexpr std::size_t MR = 4;
  constexpr std::size_t NV = 4;
  constexpr std::size_t NR = NV * W;

  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!layout.accumulate) std::fill_n(c, m * n, T(0));
    return;
  }
  auto a_at = [&](std::size_t i, std::size_t kk) { return layout.trans_a ? a[kk * m + i] : a[i * k + kk]; };
  if (layout.trans_c) {
    if (k == 1) {
      // Outer product, written directly in the transposed layout.
      for (std::size_t j = 0; j < n; ++j) {
        const T bj = b[j];
        T* out = c + j * m;
        for (std::size_t i = 0; i < m; ++i) out[i] = (layout.accumulate ? out[i] : T(0)) + a_at(i, 0) * bj;
      }
      return;
    }
    // Product into scratch, then a cache-friendly transposed store.
    T* tmp = scratch<T>(m * n, 1);
    gemm(m, n, k, a, b, tmp, GemmLayout{layout.trans_a, layout.trans_b, false, false});
    transpose_into(m, n, tmp, c, layout.accumulate);
    return;
  }
  if (m < MR) {
    // Few rows: stream B once instead of packing it.
    for (std::size_t i = 0; i < m; ++i) {
      T* out = c + i * n;
      if (!layout.accumulate) std::fill_n(out, n, T(0));
      if (layout.trans_b) {
        for (std::size_t j = 0; j < n; ++j) {
          const T* bj = b + j * k;
          std::size_t kk = 0;
          T sum = T(0);
          if (!layout.trans_a) {
            const T* ai = a + i * k;
            V acc = V{};
            for (; kk + W <= k; kk += W) {
              V va, vb;
              std::memcpy(&va, ai + kk, sizeof(V));
              std::memcpy(&vb, bj + kk, sizeof(V));
              acc += va * vb;
            }
            for (std::size_t l = 0; l < W; ++l) sum += acc[l];
          }
          for (; kk < k; ++kk) sum += a_at(i, kk) * bj[kk];
          out[j] += sum;
        }
      } else {
        for (std::size_t kk = 0; kk < k; ++kk) {
          const T av = a_at(i, kk);
          if (av == T(0)) continue;
          const T* bk = b + kk * n;
          for (std::size_t j = 0; j < n; ++j) out[j] += av * bk[j];
        }
      }
    }
    return;
  }
  // B in column panels of NR: panel p holds B[kk][p*NR .. p*NR+NR) for all kk.
  const std::size_t panels = (n + NR - 1) / NR;
  T* packed = scratch<T>(panels * k * NR, 0);
  for (std::size_t p = 0; p < panels; ++p) {
    const std::size_t j0 = p * NR;
    const std::size_t jn = std::min(NR, n - j0);
    T* dst = packed + p * k * NR;
    if (jn < NR) std::fill_n(dst, k * NR, T(0));
    if (!layout.trans_b) {
      for (std::size_t kk = 0; kk < k; ++kk) std::memcpy(dst + kk * NR, b + kk * n + j0, jn * sizeof(T));
    } else {
      // Stream one cache line of each stored row at a time.
      constexpr std::size_t KC = 64 / sizeof(T);
      for (std::size_t k0 = 0; k0 < k; k0 += KC) {
        const std::size_t kn = std::min(KC, k - k0);
        for (std::size_t j = 0; j < jn; ++j) {
          const T* src = b + (j0 + j) * k + k0;
          for (std::size_t t = 0; t < kn; ++t) dst[(k0 + t) * NR + j] = src[t];
        }
      }
    }
  }

  // A in blocks of MR rows, interleaved by k-step; the block stride is padded
  // so that blocks do not share cache sets when k is a power of two.
  const std::size_t blocks = (m + MR - 1) / MR;
  const std::size_t block_stride = k * MR + 16;
  T* apack = scratch<T>(blocks * block_stride, 2);
  if (m % MR) std::fill_n(apack + (blocks - 1) * block_stride, block_stride, T(0));
  if (layout.trans_a) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* src = a + kk * m;
      for (std::size_t i = 0; i < m; ++i) apack[(i / MR) * block_stride + kk * MR + i % MR] = src[i];
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      const T* src = a + i * k;
      T* dst = apack + (i / MR) * block_stride + i % MR;
      for (std::size_t kk = 0; kk < k; ++kk) dst[kk * MR] = src[kk];
    }
  }

  std::vector<std::uint32_t> active;
  active.reserve(k);
  for (std::size_t blk = 0; blk < blocks; ++blk) {
    const std::size_t i0 = blk * MR;
    const std::size_t mr = std::min(MR, m - i0);
    const T* ap = apack + blk * block_stride;
    active.clear();
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T* q = ap + kk * MR;
      if (q[0] != T(0) || q[1] != T(0) || q[2] != T(0) || q[3] != T(0)) active.push_back(static_cast<std::uint32_t>(kk));
    }

    for (std::size_t p = 0; p < panels; ++p) {
      V acc[MR][NV];
      for (std::size_t r = 0; r < MR; ++r)
        for (std::size_t v = 0; v < NV; ++v) acc[r][v] = V{};
      const T* bp = packed + p * k * NR;
      for (const std::uint32_t kk : active) {
        const T* q = ap + kk * MR;
        const T a0 = q[0], a1 = q[1], a2 = q[2], a3 = q[3];
        const V* bv = reinterpret_cast<const V*>(bp + kk * NR);
#pragma GCC unroll 4
        for (std::size_t v = 0; v < NV; ++v) {
          const V bx = bv[v];
          acc[0][v] += a0 * bx;
          acc[1][v] += a1 * bx;
          acc[2][v] += a2 * bx;
          acc[3][v] += a3 * bx;
        }
      }
      const std::size_t j0 = p * NR;
      const std::size_t jn = std::min(NR, n - j0);
      for (std::size_t r = 0; r < mr; ++r) {
        T tmp[NR];
        std::memcpy(tmp, acc[r], sizeof(tmp));
        T* out = c + (i0 + r) * n + j0;
        if (layout.accumulate) {
          for (std::size_t j = 0; j < jn; ++j) out[j] += tmp[j];
        } else {
          std::memcpy(out, tmp, jn * sizeof(T));
        }
      }
    }
  }
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c, bool accumulate = false) {
  gemm(m, n, k, a, b, c, GemmLayout{false, false, false, accumulate});
}

/// out (cols x rows) = in (rows x cols) transposed, or out += in^T.
template <class T>
void transpose_into(std::size_t rows, std::size_t cols, const T* in, T* out, bool accumulate) {
  constexpr std::size_t B = 8;  // small tiles avoid cache-set conflicts at power-of-two strides
  for (std::size_t i0 = 0; i0 < rows; i0 += B)
    for (std::size_t j0 = 0; j0 < cols; j0 += B) {
      const std::size_t ie = std::min(rows, i0 + B), je = std::min(cols, j0 + B);
      for (std::size_t j = j0; j < je; ++j)
        for (std::size_t i = i0; i < ie; ++i) {
          T& o = out[j * rows + i];
          o = accumulate ? o + in[i * cols + j] : in[i * cols + j];
        }
    }
}

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
  transpose_into(rows, cols, in, out, false);
}

}  // namespace dnet::detail
