#include "gemm.hpp"

#include <algorithm>
#include <vector>

namespace stgan::detail {
namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;

// Copies a kNr-wide column panel of op(B) into contiguous rows, zero-padding
// columns past `nr`.
void pack_b(bool trans, const double* b, std::size_t ldb, std::size_t j0,
            std::size_t nr, std::size_t k, double* out) {
  if (trans) {
    std::fill_n(out, k * kNr, 0.0);
    for (std::size_t s = 0; s < nr; ++s) {
      const double* src = b + (j0 + s) * ldb;
      for (std::size_t p = 0; p < k; ++p) out[p * kNr + s] = src[p];
    }
    return;
  }
  for (std::size_t p = 0; p < k; ++p) {
    double* row = out + p * kNr;
    std::copy_n(b + p * ldb + j0, nr, row);
    std::fill(row + nr, row + kNr, 0.0);
  }
}

// Packs op(A) into row panels of kMr, stored k-major so the kernel reads
// kMr consecutive values per step. Rows past m are zero.
void pack_a(bool trans, const double* a, std::size_t lda, std::size_t m, std::size_t k,
            double* out) {
  for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
    const std::size_t mr = std::min(kMr, m - i0);
    double* panel = out + i0 * k;
    for (std::size_t p = 0; p < k; ++p) {
      double* dst = panel + p * kMr;
      for (std::size_t r = 0; r < mr; ++r)
        dst[r] = trans ? a[p * lda + i0 + r] : a[(i0 + r) * lda + p];
      for (std::size_t r = mr; r < kMr; ++r) dst[r] = 0.0;
    }
  }
}

// acc[kMr x kNr] = A_panel * B_panel; B rows are kNr values spaced b_ld apart.
inline void micro_kernel(std::size_t k, const double* __restrict a,
                         const double* __restrict b, std::size_t b_ld,
                         double* __restrict acc) {
  double c[kMr][kNr] = {};
  for (std::size_t p = 0; p < k; ++p) {
    const double* bp = b + p * b_ld;
    const double* ap = a + p * kMr;
#pragma GCC unroll 4
    for (std::size_t r = 0; r < kMr; ++r) {
#pragma GCC unroll 16
      for (std::size_t s = 0; s < kNr; ++s) c[r][s] += ap[r] * bp[s];
    }
  }
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t s = 0; s < kNr; ++s) acc[r * kNr + s] = c[r][s];
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate)
      for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
    return;
  }
  const std::size_t m_padded = (m + kMr - 1) / kMr * kMr;
  std::vector<double> packed_a(m_padded * k);
  pack_a(trans_a, a, lda, m, k, packed_a.data());
  std::vector<double> packed_b;
  double tile[kMr * kNr];
  for (std::size_t j0 = 0; j0 < n; j0 += kNr) {
    const std::size_t nr = std::min(kNr, n - j0);
    const double* panel = b + j0;
    std::size_t panel_ld = ldb;
    if (trans_b || nr < kNr || ldb * sizeof(double) % 4096 == 0) {
      packed_b.resize(k * kNr);
      pack_b(trans_b, b, ldb, j0, nr, k, packed_b.data());
      panel = packed_b.data();
      panel_ld = kNr;
    }
    for (std::size_t i0 = 0; i0 < m; i0 += kMr) {
      const std::size_t mr = std::min(kMr, m - i0);
      micro_kernel(k, packed_a.data() + i0 * k, panel, panel_ld, tile);
      for (std::size_t r = 0; r < mr; ++r) {
        double* crow = c + (i0 + r) * ldc + j0;
        const double* trow = tile + r * kNr;
        if (accumulate) {
          for (std::size_t s = 0; s < nr; ++s) crow[s] += trow[s];
        } else {
          for (std::size_t s = 0; s < nr; ++s) crow[s] = trow[s];
        }
      }
    }
  }
}

}  // namespace stgan::detail
