#pragma once

#include <cstddef>

namespace stgan::detail {

// Row-major C[m x n] (+)= op(A) * op(B), with op(A) m x k and op(B) k x n.
// lda/ldb/ldc are row strides of the stored (untransposed) matrices.
// The summation order over k is fixed, so results are reproducible.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double* c, std::size_t ldc, bool accumulate);

}  // namespace stgan::detail
