#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace p2p::ad::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c (m×n) = op(a) · op(b), or c += op(a) · op(b) with accumulate.
// Row-major buffers; op(a) is m×k, op(b) is k×n. When transposed, a is stored
// k×m and b is stored n×k.
inline void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  MutMap C(c, M, N);
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b)
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  else if (trans_a && !trans_b)
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  else if (!trans_a && trans_b)
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  else
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
}

}  // namespace p2p::ad::detail
