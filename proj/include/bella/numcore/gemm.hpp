// Copyright 2026 The bella Authors
// SPDX-License-Identifier: Apache-2.0
//
// Row-major GEMM kernels. Eigen does the blocking; it runs single-threaded so
// reductions happen in a fixed order for a given build.

#pragma once

#ifndef EIGEN_DONT_PARALLELIZE
#define EIGEN_DONT_PARALLELIZE
#endif
#include <Eigen/Core>

#include <cstddef>

namespace bella::numcore::gemm {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using Map = Eigen::Map<RowMat<T>>;

// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  MapC<T> A(a, m, k);
  MapC<T> B(b, n, k);
  Map<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B.transpose();
  else
    C.noalias() = A * B.transpose();
}

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  MapC<T> A(a, m, k);
  MapC<T> B(b, k, n);
  Map<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A * B;
  else
    C.noalias() = A * B;
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void tn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool accumulate) {
  MapC<T> A(a, k, m);
  MapC<T> B(b, k, n);
  Map<T> C(c, m, n);
  if (accumulate)
    C.noalias() += A.transpose() * B;
  else
    C.noalias() = A.transpose() * B;
}

}  // namespace bella::numcore::gemm
