#pragma once

#include <cstdint>
#include <vector>

namespace emoformer::nn {

// Dense matrix kernels, row-major. Products are accumulated in double
// regardless of the storage scalar, with a fixed summation order, so results
// are bit-reproducible run to run. When `accumulate` is set the product is
// added onto C instead of overwriting it.

// C[M,N] = A[M,K] * B[K,N]
template <class S>
void gemm_nn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C,
             bool accumulate = false) {
  std::vector<double> row(static_cast<size_t>(N));
  for (int64_t i = 0; i < M; ++i) {
    double* acc = row.data();
    for (int64_t j = 0; j < N; ++j) acc[j] = 0.0;
    const S* a_row = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const double a = static_cast<double>(a_row[k]);
      const S* b_row = B + k * N;
      for (int64_t j = 0; j < N; ++j)
        acc[j] += a * static_cast<double>(b_row[j]);
    }
    S* c_row = C + i * N;
    if (accumulate) {
      for (int64_t j = 0; j < N; ++j)
        c_row[j] = static_cast<S>(static_cast<double>(c_row[j]) + acc[j]);
    } else {
      for (int64_t j = 0; j < N; ++j) c_row[j] = static_cast<S>(acc[j]);
    }
  }
}

// C[M,N] = A[M,K] * B[N,K]^T  (rows of B are the columns of the product)
template <class S>
void gemm_nt(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C,
             bool accumulate = false) {
  for (int64_t i = 0; i < M; ++i) {
    const S* a_row = A + i * K;
    for (int64_t j = 0; j < N; ++j) {
      const S* b_row = B + j * K;
      double acc = 0.0;
      for (int64_t k = 0; k < K; ++k)
        acc += static_cast<double>(a_row[k]) * static_cast<double>(b_row[k]);
      S* c = C + i * N + j;
      *c = accumulate ? static_cast<S>(static_cast<double>(*c) + acc)
                      : static_cast<S>(acc);
    }
  }
}

// C[M,N] = A[K,M]^T * B[K,N]
template <class S>
void gemm_tn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C,
             bool accumulate = false) {
  std::vector<double> acc(static_cast<size_t>(M * N), 0.0);
  for (int64_t k = 0; k < K; ++k) {
    const S* a_row = A + k * M;
    const S* b_row = B + k * N;
    for (int64_t i = 0; i < M; ++i) {
      const double a = static_cast<double>(a_row[i]);
      double* acc_row = acc.data() + i * N;
      for (int64_t j = 0; j < N; ++j)
        acc_row[j] += a * static_cast<double>(b_row[j]);
    }
  }
  for (int64_t i = 0; i < M * N; ++i) {
    C[i] = accumulate ? static_cast<S>(static_cast<double>(C[i]) + acc[i])
                      : static_cast<S>(acc[static_cast<size_t>(i)]);
  }
}

}  // namespace emoformer::nn
