// SPDX-License-Identifier: Apache-2.0
//
// Dense kernels used by the autodiff ops. Every kernel has a serial
// reference and an OpenMP variant with identical per-element summation
// order, so the two are bitwise interchangeable. The dispatcher picks
// the OpenMP path when more than one thread is configured.
#pragma once

#include <cstddef>

namespace remoe::kernels {

// Thread count for the OpenMP kernels. Initialized from REMOE_LAB_THREADS
// when set, otherwise from omp_get_max_threads(). 1 forces the serial path.
int threads();
void set_threads(int n);

// C = A(m x k) * B(k x n)
void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_nn_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// C(m x k) += A(m x n) * B(k x n)^T
void matmul_nt_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t k);
void matmul_nt_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t k);
void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t n, std::size_t k);

// C(k x n) += A(m x k)^T * B(m x n)
void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n);

}  // namespace remoe::kernels
