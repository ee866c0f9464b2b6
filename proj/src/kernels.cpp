// SPDX-License-Identifier: Apache-2.0

#include "remoe/kernels.hpp"

#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace remoe::kernels {

namespace {

int default_threads() {
    if (const char* env = std::getenv("REMOE_LAB_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) return n;
    }
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

std::atomic<int> g_threads{0};

int resolve_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = default_threads();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

}  // namespace

int threads() { return resolve_threads(); }

void set_threads(int n) { g_threads.store(n > 0 ? n : 1, std::memory_order_relaxed); }

// The OpenMP variants parallelize over rows of C only; each output element
// is accumulated by one thread in the same loop order as the serial code,
// so serial and parallel results are bitwise identical.

void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nn_omp(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_nn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    if (resolve_threads() > 1 && m > 1) {
        matmul_nn_omp(a, b, c, m, k, n);
    } else {
        matmul_nn_serial(a, b, c, m, k, n);
    }
}

void matmul_nt_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* bj = b + j * n;
            double s = 0.0;
            for (std::size_t p = 0; p < n; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

void matmul_nt_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t n, std::size_t k) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
    for (long long ii = 0; ii < static_cast<long long>(m); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* bj = b + j * n;
            double s = 0.0;
            for (std::size_t p = 0; p < n; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

void matmul_nt_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t n, std::size_t k) {
    if (resolve_threads() > 1 && m > 1) {
        matmul_nt_acc_omp(a, b, c, m, n, k);
    } else {
        matmul_nt_acc_serial(a, b, c, m, n, k);
    }
}

void matmul_tn_acc_serial(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k; ++i) {
        double* ci = c + i * n;
        for (std::size_t p = 0; p < m; ++p) {
            const double aip = a[p * k + i];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_tn_acc_omp(const double* a, const double* b, double* c,
                       std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(resolve_threads())
#endif
    for (long long ii = 0; ii < static_cast<long long>(k); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
        double* ci = c + i * n;
        for (std::size_t p = 0; p < m; ++p) {
            const double aip = a[p * k + i];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c,
                   std::size_t m, std::size_t k, std::size_t n) {
    if (resolve_threads() > 1 && k > 1) {
        matmul_tn_acc_omp(a, b, c, m, k, n);
    } else {
        matmul_tn_acc_serial(a, b, c, m, k, n);
    }
}

}  // namespace remoe::kernels
