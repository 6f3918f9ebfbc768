#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels used by the tensor layer.
//
// Every kernel exists twice: an OpenMP version (dmvae::kernels) used in
// production, and a plain serial version (dmvae::kernels::serial) kept as the
// reference the tests compare against. The parallel versions split work over
// output rows only, so each output element is accumulated by one thread in a
// fixed order and results do not depend on the thread count.
namespace dmvae::kernels {

/// c[m,n] = a[m,k] * b[k,n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);

/// c[k,n] = a[m,k]^T * g[m,n]
void matmul_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);

/// c[m,k] = g[m,n] * b[k,n]^T
void matmul_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k);

/// out[j,i] = in[i,j] for an r x c input.
void transpose(std::span<const double> in, std::span<double> out, std::size_t rows,
               std::size_t cols);

/// Adds a row vector to every row: x[i,j] += row[j].
void add_rowwise(std::span<double> x, std::span<const double> row, std::size_t rows,
                 std::size_t cols);

/// Column sums: out[j] = sum_i x[i,j].
void sum_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
              std::size_t cols);

/// Number of OpenMP threads the parallel kernels will use.
int thread_count();
void set_thread_count(int n);

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t n, std::size_t k);
void add_rowwise(std::span<double> x, std::span<const double> row, std::size_t rows,
                 std::size_t cols);
void sum_rows(std::span<const double> x, std::span<double> out, std::size_t rows,
              std::size_t cols);

}  // namespace serial
}  // namespace dmvae::kernels
