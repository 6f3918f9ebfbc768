// Serial reference kernels against their OpenMP versions, at the shapes of
// the MNIST network (batch 200, 784 -> 256 -> 20).

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dmvae/kernels.hpp"

namespace {

namespace k = dmvae::kernels;

std::vector<double> random_buffer(std::size_t n, unsigned seed) {
  std::mt19937_64 engine(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(engine);
  return v;
}

template <bool Parallel>
void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_buffer(m * kk, 1), b = random_buffer(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul(a, b, c, m, kk, n);
    else
      k::serial::matmul(a, b, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

template <bool Parallel>
void BM_MatmulTN(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = random_buffer(m * kk, 3), g = random_buffer(m * n, 4);
  std::vector<double> c(kk * n);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul_tn(a, g, c, m, kk, n);
    else
      k::serial::matmul_tn(a, g, c, m, kk, n);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

template <bool Parallel>
void BM_MatmulNT(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  const auto g = random_buffer(m * n, 5), b = random_buffer(kk * n, 6);
  std::vector<double> c(m * kk);
  for (auto _ : state) {
    if constexpr (Parallel)
      k::matmul_nt(g, b, c, m, n, kk);
    else
      k::serial::matmul_nt(g, b, c, m, n, kk);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({200, 784, 256})->Args({200, 256, 784})->Args({200, 256, 20})->Args({64, 64, 64});
}

}  // namespace

BENCHMARK(BM_Matmul<false>)->Apply(shapes);
BENCHMARK(BM_Matmul<true>)->Apply(shapes);
BENCHMARK(BM_MatmulTN<false>)->Apply(shapes);
BENCHMARK(BM_MatmulTN<true>)->Apply(shapes);
BENCHMARK(BM_MatmulNT<false>)->Apply(shapes);
BENCHMARK(BM_MatmulNT<true>)->Apply(shapes);

BENCHMARK_MAIN();
