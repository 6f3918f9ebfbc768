#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dmvae/checks.hpp"
#include "dmvae/kernels.hpp"
#include "dmvae/tensor.hpp"

using namespace dmvae;

TEST(Tensor, MatmulHandArithmetic) {
  const Tensor c = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{1}, {1}}));
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c.to_vector(), (std::vector<double>{3, 7}));
}

TEST(Tensor, Relu) { EXPECT_EQ(relu(Tensor::vector({-1, 0, 2})).to_vector(), (std::vector<double>{0, 0, 2})); }

TEST(Tensor, LogSumExpMatchesNaive) {
  const Tensor v = Tensor::vector({0.0, 0.0});
  EXPECT_NEAR(logsumexp_lastdim(v).item(), std::log(std::exp(0.0) + std::exp(0.0)), 1e-15);
  EXPECT_NEAR(logsumexp_lastdim(v).item(), 0.6931471805599453, 1e-12);
  // Stable far from zero, where the naive sum overflows.
  EXPECT_NEAR(logsumexp_lastdim(Tensor::vector({1000.0, 1000.0})).item(), 1000.0 + std::log(2.0), 1e-9);
}

TEST(Tensor, BroadcastShapes) {
  const Tensor a({3, 1}, {1, 2, 3});
  const Tensor b({1, 2}, {10, 20});
  const Tensor c = a + b;
  EXPECT_EQ(c.shape(), (Shape{3, 2}));
  EXPECT_EQ(c.to_vector(), (std::vector<double>{11, 21, 12, 22, 13, 23}));
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
}

TEST(Tensor, LogStrictRejectsNonPositive) {
  EXPECT_THROW(log_strict(Tensor::vector({1.0, 0.0})), DomainError);
  EXPECT_NEAR(log(Tensor::vector({0.0}))[0], std::log(kLogFloor), 1e-12);
}

TEST(Tensor, TransposeAndReshape) {
  const Tensor t = transpose(Tensor::matrix({{1, 2, 3}, {4, 5, 6}}));
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(t.to_vector(), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_THROW(reshape(t, {4, 2}), ShapeError);
}

TEST(Autodiff, SumOfSquares) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  const Gradients g = tape.backward(sum(square(x)));
  EXPECT_EQ(g.of(x).to_vector(), (std::vector<double>{2, 4}));
}

TEST(Autodiff, SigmoidAtZero) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::scalar(0.0));
  EXPECT_DOUBLE_EQ(tape.backward(sigmoid(x)).of(x).item(), 0.25);
}

TEST(Autodiff, UnusedInputGetsZeroGradient) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  const Tensor y = tape.watch(Tensor::vector({3}));
  const Gradients g = tape.backward(sum(x));
  EXPECT_FALSE(g.reached(y));
  EXPECT_EQ(g.of(y).to_vector(), (std::vector<double>{0}));
}

TEST(Autodiff, FanOutAccumulates) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::vector({3}));
  EXPECT_DOUBLE_EQ(tape.backward(sum(x * x + x)).of(x).item(), 7.0);
}

TEST(Autodiff, BackwardNeedsScalar) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x * 2.0), TapeError);
}

TEST(Autodiff, NoGradScopeRecordsNothing) {
  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::vector({1, 2}));
  const auto before = tape.size();
  {
    NoGradScope off;
    const Tensor y = x * x;
    EXPECT_FALSE(y.tracked());
  }
  EXPECT_EQ(tape.size(), before);
}

// A loss mixing many ops, against central differences with step 1e-5.
TEST(Autodiff, CompositeLossMatchesFiniteDifferences) {
  const checks::ScalarFn f = [](std::span<const Tensor> in) {
    const Tensor h = sigmoid(matmul(in[0], in[1]) + in[2]);
    const Tensor s = softmax_lastdim(h * 3.0);
    const Tensor r = logsumexp_lastdim(exp(h) - s) + max_lastdim(square(h));
    return mean(r) + sum(log(s + 0.1)) / Tensor::scalar(7.0);
  };
  std::mt19937_64 engine(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto rnd = [&](Shape s) {
    std::vector<double> v(numel_of(s));
    for (auto& x : v) x = u(engine);
    return Tensor(std::move(s), std::move(v));
  };
  EXPECT_LT(checks::gradient_error(f, {rnd({3, 4}), rnd({4, 5}), rnd({5})}, 1e-5), 1e-4);
}

TEST(Kernels, ParallelMatchesSerial) {
  std::mt19937_64 engine(9);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto rnd = [&](std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(engine);
    return v;
  };
  // Shapes cover full and partial register tiles, several depth panels and
  // several column panels.
  for (const auto& [m, k, n] : {std::tuple{1, 1, 1}, {7, 13, 5}, {64, 33, 17}, {200, 96, 40}, {20, 600, 300},
                                {12, 520, 136}}) {
    auto a = rnd(m * k);
    const auto b = rnd(k * n), g = rnd(m * n), bt = rnd(k * n);
    // Zero runs, as in images and ReLU outputs.
    for (std::size_t i = 0; i < a.size(); i += 3) a[i] = 0.0;
    for (std::size_t p = 0; p < static_cast<std::size_t>(k); p += 5)
      for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) a[i * k + p] = 0.0;
    std::vector<double> c1(m * n), c2(m * n), t1(k * n), t2(k * n), n1(m * k), n2(m * k);
    kernels::matmul(a, b, c1, m, k, n);
    kernels::serial::matmul(a, b, c2, m, k, n);
    kernels::matmul_tn(a, g, t1, m, k, n);
    kernels::serial::matmul_tn(a, g, t2, m, k, n);
    kernels::matmul_nt(g, bt, n1, m, n, k);
    kernels::serial::matmul_nt(g, bt, n2, m, n, k);
    for (std::size_t i = 0; i < c1.size(); ++i) EXPECT_NEAR(c1[i], c2[i], 1e-12);
    for (std::size_t i = 0; i < t1.size(); ++i) EXPECT_NEAR(t1[i], t2[i], 1e-12);
    for (std::size_t i = 0; i < n1.size(); ++i) EXPECT_NEAR(n1[i], n2[i], 1e-12);
  }
}

TEST(Kernels, ThreadCountDoesNotChangeResults) {
  std::mt19937_64 engine(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t m = 40, k = 300, n = 150;
  std::vector<double> a(m * k), b(k * n);
  for (auto& x : a) x = u(engine);
  for (auto& x : b) x = u(engine);
  const int before = kernels::thread_count();
  std::vector<std::vector<double>> out;
  for (int threads : {1, 3}) {
    kernels::set_thread_count(threads);
    std::vector<double> c(m * n), t(k * n), nt(m * k);
    kernels::matmul(a, b, c, m, k, n);
    kernels::matmul_tn(a, c, t, m, k, n);
    kernels::matmul_nt(c, b, nt, m, n, k);
    c.insert(c.end(), t.begin(), t.end());
    c.insert(c.end(), nt.begin(), nt.end());
    out.push_back(c);
  }
  kernels::set_thread_count(before);
  EXPECT_EQ(out[0], out[1]);
}

TEST(Kernels, RowwiseHelpersMatchSerial) {
  std::vector<double> x(12), y(12), row{1, 2, 3};
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = y[i] = static_cast<double>(i);
  kernels::add_rowwise(x, row, 4, 3);
  kernels::serial::add_rowwise(y, row, 4, 3);
  EXPECT_EQ(x, y);
  std::vector<double> s1(3), s2(3);
  kernels::sum_rows(x, s1, 4, 3);
  kernels::serial::sum_rows(x, s2, 4, 3);
  EXPECT_EQ(s1, s2);
}
