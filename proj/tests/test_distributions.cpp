#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dmvae/checks.hpp"
#include "dmvae/distributions.hpp"

using namespace dmvae;
using namespace dmvae::dist;

namespace {

GaussianParams gauss(std::vector<double> mu, std::vector<double> logvar) {
  const std::size_t d = mu.size();
  return GaussianParams(Tensor({1, d}, std::move(mu)), Tensor({1, d}, std::move(logvar)));
}

ConcreteParams concrete(std::vector<double> logits, double t) {
  const std::size_t n = logits.size();
  return ConcreteParams(Tensor({1, n}, std::move(logits)), t);
}

}  // namespace

TEST(Gaussian, Sample) {
  EXPECT_EQ(gaussian_sample(gauss({0, 0}, {0, 0}), Tensor({1, 2}, {0, 0})).to_vector(), (std::vector<double>{0, 0}));
  EXPECT_EQ(gaussian_sample(gauss({1, 2}, {0, 0}), Tensor({1, 2}, {1, -1})).to_vector(), (std::vector<double>{2, 1}));
  EXPECT_NEAR(gaussian_sample(gauss({0}, {std::log(4.0)}), Tensor({1, 1}, {0.5})).item(), 1.0, 1e-15);
}

TEST(Gaussian, KlAgainstMonteCarlo) {
  EXPECT_DOUBLE_EQ(gaussian_kl_std(gauss({0}, {0})).item(), 0.0);
  EXPECT_NEAR(gaussian_kl_std(gauss({1}, {0})).item(), 0.5, 1e-15);
  EXPECT_NEAR(gaussian_kl_std(gauss({0}, {std::log(2.0)})).item(), 0.5 * (2.0 - 1.0 - std::log(2.0)), 1e-15);

  // Monte-Carlo log-ratio with 1e6 draws, written in plain scalar code.
  std::mt19937_64 engine(1);
  std::normal_distribution<double> nd;
  for (const auto& [mu, var] : {std::pair{1.0, 1.0}, {0.0, 2.0}}) {
    double acc = 0.0;
    constexpr int n = 1000000;
    for (int i = 0; i < n; ++i) {
      const double z = mu + std::sqrt(var) * nd(engine);
      acc += std::log(checks::normal_pdf(z, mu, var)) - std::log(checks::normal_pdf(z, 0.0, 1.0));
    }
    EXPECT_NEAR(gaussian_kl_std(gauss({mu}, {std::log(var)})).item(), acc / n, 1e-2);
  }
}

TEST(Gaussian, LogProb) {
  EXPECT_NEAR(gaussian_log_prob(gauss({0}, {0}), Tensor({1, 1}, {0})).item(), -0.9189385332046727, 1e-12);
  EXPECT_NEAR(gaussian_log_prob(gauss({0}, {0}), Tensor({1, 1}, {1})).item(), -1.4189385332046727, 1e-12);
  // Integrates to one on [-8, 8] with step 1e-3.
  const std::size_t n = 16001;
  std::vector<double> z(n), mu(n, 0.3), lv(n, std::log(0.7));
  for (std::size_t i = 0; i < n; ++i) z[i] = -8.0 + 1e-3 * static_cast<double>(i);
  const Tensor lp = gaussian_log_prob(GaussianParams(Tensor({n, 1}, mu), Tensor({n, 1}, lv)), Tensor({n, 1}, z));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += (i == 0 || i == n - 1 ? 0.5 : 1.0) * std::exp(lp[i]) * 1e-3;
  EXPECT_NEAR(total, 1.0, 1e-4);
}

TEST(Gaussian, LogvarIsClamped) {
  const GaussianParams p = gauss({0, 0}, {-50, 50});
  EXPECT_EQ(p.logvar().to_vector(), (std::vector<double>{kLogVarMin, kLogVarMax}));
}

TEST(Gaussian, ProductOfExperts) {
  const std::vector<GaussianParams> same{gauss({0}, {0}), gauss({0}, {0})};
  const auto a = poe_gaussian(same, false);
  EXPECT_NEAR(a.mu().item(), 0.0, 1e-15);
  EXPECT_NEAR(std::exp(a.logvar().item()), 0.5, 1e-15);

  const std::vector<GaussianParams> two{gauss({2}, {0}), gauss({0}, {0})};
  const auto b = poe_gaussian(two, true);
  EXPECT_NEAR(b.mu().item(), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(std::exp(b.logvar().item()), 1.0 / 3.0, 1e-15);

  const std::vector<GaussianParams> one{gauss({1}, {0})};
  const auto c = poe_gaussian(one, true);
  EXPECT_NEAR(c.mu().item(), 0.5, 1e-15);
  EXPECT_NEAR(std::exp(c.logvar().item()), 0.5, 1e-15);

  // Grid product of the three densities (prior included), renormalized.
  const double lo = -6.0, dx = 1e-3;
  double z = 0.0, worst = 0.0;
  std::vector<double> prod;
  for (int i = 0; i <= 12000; ++i) {
    const double x = lo + dx * i;
    prod.push_back(checks::normal_pdf(x, 2.0, 1.0) * checks::normal_pdf(x, 0.0, 1.0) *
                   checks::normal_pdf(x, 0.0, 1.0));
    z += prod.back() * dx;
  }
  for (int i = 0; i <= 12000; ++i)
    worst = std::max(worst, std::abs(prod[i] / z - checks::normal_pdf(lo + dx * i, 2.0 / 3.0, 1.0 / 3.0)));
  EXPECT_LT(worst, 1e-6);
}

TEST(Gumbel, Transform) {
  EXPECT_NEAR(gumbel_from_uniform(Tensor::vector({std::exp(-1.0)})).item(), 0.0, 1e-15);
  EXPECT_NEAR(gumbel_from_uniform(Tensor::vector({0.5})).item(), -std::log(std::log(2.0)), 1e-15);
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(Tensor::vector({0.0, 1.0}))[0]));
  EXPECT_TRUE(std::isfinite(gumbel_from_uniform(Tensor::vector({0.0, 1.0}))[1]));
}

TEST(Gumbel, MeanIsEulerMascheroni) {
  std::mt19937_64 engine(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(1000000);
  for (auto& x : v) x = u(engine);
  const Tensor g = gumbel_from_uniform(Tensor({v.size()}, v));
  double m = 0.0;
  for (double x : g.data()) m += x;
  EXPECT_NEAR(m / static_cast<double>(v.size()), std::numbers::egamma, 5e-3);
}

TEST(Concrete, Sample) {
  const Tensor zero({1, 2}, {0, 0});
  for (double t : {0.1, 0.66, 3.0}) {
    const auto s = concrete_sample(concrete({0, 0}, t), zero).coords;
    EXPECT_NEAR(s[0], 0.5, 1e-15);
    EXPECT_NEAR(s[1], 0.5, 1e-15);
  }
  const auto a = concrete_sample(concrete({std::log(2.0), 0}, 1.0), zero).coords;
  EXPECT_NEAR(a[0], 2.0 / 3.0, 1e-15);
  const auto b = concrete_sample(concrete({std::log(2.0), 0}, 0.5), zero).coords;
  EXPECT_NEAR(b[0], 0.8, 1e-15);
  EXPECT_NEAR(b[1], 0.2, 1e-15);
}

TEST(Concrete, LogDensity) {
  const auto u = concrete({0, 0}, 1.0);
  EXPECT_NEAR(concrete_log_density(u, SimplexPoint{Tensor({1, 2}, {0.5, 0.5})}).item(), 0.0, 1e-12);
  for (double a : {0.1, 0.37, 0.8}) {
    const auto p = concrete({0.2, 0.2}, 0.66);
    EXPECT_NEAR(concrete_log_density(p, SimplexPoint{Tensor({1, 2}, {a, 1 - a})}).item(),
                concrete_log_density(p, SimplexPoint{Tensor({1, 2}, {1 - a, a})}).item(), 1e-10);
  }
  // Agrees with the density written out in scalar code, n = 3.
  const std::vector<double> logits{0.4, -1.0, 0.9}, z{0.2, 0.5, 0.3};
  EXPECT_NEAR(concrete_log_density(concrete(logits, 0.66), SimplexPoint{Tensor({1, 3}, z)}).item(),
              std::log(checks::concrete_density(z, logits, 0.66)), 1e-10);
}

TEST(Concrete, DensityIntegratesToOne) {
  for (double t : {0.66, 1.0}) EXPECT_NEAR(checks::integrate_binary_concrete(0.3, -0.4, t), 1.0, 2e-2);
}

TEST(Concrete, ProductOfExperts) {
  const std::vector<ConcreteParams> e{concrete({std::log(4.0), std::log(3.0)}, 0.66),
                                      concrete({std::log(2.0), std::log(3.0)}, 0.66)};
  const Tensor p = poe_concrete(e).probs();
  EXPECT_NEAR(p[0], 8.0 / 17.0, 1e-15);
  EXPECT_NEAR(p[1], 9.0 / 17.0, 1e-15);

  const std::vector<ConcreteParams> with_uniform{concrete({0, 0}, 0.66),
                                                 concrete({std::log(0.7), std::log(0.3)}, 0.66)};
  EXPECT_NEAR(poe_concrete(with_uniform).probs()[0], 0.7, 1e-15);

  const std::vector<ConcreteParams> twice{concrete({std::log(0.8), std::log(0.2)}, 0.66),
                                          concrete({std::log(0.8), std::log(0.2)}, 0.66)};
  const Tensor q = poe_concrete(twice).probs();
  EXPECT_NEAR(q[0], 16.0 / 17.0, 1e-15);
  EXPECT_NEAR(q[1], 1.0 / 17.0, 1e-15);
  EXPECT_DOUBLE_EQ(poe_concrete(twice).temperature(), 0.66);
}

TEST(Suites, Distributions) {
  const auto r = checks::distribution_suite();
  EXPECT_TRUE(r.passed) << r.detail;
}
