#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dmvae/checks.hpp"
#include "dmvae/model.hpp"
#include "dmvae/objective.hpp"

using namespace dmvae;
using namespace dmvae::objective;

TEST(Recon, Bernoulli) {
  EXPECT_LT(bernoulli_recon_per_sample(Tensor({1, 1}, {1.0}), Tensor({1, 1}, {1.0})).item(), 1e-6);
  EXPECT_NEAR(bernoulli_recon_per_sample(Tensor({1, 1}, {0.5}), Tensor({1, 1}, {0.0})).item(), std::log(2.0), 1e-12);
  EXPECT_NEAR(bernoulli_recon_per_sample(Tensor({1, 1}, {0.9}), Tensor({1, 1}, {1.0})).item(), -std::log(0.9), 1e-12);
  // Sums over pixels, averages over rows.
  const Tensor p({2, 2}, {0.5, 0.5, 0.9, 0.9}), t({2, 2}, {0, 1, 1, 1});
  EXPECT_NEAR(bernoulli_recon_loss(p, t).item(), (2 * std::log(2.0) - 2 * std::log(0.9)) / 2, 1e-12);
}

TEST(Estimator, SingleElementDataset) {
  NoGradScope off;
  const dist::GaussianParams q(Tensor({1, 1}, {0.4}), Tensor({1, 1}, {0.3}));
  const Tensor z({1, 1}, {-0.2});
  EXPECT_NEAR(minibatch_log_qz(z, q, 1).log_qz.item(), dist::gaussian_log_prob(q, z).item(), 1e-14);
}

TEST(Estimator, ExactMixtureAtFullBatch) {
  NoGradScope off;
  std::mt19937_64 engine(3);
  std::normal_distribution<double> nd;
  constexpr std::size_t n = 8;
  std::vector<double> mu(n), lv(n), z(n);
  for (std::size_t i = 0; i < n; ++i) {
    mu[i] = nd(engine);
    lv[i] = 0.5 * nd(engine);
    z[i] = nd(engine);
  }
  const auto q = minibatch_log_qz(Tensor({n, 1}, z), dist::GaussianParams(Tensor({n, 1}, mu), Tensor({n, 1}, lv)), n);
  std::vector<std::vector<double>> mus, lvs;
  for (std::size_t j = 0; j < n; ++j) {
    mus.push_back({mu[j]});
    lvs.push_back({lv[j]});
  }
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(q.log_qz[i], checks::exact_log_mixture({&z[i], 1}, mus, lvs), 1e-10);
}

TEST(Estimator, WeightsDependOnDatasetSize) {
  NoGradScope off;
  // Two posteriors, evaluated at the first mean; N = 10.
  const double a = checks::normal_pdf(0.0, 0.0, 1.0), b = checks::normal_pdf(0.0, 3.0, 1.0);
  const dist::GaussianParams q(Tensor({2, 1}, {0.0, 3.0}), Tensor({2, 1}, {0.0, 0.0}));
  const auto est = minibatch_log_qz(Tensor({2, 1}, {0.0, 3.0}), q, 10);
  EXPECT_NEAR(est.log_qz[0], std::log(a / 10.0 + b * 9.0 / 10.0), 1e-12);
  EXPECT_THROW(minibatch_log_qz(Tensor({2, 1}, {0.0, 3.0}), q, 1), std::invalid_argument);
}

TEST(Estimator, ConcreteFullBatchIsExactMixture) {
  NoGradScope off;
  const Tensor logits({3, 1, 2}, {0.3, -0.1, 1.2, 0.0, -0.7, 0.4});
  const Tensor z({3, 1, 2}, {0.3, 0.7, 0.6, 0.4, 0.1, 0.9});
  const auto q = minibatch_log_qz(dist::SimplexPoint{z}, dist::ConcreteParams(logits, 0.66), 3);
  for (std::size_t i = 0; i < 3; ++i) {
    double mix = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      mix += checks::concrete_density(z.data().subspan(2 * i, 2), logits.data().subspan(2 * j, 2), 0.66) / 3.0;
    EXPECT_NEAR(q.log_qz[i], std::log(mix), 1e-10);
    EXPECT_NEAR(q.log_qz_dims[i], std::log(mix), 1e-10);
  }
}

TEST(Estimator, Telescopes) {
  NoGradScope off;
  std::mt19937_64 engine(8);
  std::normal_distribution<double> nd;
  std::vector<double> mu(12), lv(12), z(12);
  for (std::size_t i = 0; i < 12; ++i) {
    mu[i] = nd(engine);
    lv[i] = 0.3 * nd(engine);
    z[i] = nd(engine);
  }
  const dist::GaussianParams q(Tensor({4, 3}, mu), Tensor({4, 3}, lv));
  const Tensor zt({4, 3}, z);
  const auto t = kl_terms(zt, q, 4);
  const auto prior = dist::GaussianParams(Tensor::zeros({4, 3}), Tensor::zeros({4, 3}));
  const Tensor plain = dist::gaussian_log_prob(q, zt) - dist::gaussian_log_prob(prior, zt);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(t.mi[i] + t.tc[i] + t.fp[i], plain[i], 1e-10);
}

TEST(Suites, Estimators) {
  const auto r = checks::estimator_suite();
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Suites, Gradients) {
  const auto r = checks::gradient_suite();
  EXPECT_TRUE(r.passed) << r.detail;
}

// ---------------------------------------------------------------------------
// The full loss against a straight-line scalar recomputation.

namespace {

struct Mat {
  std::size_t rows, cols;
  std::vector<double> v;
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

Mat mat_of(const Tensor& t) {
  return t.rank() == 2 ? Mat{t.dim(0), t.dim(1), t.to_vector()} : Mat{1, t.dim(0), t.to_vector()};
}

using Vec = std::vector<double>;

Vec dense(const Vec& x, const Mat& w, const Mat& b, bool relu_out) {
  Vec out(w.cols);
  for (std::size_t j = 0; j < w.cols; ++j) {
    double s = b(0, j);
    for (std::size_t i = 0; i < w.rows; ++i) s += x[i] * w(i, j);
    out[j] = relu_out ? std::max(s, 0.0) : s;
  }
  return out;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double log_normal(double z, double mu, double lv) {
  return -0.5 * (std::log(2.0 * std::numbers::pi) + lv + (z - mu) * (z - mu) / std::exp(lv));
}

double bce(const Vec& p, const Vec& t) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double q = std::clamp(p[k], 1e-7, 1.0 - 1e-7);
    s -= t[k] * std::log(q) + (1.0 - t[k]) * std::log(1.0 - q);
  }
  return s;
}

double log_concrete(const Vec& z, const Vec& logits, double t) {
  return std::log(checks::concrete_density(z, logits, t));
}

Vec relaxed(const Vec& logits, const Vec& u, double t) {
  Vec e(logits.size());
  double s = 0.0;
  for (std::size_t k = 0; k < e.size(); ++k) {
    e[k] = std::exp((logits[k] - std::log(-std::log(u[k]))) / t);
    s += e[k];
  }
  for (auto& x : e) x /= s;
  return e;
}

struct Net {
  Mat w[16];
  Vec dec_image(const Vec& zp, const Vec& zs) const {
    Vec in = zp;
    in.insert(in.end(), zs.begin(), zs.end());
    Vec o = dense(dense(in, w[8], w[9], true), w[10], w[11], false);
    for (auto& x : o) x = sigm(x);
    return o;
  }
  Vec dec_label(const Vec& zs) const {
    Vec o = dense(dense(zs, w[12], w[13], true), w[14], w[15], false);
    for (auto& x : o) x = sigm(x);
    return o;
  }
};

}  // namespace

TEST(Loss, MatchesScalarRecomputation) {
  ModelConfig cfg;
  cfg.image_dim = 3;
  cfg.label_classes = 2;
  cfg.private_dim = 2;
  cfg.shared_dim = 2;
  cfg.hidden_dim = 2;
  Engine init(21);
  const Model model(cfg, init);
  Net net;
  for (std::size_t i = 0; i < 16; ++i) net.w[i] = mat_of(model.parameters()[i]);

  const std::vector<Vec> x{{0.2, 0.9, 0.5}, {0.7, 0.1, 1.0}};
  const std::vector<Vec> y{{1, 0}, {0, 1}};
  const Vec normals{0.3, -1.1, 0.8, 0.25, -0.4, 1.3, 0.05, -0.6};
  const Vec uniforms{0.31, 0.72, 0.55, 0.18, 0.9, 0.42, 0.27, 0.63, 0.12, 0.81, 0.46, 0.35};
  LossWeights w;
  w.lambda_label = 7.0;
  w.beta_tc_private = 3.0;
  w.kl_weight = 0.8;
  w.dataset_size = 5;
  const double T = cfg.temperature, n_data = 5.0, m = 2.0;

  for (const bool paired : {true, false}) {
    const data::BimodalBatch batch{Tensor({2, 3}, {0.2, 0.9, 0.5, 0.7, 0.1, 1.0}), Tensor({2, 2}, {1, 0, 0, 1}),
                                   {paired, paired}};
    BufferNoise noise(normals, uniforms);
    const auto got = dmvae_loss(model.forward_train(batch, noise), batch, w);

    // Image encoder, private sample, image shared sample.
    Vec mu[2], lv[2], zp[2], li[2], zi[2];
    std::size_t ni = 0, ui = 0;
    for (int i = 0; i < 2; ++i) {
      const Vec o = dense(dense(x[i], net.w[0], net.w[1], true), net.w[2], net.w[3], false);
      mu[i] = {o[0], o[1]};
      lv[i] = {o[2], o[3]};
      li[i] = {o[4], o[5]};
    }
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k) zp[i].push_back(mu[i][k] + std::exp(lv[i][k] / 2) * normals[ni++]);
    for (int i = 0; i < 2; ++i) {
      zi[i] = relaxed(li[i], {uniforms[ui], uniforms[ui + 1]}, T);
      ui += 2;
    }

    // Private KL, minibatch-weighted with N = 5, M = 2.
    double mi[2], tc[2], fp[2];
    const auto lw = [&](int i, int j) {
      return i == j ? std::log(1.0 / n_data) : std::log((n_data - 1) / (n_data * (m - 1)));
    };
    for (int i = 0; i < 2; ++i) {
      double cond = 0.0, prior = 0.0, joint_terms[2], dims = 0.0;
      for (int k = 0; k < 2; ++k) {
        cond += log_normal(zp[i][k], mu[i][k], lv[i][k]);
        prior += log_normal(zp[i][k], 0.0, 0.0);
      }
      for (int j = 0; j < 2; ++j) {
        joint_terms[j] = lw(i, j);
        for (int k = 0; k < 2; ++k) joint_terms[j] += log_normal(zp[i][k], mu[j][k], lv[j][k]);
      }
      const double log_qz = std::log(std::exp(joint_terms[0]) + std::exp(joint_terms[1]));
      for (int k = 0; k < 2; ++k)
        dims += std::log(std::exp(lw(i, 0) + log_normal(zp[i][k], mu[0][k], lv[0][k])) +
                         std::exp(lw(i, 1) + log_normal(zp[i][k], mu[1][k], lv[1][k])));
      mi[i] = cond - log_qz;
      tc[i] = log_qz - dims;
      fp[i] = dims - prior;
    }
    const double kl_p = w.kl_weight * ((mi[0] + mi[1]) / 2 + 3.0 * (tc[0] + tc[1]) / 2 + (fp[0] + fp[1]) / 2);
    const auto ks = [&](const Vec& z, const Vec& logits) {
      return log_concrete(z, logits, T) - log_concrete(z, {0, 0}, T);
    };
    const double ks_img = w.kl_weight * (ks(zi[0], li[0]) + ks(zi[1], li[1])) / 2;
    const double r_img = (bce(net.dec_image(zp[0], zi[0]), x[0]) + bce(net.dec_image(zp[1], zi[1]), x[1])) / 2;
    double expect = r_img + kl_p + ks_img;

    if (paired) {
      Vec ll[2], zl[2], lj[2], zj[2], zc[2];
      for (int i = 0; i < 2; ++i) ll[i] = dense(dense(y[i], net.w[4], net.w[5], true), net.w[6], net.w[7], false);
      for (int i = 0; i < 2; ++i) {
        zl[i] = relaxed(ll[i], {uniforms[ui], uniforms[ui + 1]}, T);
        ui += 2;
      }
      for (int i = 0; i < 2; ++i) lj[i] = {li[i][0] + ll[i][0], li[i][1] + ll[i][1]};
      for (int i = 0; i < 2; ++i) {
        zj[i] = relaxed(lj[i], {uniforms[ui], uniforms[ui + 1]}, T);
        ui += 2;
      }
      for (int i = 0; i < 2; ++i) zc[i] = {normals[ni], normals[ni + 1]}, ni += 2;
      const auto avg = [](auto f) { return (f(0) + f(1)) / 2; };
      const double ks_lab = w.kl_weight * avg([&](int i) { return ks(zl[i], ll[i]); });
      const double ks_joint = w.kl_weight * avg([&](int i) { return ks(zj[i], lj[i]); });
      const double lab_self = avg([&](int i) { return bce(net.dec_label(zl[i]), y[i]); });
      const double img_joint = avg([&](int i) { return bce(net.dec_image(zp[i], zj[i]), x[i]); });
      const double lab_joint = avg([&](int i) { return bce(net.dec_label(zj[i]), y[i]); });
      const double img_cross = avg([&](int i) { return bce(net.dec_image(zc[i], zl[i]), x[i]); });
      const double lab_cross = avg([&](int i) { return bce(net.dec_label(zi[i]), y[i]); });
      expect += 7.0 * lab_self + ks_lab;
      expect += img_joint + kl_p + ks_joint;
      expect += 7.0 * lab_joint + ks_joint;
      expect += img_cross + kl_p + ks_lab;
      expect += 7.0 * lab_cross + ks_img;
      EXPECT_NEAR(got.terms.recon_label_cross, lab_cross, 1e-8);
    } else {
      EXPECT_EQ(got.terms.recon_label_self, 0.0);
      EXPECT_EQ(got.terms.recon_image_joint, 0.0);
      EXPECT_EQ(got.terms.recon_image_cross, 0.0);
    }
    EXPECT_NEAR(got.total.item(), expect, 1e-8) << "paired=" << paired;
    EXPECT_NEAR(got.terms.recon_image_self, r_img, 1e-8);
  }
}

TEST(Loss, ZeroWeightsGiveZero) {
  ModelConfig cfg;
  cfg.image_dim = 3;
  cfg.label_classes = 2;
  cfg.shared_dim = 2;
  cfg.hidden_dim = 4;
  Engine init(2);
  const Model model(cfg, init);
  const data::BimodalBatch batch{Tensor({2, 3}, {0.2, 0.9, 0.5, 0.7, 0.1, 1.0}), Tensor({2, 2}, {1, 0, 0, 1}),
                                 {true, false}};
  Engine g1(1), g2(2);
  EngineNoise noise(g1, g2);
  LossWeights w;
  w.lambda_image = w.lambda_label = w.kl_weight = w.beta_tc_private = 0.0;
  w.dataset_size = 2;
  EXPECT_EQ(dmvae_loss(model.forward_train(batch, noise), batch, w).total.item(), 0.0);
}

TEST(Loss, ValidatesWeights) {
  LossWeights w;
  w.dataset_size = 10;
  EXPECT_NO_THROW(w.validate(10));
  EXPECT_THROW(w.validate(11), std::invalid_argument);
  w.lambda_label = -1.0;
  EXPECT_THROW(w.validate(2), std::invalid_argument);
}
