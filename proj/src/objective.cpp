#include "dmvae/objective.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

namespace dmvae::objective {
namespace {

// log w_ij for the weighted-minibatch estimator, as an [M, M] matrix.
Tensor log_mixture_weights(std::size_t m, std::size_t n) {
  if (m == 0) throw std::invalid_argument("minibatch_log_qz: empty batch");
  if (n < m)
    throw std::invalid_argument("minibatch_log_qz: dataset size " + std::to_string(n) + " below batch size " +
                                std::to_string(m));
  const double nn = static_cast<double>(n);
  const double self = -std::log(nn);
  const double other = m > 1 ? std::log((nn - 1.0) / (nn * static_cast<double>(m - 1))) : 0.0;
  std::vector<double> w(m * m, other);
  for (std::size_t i = 0; i < m; ++i) w[i * m + i] = self;
  return Tensor({m, m}, std::move(w));
}

// Turns pairwise densities L[i, j, k] = log q(z_ik | x_j) into both estimates.
MarginalLogDensity reduce_pairwise(const Tensor& pairwise, std::size_t m, std::size_t n) {
  const auto d = pairwise.dim(2);
  const Tensor logw = log_mixture_weights(m, n);
  const Tensor joint = reshape(sum_lastdim(pairwise), {m, m}) + logw;
  const Tensor per_dim = transpose(pairwise) + reshape(logw, {m, 1, m});
  return {logsumexp_lastdim(joint), reshape(logsumexp_lastdim(per_dim), {m, d})};
}

Tensor sum_groups(const Tensor& per_group) {
  const auto b = per_group.dim(0);
  return sum_lastdim(reshape(per_group, {b, per_group.numel() / b}));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                     " differ");
}

struct PerSampleKl {
  Tensor weighted;  // [M, 1], as it enters the loss (before kl_weight)
  Tensor raw;       // [M, 1], unweighted
};

PerSampleKl shared_kl(const SharedParams& fused, const Tensor& sample, const Tensor& log_sample,
                      const LossWeights& w) {
  if (const auto* g = std::get_if<dist::GaussianParams>(&fused)) {
    if (w.beta_tc_shared > 0.0) {
      const KlTerms t = kl_terms(sample, *g, w.dataset_size);
      return {t.mi + w.beta_tc_shared * t.tc + t.fp, t.mi + t.tc + t.fp};
    }
    const Tensor kl = dist::gaussian_kl_std(*g);
    return {kl, kl};
  }
  const auto& c = std::get<dist::ConcreteParams>(fused);
  const dist::SimplexPoint z{reshape(sample, c.logits().shape()), reshape(log_sample, c.logits().shape())};
  const Tensor kl = sum_groups(dist::concrete_log_density(c, z)) -
                    sum_groups(dist::concrete_log_density(dist::uniform_concrete(c), z));
  return {kl, kl};
}

double value(const Tensor& t) { return t.item(); }

}  // namespace

void LossWeights::validate(std::size_t batch_size) const {
  if (lambda_image < 0.0 || lambda_label < 0.0 || kl_weight < 0.0 || beta_tc_private < 0.0 ||
      beta_tc_shared < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
  if (dataset_size == 0 || dataset_size < batch_size)
    throw std::invalid_argument("dataset_size " + std::to_string(dataset_size) + " must be >= batch size " +
                                std::to_string(batch_size));
}

MarginalLogDensity minibatch_log_qz(const Tensor& z, const dist::GaussianParams& posteriors,
                                    std::size_t dataset_size) {
  check_same_shape(z, posteriors.mu(), "minibatch_log_qz");
  if (z.rank() != 2) throw ShapeError("minibatch_log_qz: expected [M, D] samples, got " + to_string(z.shape()));
  const auto m = z.dim(0);
  const auto d = z.dim(1);
  const Tensor logw = log_mixture_weights(m, dataset_size);
  const Tensor& mu = posteriors.mu();
  const Tensor& lv = posteriors.logvar();

  // Fused evaluation of the pairwise densities and both log-sum-exps:
  // out[i, k] = lse_j(L[i, j, k] + log w_ij) for k < D and
  // out[i, D] = lse_j(sum_k L[i, j, k] + log w_ij), where
  // L[i, j, k] = log N(z_ik; mu_jk, exp(lv_jk)).
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const auto pz = z.data(), pmu = mu.data(), plv = lv.data(), pw = logw.data();
  std::vector<double> pairwise(m * m * d);  // [i, j, k]
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = pz[i * d + k] - pmu[j * d + k];
        pairwise[(i * m + j) * d + k] = -0.5 * (plv[j * d + k] + log2pi + diff * diff * std::exp(-plv[j * d + k]));
      }
  // Softmax weights over j, kept for the backward pass.
  auto joint_w = std::make_shared<std::vector<double>>(m * m);
  auto dim_w = std::make_shared<std::vector<double>>(m * m * d);
  std::vector<double> out(m * (d + 1));
  std::vector<double> col(m);
  for (std::size_t i = 0; i < m; ++i) {
    const auto lse_into = [&](double* weights, std::size_t stride) {
      const double mx = *std::max_element(col.begin(), col.end());
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) sum += std::exp(col[j] - mx);
      const double lse = mx + std::log(sum);
      for (std::size_t j = 0; j < m; ++j) weights[j * stride] = std::exp(col[j] - lse);
      return lse;
    };
    for (std::size_t j = 0; j < m; ++j) {
      double total = pw[i * m + j];
      for (std::size_t k = 0; k < d; ++k) total += pairwise[(i * m + j) * d + k];
      col[j] = total;
    }
    out[i * (d + 1) + d] = lse_into(joint_w->data() + i * m, 1);
    for (std::size_t k = 0; k < d; ++k) {
      for (std::size_t j = 0; j < m; ++j) col[j] = pairwise[(i * m + j) * d + k] + pw[i * m + j];
      out[i * (d + 1) + k] = lse_into(dim_w->data() + i * m * d + k, d);
    }
  }

  Tensor fused({m, d + 1}, std::move(out));
  if (Tape* tape = active_tape()) {
    fused = tape->record(
        OpKind::custom, {&z, &mu, &lv}, fused,
        [z, mu, lv, joint_w, dim_w, m, d](std::span<const double> g, std::vector<std::vector<double>>& gin) {
          const auto pz = z.data(), pmu = mu.data(), plv = lv.data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
              const double a = g[i * (d + 1) + d] * (*joint_w)[i * m + j];
              for (std::size_t k = 0; k < d; ++k) {
                const double gl = a + g[i * (d + 1) + k] * (*dim_w)[(i * m + j) * d + k];
                const double prec = std::exp(-plv[j * d + k]);
                const double diff = pz[i * d + k] - pmu[j * d + k];
                if (!gin[0].empty()) gin[0][i * d + k] -= gl * diff * prec;
                if (!gin[1].empty()) gin[1][j * d + k] += gl * diff * prec;
                if (!gin[2].empty()) gin[2][j * d + k] += gl * 0.5 * (diff * diff * prec - 1.0);
              }
            }
        });
  }
  return {slice(fused, d, d + 1), slice(fused, 0, d)};
}

MarginalLogDensity minibatch_log_qz(const dist::SimplexPoint& z, const dist::ConcreteParams& posteriors,
                                    std::size_t dataset_size) {
  check_same_shape(z.coords, posteriors.logits(), "minibatch_log_qz");
  if (z.coords.rank() != 3)
    throw ShapeError("minibatch_log_qz: expected [M, G, C] samples, got " + to_string(z.coords.shape()));
  const auto m = z.coords.dim(0);
  const auto g = z.coords.dim(1);
  const auto c = z.coords.dim(2);
  const Tensor zi = broadcast(reshape(z.coords, {m, 1, g, c}), {m, m, g, c});
  const Tensor lj = broadcast(reshape(posteriors.logits(), {1, m, g, c}), {m, m, g, c});
  dist::SimplexPoint point{zi};
  if (z.log_coords) point.log_coords = broadcast(reshape(*z.log_coords, {m, 1, g, c}), {m, m, g, c});
  const Tensor dens = dist::concrete_log_density(dist::ConcreteParams(lj, posteriors.temperature()), point);
  return reduce_pairwise(reshape(dens, {m, m, g}), m, dataset_size);
}

KlTerms kl_terms(const Tensor& z, const dist::GaussianParams& posteriors, std::size_t dataset_size) {
  const MarginalLogDensity q = minibatch_log_qz(z, posteriors, dataset_size);
  const Tensor log_qzx = dist::gaussian_log_prob(posteriors, z);
  const auto prior = dist::GaussianParams(Tensor::zeros(z.shape()), Tensor::zeros(z.shape()));
  const Tensor log_pz = dist::gaussian_log_prob(prior, z);
  const Tensor log_prod = sum_lastdim(q.log_qz_dims);
  return {log_qzx - q.log_qz, q.log_qz - log_prod, log_prod - log_pz};
}

KlDecomposition kl_decompose(const Tensor& z, const dist::GaussianParams& posteriors,
                             std::size_t dataset_size) {
  const KlTerms t = kl_terms(z, posteriors, dataset_size);
  return {mean(t.mi), mean(t.tc), mean(t.fp)};
}

Tensor bernoulli_recon_per_sample(const Tensor& predicted, const Tensor& target) {
  check_same_shape(predicted, target, "bernoulli_recon_loss");
  const Tensor p = clamp(predicted, kProbClamp, 1.0 - kProbClamp);
  return neg(sum_lastdim(target * log(p) + (1.0 - target) * log(1.0 - p)));
}

Tensor bernoulli_recon_loss(const Tensor& predicted, const Tensor& target) {
  return mean(bernoulli_recon_per_sample(predicted, target));
}

LossBreakdown& LossBreakdown::operator+=(const LossBreakdown& o) {
  recon_image_self += o.recon_image_self;
  recon_label_self += o.recon_label_self;
  recon_image_joint += o.recon_image_joint;
  recon_label_joint += o.recon_label_joint;
  recon_image_cross += o.recon_image_cross;
  recon_label_cross += o.recon_label_cross;
  kl_private_mi += o.kl_private_mi;
  kl_private_tc += o.kl_private_tc;
  kl_private_fp += o.kl_private_fp;
  kl_shared += o.kl_shared;
  total += o.total;
  return *this;
}

LossBreakdown LossBreakdown::scaled(double s) const {
  LossBreakdown out = *this;
  for (double* f : {&out.recon_image_self, &out.recon_label_self, &out.recon_image_joint, &out.recon_label_joint,
                    &out.recon_image_cross, &out.recon_label_cross, &out.kl_private_mi, &out.kl_private_tc,
                    &out.kl_private_fp, &out.kl_shared, &out.total})
    *f *= s;
  return out;
}

LossResult dmvae_loss(const LatentBundle& bundle, const data::BimodalBatch& batch, const LossWeights& weights) {
  const auto b = batch.size();
  if (!bundle.private_params || !bundle.fused_image || bundle.recon_image_self.rank() != 2 ||
      bundle.recon_image_self.dim(0) != b)
    throw ShapeError("dmvae_loss: bundle does not cover the batch rows");
  if (bundle.paired_rows != batch.paired_rows())
    throw ShapeError("dmvae_loss: bundle pairing differs from the batch mask");
  weights.validate(b);

  const auto& w = weights;
  LossBreakdown terms;

  // Image self path, every row.
  const Tensor r_img_self = bernoulli_recon_loss(bundle.recon_image_self, batch.images);
  const KlTerms priv = kl_terms(bundle.private_sample, *bundle.private_params, w.dataset_size);
  const auto private_kl = [&](const Tensor& mi, const Tensor& tc, const Tensor& fp) {
    const Tensor mi_m = mean(mi), tc_m = mean(tc), fp_m = mean(fp);
    terms.kl_private_mi += value(mi_m);
    terms.kl_private_tc += value(tc_m);
    terms.kl_private_fp += value(fp_m);
    return w.kl_weight * (mi_m + w.beta_tc_private * tc_m + fp_m);
  };
  const auto shared_term = [&](const Tensor& weighted, const Tensor& raw) {
    terms.kl_shared += value(mean(raw));
    return w.kl_weight * mean(weighted);
  };

  const PerSampleKl ks_img =
      shared_kl(*bundle.fused_image, bundle.shared_sample_image, bundle.shared_log_sample_image, w);
  terms.recon_image_self = value(r_img_self);
  Tensor total = w.lambda_image * r_img_self + private_kl(priv.mi, priv.tc, priv.fp) +
                 shared_term(ks_img.weighted, ks_img.raw);

  if (bundle.has_pairs()) {
    const auto& rows = bundle.paired_rows;
    const Tensor images = take_rows(batch.images, rows);
    const Tensor labels = take_rows(batch.labels, rows);
    const Tensor p_mi = take_rows(priv.mi, rows), p_tc = take_rows(priv.tc, rows), p_fp = take_rows(priv.fp, rows);

    const PerSampleKl ks_lab =
        shared_kl(*bundle.fused_label, bundle.shared_sample_label, bundle.shared_log_sample_label, w);
    const PerSampleKl ks_joint =
        shared_kl(*bundle.fused_joint, bundle.shared_sample_joint, bundle.shared_log_sample_joint, w);
    const Tensor ks_img_w = take_rows(ks_img.weighted, rows), ks_img_r = take_rows(ks_img.raw, rows);

    const Tensor r_lab_self = bernoulli_recon_loss(bundle.recon_label_self, labels);
    const Tensor r_img_joint = bernoulli_recon_loss(bundle.recon_image_joint, images);
    const Tensor r_lab_joint = bernoulli_recon_loss(bundle.recon_label_joint, labels);
    const Tensor r_img_cross = bernoulli_recon_loss(bundle.recon_image_cross, images);
    const Tensor r_lab_cross = bernoulli_recon_loss(bundle.recon_label_cross, labels);
    terms.recon_label_self = value(r_lab_self);
    terms.recon_image_joint = value(r_img_joint);
    terms.recon_label_joint = value(r_lab_joint);
    terms.recon_image_cross = value(r_img_cross);
    terms.recon_label_cross = value(r_lab_cross);

    // Label self path.
    total = total + w.lambda_label * r_lab_self + shared_term(ks_lab.weighted, ks_lab.raw);
    // Joint path, both modalities reconstructed from the fused shared latent.
    total = total + w.lambda_image * r_img_joint + private_kl(p_mi, p_tc, p_fp) +
            shared_term(ks_joint.weighted, ks_joint.raw);
    total = total + w.lambda_label * r_lab_joint + shared_term(ks_joint.weighted, ks_joint.raw);
    // Cross paths: image from the label's shared latent, label from the image's.
    total = total + w.lambda_image * r_img_cross + private_kl(p_mi, p_tc, p_fp) +
            shared_term(ks_lab.weighted, ks_lab.raw);
    total = total + w.lambda_label * r_lab_cross + shared_term(ks_img_w, ks_img_r);
  }

  terms.total = value(total);
  return {total, terms};
}

}  // namespace dmvae::objective
