#pragma once

#include <cstddef>

#include "dmvae/data.hpp"
#include "dmvae/distributions.hpp"
#include "dmvae/model.hpp"
#include "dmvae/tensor.hpp"

namespace dmvae::objective {

struct LossWeights {
  double lambda_image = 1.0;
  double lambda_label = 50.0;
  /// Multiplies every KL term (the beta of the plain ELBO); 1 by default.
  double kl_weight = 1.0;
  /// Weight of the total-correlation part of the private KL.
  double beta_tc_private = 3.0;
  /// Weight of the TC part of a continuous shared KL. Values <= 0 keep the
  /// shared KL undecomposed (closed form).
  double beta_tc_shared = 0.0;
  /// N, the training-set size used by the marginal estimator.
  std::size_t dataset_size = 1;

  void validate(std::size_t batch_size) const;
};

/// Minibatch estimates of the aggregate posterior at each sample.
struct MarginalLogDensity {
  Tensor log_qz;       // [M, 1]   log q(z_i)
  Tensor log_qz_dims;  // [M, D]   log q(z_ik) per latent dimension (per group for concrete)
};

/// Weighted-minibatch estimate of log q(z_i) = log (1/N) sum_n q(z_i | x_n).
///
/// Sample i's own posterior is weighted 1/N and each of the other M-1
/// minibatch posteriors stands in for (N-1)/(M-1) of the remaining dataset,
/// so the estimate is exact when the minibatch is the whole dataset (M = N).
MarginalLogDensity minibatch_log_qz(const Tensor& z, const dist::GaussianParams& posteriors,
                                    std::size_t dataset_size);
/// Concrete version; z and logits are [M, G, C] and the per-dimension
/// marginals are per group G.
MarginalLogDensity minibatch_log_qz(const dist::SimplexPoint& z, const dist::ConcreteParams& posteriors,
                                    std::size_t dataset_size);

/// Per-sample pieces of KL(q(z|x) || N(0, I)) = MI + TC + FP, each [M, 1].
struct KlTerms {
  Tensor mi;
  Tensor tc;
  Tensor fp;
};

/// Batch means of the three pieces (scalar tensors).
struct KlDecomposition {
  Tensor mi;
  Tensor tc;
  Tensor fp;
};

KlTerms kl_terms(const Tensor& z, const dist::GaussianParams& posteriors, std::size_t dataset_size);
KlDecomposition kl_decompose(const Tensor& z, const dist::GaussianParams& posteriors,
                             std::size_t dataset_size);

inline constexpr double kProbClamp = 1e-7;

/// Binary cross-entropy summed over the last axis, one value per row [B, 1].
Tensor bernoulli_recon_per_sample(const Tensor& predicted, const Tensor& target);
/// Row sums averaged over the batch.
Tensor bernoulli_recon_loss(const Tensor& predicted, const Tensor& target);

/// Unweighted values of the loss terms for logging. KL entries are summed
/// over the paths in which they appear.
struct LossBreakdown {
  double recon_image_self = 0.0;
  double recon_label_self = 0.0;
  double recon_image_joint = 0.0;
  double recon_label_joint = 0.0;
  double recon_image_cross = 0.0;
  double recon_label_cross = 0.0;
  double kl_private_mi = 0.0;
  double kl_private_tc = 0.0;
  double kl_private_fp = 0.0;
  double kl_shared = 0.0;
  double total = 0.0;

  LossBreakdown& operator+=(const LossBreakdown& o);
  LossBreakdown scaled(double s) const;
};

struct LossResult {
  Tensor total;  // scalar, differentiable
  LossBreakdown terms;
};

/// Negative multi-path ELBO for one batch.
///
/// Every row contributes the image self path. Paired rows add the label self
/// path, the joint (PoE) path for both modalities and the two cross paths.
/// Each term is averaged over the rows that contribute to it.
LossResult dmvae_loss(const LatentBundle& bundle, const data::BimodalBatch& batch, const LossWeights& weights);

}  // namespace dmvae::objective
