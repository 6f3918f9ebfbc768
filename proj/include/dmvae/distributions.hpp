#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dmvae/tensor.hpp"

// Reparameterized Gaussian and concrete (relaxed categorical) distributions.
//
// All functions are batched over leading axes and act on the last axis: a
// GaussianParams with mu of shape [B, D] describes B independent diagonal
// Gaussians of dimension D. Densities and KL terms come back with the last
// axis reduced to size 1.
namespace dmvae::dist {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kSimplexFloor = 1e-12;
inline constexpr double kUniformClamp = 1e-12;
/// Default relaxation temperature.
inline constexpr double kDefaultTemperature = 1.0;

/// Diagonal Gaussian. logvar is clamped to [-10, 10] on construction.
class GaussianParams {
 public:
  GaussianParams(Tensor mu, Tensor logvar);

  const Tensor& mu() const { return mu_; }
  const Tensor& logvar() const { return logvar_; }
  std::size_t dim() const { return mu_.shape().back(); }

 private:
  Tensor mu_;
  Tensor logvar_;
};

/// Relaxed categorical over the last axis of `logits` (unnormalized log pi).
class ConcreteParams {
 public:
  ConcreteParams(Tensor logits, double temperature);

  const Tensor& logits() const { return logits_; }
  double temperature() const { return temperature_; }
  std::size_t classes() const { return logits_.shape().back(); }
  /// softmax(logits): the normalized class probabilities.
  Tensor probs() const;

 private:
  Tensor logits_;
  double temperature_;
};

/// Point on the probability simplex (last axis), floored at kSimplexFloor.
/// Samples also carry their exact log coordinates; densities use those when
/// present, since the floored coordinates are not the point that was drawn.
struct SimplexPoint {
  Tensor coords;
  std::optional<Tensor> log_coords = std::nullopt;
};

/// mu + exp(logvar / 2) * noise.
Tensor gaussian_sample(const GaussianParams& params, const Tensor& noise);

/// KL(N(mu, diag exp(logvar)) || N(0, I)).
Tensor gaussian_kl_std(const GaussianParams& params);

/// log N(z; mu, diag exp(logvar)).
Tensor gaussian_log_prob(const GaussianParams& params, const Tensor& z);

/// Product of diagonal Gaussian experts, optionally with a N(0, I) expert.
/// Precisions add; the mean is the precision-weighted average of the means.
GaussianParams poe_gaussian(std::span<const GaussianParams> experts, bool include_standard_prior);

/// Standard Gumbel noise -log(-log u), with u clamped into (0, 1).
Tensor gumbel_from_uniform(const Tensor& u);

/// softmax((logits + gumbels) / T), floored onto the open simplex.
SimplexPoint concrete_sample(const ConcreteParams& params, const Tensor& gumbels);

/// Log density of Concrete(pi, T) at z:
///   log((n-1)! T^(n-1)) + sum_k [log pi_k - (T+1) log z_k]
///     - n log sum_j pi_j z_j^(-T)
/// The expression is invariant to the normalization of pi, so raw logits work.
Tensor concrete_log_density(const ConcreteParams& params, const SimplexPoint& z);

/// Product of concrete experts: logits add, the common temperature is kept.
/// The uniform prior only shifts logits by a constant and is left out.
ConcreteParams poe_concrete(std::span<const ConcreteParams> experts);

/// Uniform concrete prior with the same shape and temperature as `like`.
ConcreteParams uniform_concrete(const ConcreteParams& like);

}  // namespace dmvae::dist
