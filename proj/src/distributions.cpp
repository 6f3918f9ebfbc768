#include "dmvae/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace dmvae::dist {

GaussianParams::GaussianParams(Tensor mu, Tensor logvar)
    : mu_(std::move(mu)), logvar_(clamp(logvar, kLogVarMin, kLogVarMax)) {
  if (mu_.shape() != logvar_.shape())
    throw ShapeError("GaussianParams: mu " + to_string(mu_.shape()) + " vs logvar " +
                     to_string(logvar_.shape()));
}

ConcreteParams::ConcreteParams(Tensor logits, double temperature)
    : logits_(std::move(logits)), temperature_(temperature) {
  if (!(temperature_ > 0.0) || !std::isfinite(temperature_))
    throw DomainError("ConcreteParams: temperature must be positive, got " + std::to_string(temperature));
  if (logits_.rank() == 0) throw ShapeError("ConcreteParams: logits must have a class axis");
}

Tensor ConcreteParams::probs() const { return softmax_lastdim(logits_); }

Tensor gaussian_sample(const GaussianParams& params, const Tensor& noise) {
  if (noise.shape() != params.mu().shape())
    throw ShapeError("gaussian_sample: noise " + to_string(noise.shape()) + " vs params " +
                     to_string(params.mu().shape()));
  return params.mu() + exp(params.logvar() * 0.5) * noise;
}

Tensor gaussian_kl_std(const GaussianParams& params) {
  const Tensor& lv = params.logvar();
  return sum_lastdim((square(params.mu()) + exp(lv) - 1.0 - lv) * 0.5);
}

Tensor gaussian_log_prob(const GaussianParams& params, const Tensor& z) {
  if (z.shape() != params.mu().shape())
    throw ShapeError("gaussian_log_prob: z " + to_string(z.shape()) + " vs params " +
                     to_string(params.mu().shape()));
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  const Tensor& lv = params.logvar();
  return sum_lastdim((lv + log_2pi + square(z - params.mu()) * exp(-lv)) * -0.5);
}

GaussianParams poe_gaussian(std::span<const GaussianParams> experts, bool include_standard_prior) {
  if (experts.empty() && !include_standard_prior)
    throw std::invalid_argument("poe_gaussian: empty product (no experts, no prior)");
  if (experts.empty()) {
    // Only the prior: N(0, I) with a scalar shape; callers always pass experts
    // in practice, this keeps the contract total.
    return GaussianParams(Tensor::scalar(0.0), Tensor::scalar(0.0));
  }
  const Shape& shape = experts.front().mu().shape();
  Tensor precision = include_standard_prior ? Tensor::full(shape, 1.0) : Tensor::zeros(shape);
  Tensor weighted = Tensor::zeros(shape);
  for (const auto& e : experts) {
    if (e.mu().shape() != shape)
      throw ShapeError("poe_gaussian: expert shape " + to_string(e.mu().shape()) + " vs " + to_string(shape));
    const Tensor p = exp(-e.logvar());
    precision = precision + p;
    weighted = weighted + p * e.mu();
  }
  return GaussianParams(weighted / precision, -log(precision));
}

Tensor gumbel_from_uniform(const Tensor& u) {
  std::vector<double> out(u.numel());
  const auto d = u.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = std::clamp(d[i], kUniformClamp, 1.0 - kUniformClamp);
    out[i] = -std::log(-std::log(v));
  }
  return Tensor(u.shape(), std::move(out));
}

SimplexPoint concrete_sample(const ConcreteParams& params, const Tensor& gumbels) {
  if (gumbels.shape() != params.logits().shape())
    throw ShapeError("concrete_sample: gumbels " + to_string(gumbels.shape()) + " vs logits " +
                     to_string(params.logits().shape()));
  const Tensor a = (params.logits() + gumbels) * (1.0 / params.temperature());
  const Tensor log_z = a - logsumexp_lastdim(a);
  return {clamp(exp(log_z), kSimplexFloor, 1.0), log_z};
}

Tensor concrete_log_density(const ConcreteParams& params, const SimplexPoint& z) {
  if (z.coords.shape() != params.logits().shape())
    throw ShapeError("concrete_log_density: z " + to_string(z.coords.shape()) + " vs logits " +
                     to_string(params.logits().shape()));
  const double n = static_cast<double>(params.classes());
  const double t = params.temperature();
  const double log_norm = std::lgamma(n) + (n - 1.0) * std::log(t);
  if (z.log_coords && z.log_coords->shape() != z.coords.shape())
    throw ShapeError("concrete_log_density: log coordinates do not match the point");
  const Tensor log_z = z.log_coords ? *z.log_coords : log(z.coords, kSimplexFloor);
  const Tensor& lp = params.logits();
  const Tensor per_class = sum_lastdim(lp - log_z * (t + 1.0));
  const Tensor lse = logsumexp_lastdim(lp - log_z * t);
  return per_class - lse * n + log_norm;
}

ConcreteParams poe_concrete(std::span<const ConcreteParams> experts) {
  if (experts.empty()) throw std::invalid_argument("poe_concrete: empty expert list");
  const auto& first = experts.front();
  Tensor logits = first.logits();
  for (std::size_t i = 1; i < experts.size(); ++i) {
    const auto& e = experts[i];
    if (e.logits().shape() != first.logits().shape())
      throw ShapeError("poe_concrete: expert shape " + to_string(e.logits().shape()) + " vs " +
                       to_string(first.logits().shape()));
    if (e.temperature() != first.temperature())
      throw std::invalid_argument("poe_concrete: experts have different temperatures");
    logits = logits + e.logits();
  }
  return ConcreteParams(std::move(logits), first.temperature());
}

ConcreteParams uniform_concrete(const ConcreteParams& like) {
  return ConcreteParams(Tensor::zeros(like.logits().shape()), like.temperature());
}

}  // namespace dmvae::dist
