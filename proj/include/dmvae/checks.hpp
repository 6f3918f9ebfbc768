#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dmvae/config.hpp"
#include "dmvae/tensor.hpp"

// Independent numerical oracles (finite differences, quadrature, brute-force
// mixtures) and the property suites built on them. The suites back the
// acceptance binary and `dmvae selftest`.
namespace dmvae::checks {

// ---------------------------------------------------------------------------
// Oracles

using ScalarFn = std::function<Tensor(std::span<const Tensor>)>;

/// Central-difference gradient of the scalar `f` with respect to input `which`.
std::vector<double> numeric_gradient(const ScalarFn& f, std::vector<Tensor> inputs, std::size_t which,
                                     double h = 1e-6);

/// Norm-wise relative error |g_tape - g_fd| / max(|g_tape| + |g_fd|, 1e-12)
/// over all inputs, where g_tape comes from Tape::backward.
double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-6);

double normal_pdf(double x, double mu, double var);

/// Concrete density at z written out directly in scalar code.
double concrete_density(std::span<const double> z, std::span<const double> logits, double temperature);

/// log((1/N) sum_j prod_k N(z_k; mu_jk, exp(logvar_jk))) over all N rows.
double exact_log_mixture(std::span<const double> z, const std::vector<std::vector<double>>& mu,
                         const std::vector<std::vector<double>>& logvar);

/// Integral over the 1-simplex of the library's two-class concrete density,
/// by the substitution x = sigmoid(s) and the trapezoid rule.
double integrate_binary_concrete(double logit0, double logit1, double temperature);

// ---------------------------------------------------------------------------
// Property suites

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// PoE against a grid product of densities, concrete normalization,
/// low-temperature argmax frequencies, and the [4,3]x[2,3] PoE example.
CheckResult distribution_suite();

/// Finite-difference checks of every tensor op and of the full loss on a
/// small toy model.
CheckResult gradient_suite();

/// Exactness of the minibatch estimator at M = N, telescoping of the KL
/// decomposition, and vanishing TC on factorized posteriors.
CheckResult estimator_suite();

/// Label outputs ignore private latents; traversal grid layout.
CheckResult structure_suite();

/// Repeatability of metrics and bit-exact checkpoint resume on synthetic
/// data, run under `scratch`.
CheckResult determinism_suite(const std::filesystem::path& scratch);

struct SyntheticAblation {
  double discrete_beta3 = 0.0;
  double discrete_beta1 = 0.0;
  double continuous_beta1 = 0.0;
};

/// Mean cross-modal test accuracy over seeds {0, 1, 2} for the three
/// ablation configurations on synthetic data.
SyntheticAblation run_synthetic_ablation(std::size_t epochs = 60);
CheckResult synthetic_suite(std::size_t epochs = 60);

/// Desk-scale MNIST runs at 0.2%, 1% and 5% pairing.
CheckResult mnist_suite(const std::filesystem::path& data_dir, const std::filesystem::path& scratch,
                        std::size_t epochs = 60);

/// Base configuration shared by the synthetic suites.
RunConfig synthetic_config(std::uint64_t seed);

/// Metrics CSV text with the wall_seconds column removed.
std::string strip_wall_seconds(const std::string& csv);

}  // namespace dmvae::checks
