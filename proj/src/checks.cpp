#include "dmvae/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dmvae/checkpoint.hpp"
#include "dmvae/distributions.hpp"
#include "dmvae/eval.hpp"
#include "dmvae/model.hpp"
#include "dmvae/objective.hpp"
#include "dmvae/rng.hpp"
#include "dmvae/trainer.hpp"

namespace dmvae::checks {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(double v, int precision = 6) {
  std::ostringstream out;
  out.precision(precision);
  out << v;
  return out.str();
}

Tensor uniform_tensor(const Shape& shape, double lo, double hi, Engine& engine) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = u(engine);
  return Tensor(shape, std::move(v));
}

// Values bounded away from zero in magnitude, with random sign.
Tensor away_from_zero(const Shape& shape, double lo, double hi, Engine& engine) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = sign(engine) ? u(engine) : -u(engine);
  return Tensor(shape, std::move(v));
}

std::vector<double> normals(std::size_t n, Engine& engine) {
  std::normal_distribution<double> nd;
  std::vector<double> v(n);
  for (auto& x : v) x = nd(engine);
  return v;
}

std::vector<double> uniforms(std::size_t n, Engine& engine) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> v(n);
  for (auto& x : v) x = u(engine);
  return v;
}

// Collects failures of one suite.
class Report {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok) failures_.push_back(what);
  }
  void note(const std::string& s) { notes_.push_back(s); }

  CheckResult finish(std::string name, Clock::time_point start) const {
    CheckResult r;
    r.name = std::move(name);
    r.passed = failures_.empty();
    std::ostringstream d;
    d << checks_ - failures_.size() << "/" << checks_ << " checks";
    for (const auto& n : notes_) d << "; " << n;
    for (std::size_t i = 0; i < std::min<std::size_t>(failures_.size(), 5); ++i) d << "; FAILED " << failures_[i];
    r.detail = d.str();
    r.seconds = seconds_since(start);
    return r;
  }

 private:
  std::size_t checks_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Oracles

std::vector<double> numeric_gradient(const ScalarFn& f, std::vector<Tensor> inputs, std::size_t which, double h) {
  NoGradScope no_grad;
  const Tensor base = inputs.at(which);
  std::vector<double> values = base.to_vector();
  std::vector<double> grad(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double x = values[i];
    values[i] = x + h;
    inputs[which] = Tensor(base.shape(), values);
    const double up = f(inputs).item();
    values[i] = x - h;
    inputs[which] = Tensor(base.shape(), values);
    const double down = f(inputs).item();
    values[i] = x;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double gradient_error(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    std::vector<Tensor> watched;
    for (const auto& t : inputs) watched.push_back(tape.watch(t));
    const Tensor out = f(watched);
    const Gradients g = tape.backward(out);
    for (const auto& w : watched) analytic.push_back(g.of(w).to_vector());
  }
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto numeric = numeric_gradient(f, inputs, k, h);
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff2 += (analytic[k][i] - numeric[i]) * (analytic[k][i] - numeric[i]);
      a2 += analytic[k][i] * analytic[k][i];
      n2 += numeric[i] * numeric[i];
    }
  }
  return std::sqrt(diff2) / std::max(std::sqrt(a2) + std::sqrt(n2), 1e-12);
}

double normal_pdf(double x, double mu, double var) {
  return std::exp(-0.5 * (x - mu) * (x - mu) / var) / std::sqrt(2.0 * std::numbers::pi * var);
}

double concrete_density(std::span<const double> z, std::span<const double> logits, double temperature) {
  const std::size_t n = z.size();
  double log_p = std::lgamma(static_cast<double>(n)) + static_cast<double>(n - 1) * std::log(temperature);
  double denom = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    log_p += logits[k] - (temperature + 1.0) * std::log(z[k]);
    denom += std::exp(logits[k]) * std::pow(z[k], -temperature);
  }
  log_p -= static_cast<double>(n) * std::log(denom);
  return std::exp(log_p);
}

double exact_log_mixture(std::span<const double> z, const std::vector<std::vector<double>>& mu,
                         const std::vector<std::vector<double>>& logvar) {
  double total = 0.0;
  for (std::size_t j = 0; j < mu.size(); ++j) {
    double p = 1.0;
    for (std::size_t k = 0; k < z.size(); ++k) p *= normal_pdf(z[k], mu[j][k], std::exp(logvar[j][k]));
    total += p;
  }
  return std::log(total / static_cast<double>(mu.size()));
}

double integrate_binary_concrete(double logit0, double logit1, double temperature) {
  // x = sigmoid(s), dx = x (1 - x) ds; the integrand decays exponentially in |s|.
  constexpr double lo = -60.0, hi = 60.0;
  constexpr std::size_t steps = 240000;
  const double ds = (hi - lo) / steps;
  std::vector<double> coords;
  coords.reserve(2 * (steps + 1));
  std::vector<double> jac(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double s = lo + ds * static_cast<double>(i);
    const double x = 1.0 / (1.0 + std::exp(-s));
    const double y = 1.0 / (1.0 + std::exp(s));
    coords.push_back(x);
    coords.push_back(y);
    jac[i] = x * y;
  }
  NoGradScope no_grad;
  std::vector<double> logits;
  for (std::size_t i = 0; i <= steps; ++i) {
    logits.push_back(logit0);
    logits.push_back(logit1);
  }
  const dist::ConcreteParams params(Tensor({steps + 1, 2}, std::move(logits)), temperature);
  const Tensor log_p = dist::concrete_log_density(params, dist::SimplexPoint{Tensor({steps + 1, 2}, coords)});
  double total = 0.0;
  for (std::size_t i = 0; i <= steps; ++i) {
    const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
    total += w * std::exp(log_p[i]) * jac[i];
  }
  return total * ds;
}

// ---------------------------------------------------------------------------
// Suites

CheckResult distribution_suite() {
  const auto start = Clock::now();
  Report rep;
  NoGradScope no_grad;
  Engine engine(stream_seed(0, "check-distributions"));

  // Closed-form Gaussian PoE against a normalized grid product.
  double worst = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const Tensor mus = uniform_tensor({2}, -3.0, 3.0, engine);
    const Tensor lvs = uniform_tensor({2}, -2.0, 2.0, engine);
    const std::vector<dist::GaussianParams> experts{
        dist::GaussianParams(Tensor({1, 1}, {mus[0]}), Tensor({1, 1}, {lvs[0]})),
        dist::GaussianParams(Tensor({1, 1}, {mus[1]}), Tensor({1, 1}, {lvs[1]}))};
    const auto fused = dist::poe_gaussian(experts, false);
    const double mu = fused.mu()[0];
    const double var = std::exp(fused.logvar()[0]);
    const double sd = std::sqrt(var);
    constexpr std::size_t points = 8001;
    const double lo = mu - 14.0 * sd, hi = mu + 14.0 * sd;
    const double dx = (hi - lo) / (points - 1);
    std::vector<double> prod(points);
    double z = 0.0;
    for (std::size_t i = 0; i < points; ++i) {
      const double x = lo + dx * static_cast<double>(i);
      prod[i] = normal_pdf(x, mus[0], std::exp(lvs[0])) * normal_pdf(x, mus[1], std::exp(lvs[1]));
      const double w = (i == 0 || i == points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
      z += w * prod[i];
    }
    z *= dx / 3.0;
    for (std::size_t i = 0; i < points; ++i) {
      const double x = lo + dx * static_cast<double>(i);
      worst = std::max(worst, std::abs(prod[i] / z - normal_pdf(x, mu, var)));
    }
  }
  rep.expect(worst < 1e-6, "PoE sup-norm error " + fmt(worst));
  rep.note("PoE sup-norm " + fmt(worst, 3));

  // Concrete density normalization, two classes.
  double worst_mass = 0.0;
  for (double t : {0.66, 1.0})
    for (const auto& [a, b] : {std::pair{0.0, 0.0}, {1.5, -0.5}, {-2.0, 0.7}}) {
      const double mass = integrate_binary_concrete(a, b, t);
      worst_mass = std::max(worst_mass, std::abs(mass - 1.0));
      rep.expect(std::abs(mass - 1.0) < 0.02, "concrete mass " + fmt(mass) + " at T=" + fmt(t));
    }
  rep.note("concrete mass error " + fmt(worst_mass, 3));

  // Argmax frequencies at low temperature follow softmax(logits).
  double worst_freq = 0.0;
  for (std::size_t n : {2u, 10u}) {
    constexpr std::size_t draws = 100000;
    const Tensor logits_row = uniform_tensor({n}, -1.5, 1.5, engine);
    std::vector<double> logits;
    for (std::size_t i = 0; i < draws; ++i)
      logits.insert(logits.end(), logits_row.data().begin(), logits_row.data().end());
    const dist::ConcreteParams params(Tensor({draws, n}, std::move(logits)), 0.01);
    Engine g1(stream_seed(1, "check-gumbel", n)), g2(stream_seed(2, "check-gumbel", n));
    EngineNoise noise(g1, g2);
    const auto sample = dist::concrete_sample(params, dist::gumbel_from_uniform(noise.uniform({draws, n})));
    std::vector<double> freq(n, 0.0);
    for (std::size_t i = 0; i < draws; ++i) {
      const auto row = sample.coords.data().subspan(i * n, n);
      freq[static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] += 1.0 / draws;
    }
    const Tensor probs = dist::ConcreteParams(Tensor({1, n}, logits_row.to_vector()), 0.01).probs();
    for (std::size_t k = 0; k < n; ++k) worst_freq = std::max(worst_freq, std::abs(freq[k] - probs[k]));
  }
  rep.expect(worst_freq < 0.01, "argmax frequency error " + fmt(worst_freq));
  rep.note("argmax frequency error " + fmt(worst_freq, 3));

  // Worked PoE example: [4,3] x [2,3] -> [8,9].
  {
    const std::vector<dist::ConcreteParams> experts{
        dist::ConcreteParams(Tensor({1, 2}, {std::log(4.0), std::log(3.0)}), 0.66),
        dist::ConcreteParams(Tensor({1, 2}, {std::log(2.0), std::log(3.0)}), 0.66)};
    const auto fused = dist::poe_concrete(experts);
    const Tensor p = fused.probs();
    rep.expect(std::abs(p[0] - 8.0 / 17.0) < 1e-15 && std::abs(p[1] - 9.0 / 17.0) < 1e-15,
               "PoE [4,3]x[2,3] gave (" + fmt(p[0], 17) + ", " + fmt(p[1], 17) + ")");
    rep.expect(std::abs(std::exp(fused.logits()[0] - fused.logits()[1]) - 8.0 / 9.0) < 1e-15,
               "PoE logit ratio differs from 8/9");
  }
  return rep.finish("distributions", start);
}

CheckResult gradient_suite() {
  const auto start = Clock::now();
  Report rep;
  Engine engine(stream_seed(0, "check-gradients"));
  constexpr double op_tol = 1e-4;
  constexpr double model_tol = 1e-3;

  // Scalar probe: sum(out * w) with a fixed random w of the output's shape.
  const auto probe = [&engine](std::function<Tensor(std::span<const Tensor>)> op) {
    auto weights = std::make_shared<std::optional<Tensor>>();
    auto eng = std::make_shared<Engine>(engine());
    return ScalarFn([op, weights, eng](std::span<const Tensor> in) {
      const Tensor out = op(in);
      if (!weights->has_value()) *weights = uniform_tensor(out.shape(), -1.0, 1.0, *eng);
      return sum(out * weights->value());
    });
  };

  struct Case {
    std::string name;
    std::function<Tensor(std::span<const Tensor>)> op;
    std::vector<Tensor> inputs;
  };
  const auto u = [&](const Shape& s, double lo = -1.0, double hi = 1.0) { return uniform_tensor(s, lo, hi, engine); };
  const auto nz = [&](const Shape& s) { return away_from_zero(s, 0.2, 1.5, engine); };
  const std::vector<std::size_t> rows{2, 0, 2};

  std::vector<Case> cases{
      {"matmul", [](auto in) { return matmul(in[0], in[1]); }, {u({3, 4}), u({4, 5})}},
      {"add", [](auto in) { return add(in[0], in[1]); }, {u({3, 4}), u({3, 4})}},
      {"add_broadcast", [](auto in) { return add(in[0], in[1]); }, {u({3, 1, 4}), u({2, 4})}},
      {"sub", [](auto in) { return sub(in[0], in[1]); }, {u({3, 4}), u({4})}},
      {"mul", [](auto in) { return mul(in[0], in[1]); }, {u({3, 4}), u({3, 1})}},
      {"div", [](auto in) { return div(in[0], in[1]); }, {u({3, 4}), u({3, 4}, 0.5, 2.0)}},
      {"neg", [](auto in) { return neg(in[0]); }, {u({3, 4})}},
      {"relu", [](auto in) { return relu(in[0]); }, {nz({3, 4})}},
      {"sigmoid", [](auto in) { return sigmoid(in[0]); }, {u({3, 4}, -3.0, 3.0)}},
      {"exp", [](auto in) { return exp(in[0]); }, {u({3, 4})}},
      {"log", [](auto in) { return log(in[0]); }, {u({3, 4}, 0.3, 3.0)}},
      {"log_strict", [](auto in) { return log_strict(in[0]); }, {u({3, 4}, 0.3, 3.0)}},
      {"square", [](auto in) { return square(in[0]); }, {u({3, 4})}},
      {"clamp", [](auto in) { return clamp(in[0], -0.5, 0.5); }, {nz({3, 4})}},
      {"sum", [](auto in) { return sum(in[0]); }, {u({3, 4})}},
      {"sum_lastdim", [](auto in) { return sum_lastdim(in[0]); }, {u({2, 3, 4})}},
      {"mean", [](auto in) { return mean(in[0]); }, {u({3, 4})}},
      {"broadcast", [](auto in) { return broadcast(in[0], {2, 3, 4}); }, {u({3, 1})}},
      {"reshape", [](auto in) { return reshape(in[0], {4, 3}); }, {u({3, 4})}},
      {"concat", [](auto in) { return concat({in[0], in[1]}); }, {u({3, 2}), u({3, 5})}},
      {"slice", [](auto in) { return slice(in[0], 1, 4); }, {u({3, 5})}},
      {"softmax_lastdim", [](auto in) { return softmax_lastdim(in[0]); }, {u({3, 4}, -2.0, 2.0)}},
      {"logsumexp_lastdim", [](auto in) { return logsumexp_lastdim(in[0]); }, {u({3, 4}, -2.0, 2.0)}},
      {"max_lastdim", [](auto in) { return max_lastdim(in[0]); }, {u({3, 6})}},
      {"take_rows", [rows](auto in) { return take_rows(in[0], rows); }, {u({3, 4})}},
      {"transpose", [](auto in) { return transpose(in[0]); }, {u({2, 3, 4})}},
      {"gaussian_kl_std",
       [](auto in) { return dist::gaussian_kl_std(dist::GaussianParams(in[0], in[1])); },
       {u({3, 4}), u({3, 4})}},
      {"gaussian_log_prob",
       [](auto in) { return dist::gaussian_log_prob(dist::GaussianParams(in[0], in[1]), in[2]); },
       {u({3, 4}), u({3, 4}), u({3, 4})}},
      {"poe_gaussian",
       [](auto in) {
         const std::vector<dist::GaussianParams> e{dist::GaussianParams(in[0], in[1]),
                                                   dist::GaussianParams(in[2], in[3])};
         const auto f = dist::poe_gaussian(e, true);
         return concat({f.mu(), f.logvar()});
       },
       {u({2, 3}), u({2, 3}), u({2, 3}), u({2, 3})}},
      {"concrete_sample",
       [](auto in) { return dist::concrete_sample(dist::ConcreteParams(in[0], 0.66), in[1]).coords; },
       {u({3, 4}), u({3, 4})}},
      {"concrete_log_density",
       [](auto in) {
         return dist::concrete_log_density(dist::ConcreteParams(in[0], 0.66),
                                           dist::SimplexPoint{softmax_lastdim(in[1])});
       },
       {u({3, 4}), u({3, 4})}},
      {"minibatch_log_qz",
       [](auto in) {
         const auto q = objective::minibatch_log_qz(in[0], dist::GaussianParams(in[1], in[2]), 9);
         return concat({q.log_qz, q.log_qz_dims});
       },
       {u({5, 3}), u({5, 3}), u({5, 3})}},
      {"minibatch_log_qz_concrete",
       [](auto in) {
         const auto q = objective::minibatch_log_qz(dist::SimplexPoint{softmax_lastdim(in[0])},
                                                    dist::ConcreteParams(in[1], 0.66), 7);
         return concat({q.log_qz, q.log_qz_dims});
       },
       {u({4, 2, 3}), u({4, 2, 3})}},
      {"bernoulli_recon",
       [](auto in) { return objective::bernoulli_recon_per_sample(sigmoid(in[0]), in[1]); },
       {u({3, 4}), u({3, 4}, 0.0, 1.0)}},
  };

  double worst_op = 0.0;
  for (const auto& c : cases) {
    const double err = gradient_error(probe(c.op), c.inputs);
    worst_op = std::max(worst_op, err);
    rep.expect(err < op_tol, c.name + " rel. error " + fmt(err));
  }
  rep.note("worst op rel. error " + fmt(worst_op, 3));

  // Full loss on 6-unit toy models, both shared-space kinds.
  double worst_model = 0.0;
  for (const auto kind : {SharedKind::discrete, SharedKind::continuous}) {
    ModelConfig cfg;
    cfg.image_dim = 4;
    cfg.label_classes = 3;
    cfg.private_dim = 2;
    cfg.shared_kind = kind;
    cfg.shared_dim = 3;
    cfg.hidden_dim = 6;
    Engine init(stream_seed(7, "check-toy-model"));
    const Model base(cfg, init);
    data::BimodalBatch batch{uniform_tensor({4, 4}, 0.0, 1.0, engine),
                             Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 1, 0}}),
                             {true, false, true, true}};
    objective::LossWeights w;
    w.dataset_size = 10;
    w.beta_tc_shared = kind == SharedKind::continuous ? 2.0 : 0.0;
    const auto normal_buf = normals(64, engine);
    const auto uniform_buf = uniforms(64, engine);
    const ScalarFn loss = [&](std::span<const Tensor> params) {
      const Model m = base.with_parameters(params);
      BufferNoise noise(normal_buf, uniform_buf);
      return objective::dmvae_loss(m.forward_train(batch, noise), batch, w).total;
    };
    std::vector<Tensor> params(base.parameters().begin(), base.parameters().end());
    const double err = gradient_error(loss, params);
    worst_model = std::max(worst_model, err);
    rep.expect(err < model_tol, std::string("dmvae_loss (") + to_string(kind) + ") rel. error " + fmt(err));
  }
  rep.note("end-to-end rel. error " + fmt(worst_model, 3));
  return rep.finish("gradients", start);
}

CheckResult estimator_suite() {
  const auto start = Clock::now();
  Report rep;
  NoGradScope no_grad;
  Engine engine(stream_seed(0, "check-estimators"));

  const auto rows_of = [](const Tensor& t) {
    std::vector<std::vector<double>> out(t.dim(0));
    for (std::size_t i = 0; i < t.dim(0); ++i) {
      const auto r = t.data().subspan(i * t.dim(1), t.dim(1));
      out[i].assign(r.begin(), r.end());
    }
    return out;
  };

  // Exactness when the batch is the whole dataset.
  double worst = 0.0;
  for (std::size_t d : {1u, 3u}) {
    constexpr std::size_t n = 8;
    const Tensor mu = Tensor({n, d}, normals(n * d, engine));
    const Tensor lv = uniform_tensor({n, d}, -1.0, 1.0, engine);
    const Tensor z = Tensor({n, d}, normals(n * d, engine));
    const auto q = objective::minibatch_log_qz(z, dist::GaussianParams(mu, lv), n);
    const auto mus = rows_of(mu), lvs = rows_of(lv), zs = rows_of(z);
    for (std::size_t i = 0; i < n; ++i) {
      worst = std::max(worst, std::abs(q.log_qz[i] - exact_log_mixture(zs[i], mus, lvs)));
      for (std::size_t k = 0; k < d; ++k) {
        std::vector<std::vector<double>> mk(n), lk(n);
        for (std::size_t j = 0; j < n; ++j) {
          mk[j] = {mus[j][k]};
          lk[j] = {lvs[j][k]};
        }
        const double zk = zs[i][k];
        worst = std::max(worst, std::abs(q.log_qz_dims[i * d + k] - exact_log_mixture({&zk, 1}, mk, lk)));
      }
    }
  }
  rep.expect(worst < 1e-10, "M = N mixture error " + fmt(worst));
  rep.note("M=N mixture error " + fmt(worst, 3));

  // Single-element dataset and duplicated posteriors.
  {
    const dist::GaussianParams one(Tensor({1, 2}, {0.3, -0.2}), Tensor({1, 2}, {0.1, -0.4}));
    const Tensor z1({1, 2}, {0.5, 0.1});
    const double direct = dist::gaussian_log_prob(one, z1).item();
    rep.expect(std::abs(objective::minibatch_log_qz(z1, one, 1).log_qz.item() - direct) < 1e-12,
               "M = N = 1 estimate differs from log q(z|x)");
    const dist::GaussianParams two(Tensor({2, 2}, {0.3, -0.2, 0.3, -0.2}), Tensor({2, 2}, {0.1, -0.4, 0.1, -0.4}));
    const Tensor z2({2, 2}, {0.5, 0.1, 0.5, 0.1});
    rep.expect(std::abs(objective::minibatch_log_qz(z2, two, 2).log_qz[0] - direct) < 1e-12,
               "identical posteriors: estimate differs from the mixture");
  }

  // Telescoping of the decomposition at M = N.
  {
    constexpr std::size_t n = 8, d = 3;
    const dist::GaussianParams post(Tensor({n, d}, normals(n * d, engine)), uniform_tensor({n, d}, -1.0, 1.0, engine));
    const Tensor z({n, d}, normals(n * d, engine));
    const auto dec = objective::kl_decompose(z, post, n);
    const auto prior = dist::GaussianParams(Tensor::zeros({n, d}), Tensor::zeros({n, d}));
    const double plain = mean(dist::gaussian_log_prob(post, z) - dist::gaussian_log_prob(prior, z)).item();
    const double gap = std::abs(dec.mi.item() + dec.tc.item() + dec.fp.item() - plain);
    rep.expect(gap < 1e-10, "mi + tc + fp misses the plain KL by " + fmt(gap));
    rep.note("telescoping gap " + fmt(gap, 3));
  }

  // Factorized posteriors (a product grid of means) at batch 512.
  {
    constexpr std::size_t na = 16, nb = 32, n = na * nb;
    std::vector<double> mu, lv;
    for (std::size_t a = 0; a < na; ++a)
      for (std::size_t b = 0; b < nb; ++b) {
        mu.push_back(-2.0 + 4.0 * static_cast<double>(a) / (na - 1));
        mu.push_back(-1.5 + 3.0 * static_cast<double>(b) / (nb - 1));
        lv.push_back(std::log(0.25));
        lv.push_back(std::log(0.16));
      }
    const dist::GaussianParams post(Tensor({n, 2}, mu), Tensor({n, 2}, lv));
    const Tensor z = dist::gaussian_sample(post, Tensor({n, 2}, normals(2 * n, engine)));
    const double tc = objective::kl_decompose(z, post, n).tc.item();
    rep.expect(std::abs(tc) < 0.05, "factorized TC " + fmt(tc));
    rep.note("factorized TC " + fmt(tc, 3));

    const dist::GaussianParams prior_like(Tensor::zeros({n, 2}), Tensor::zeros({n, 2}));
    const Tensor zp = dist::gaussian_sample(prior_like, Tensor({n, 2}, normals(2 * n, engine)));
    const auto dec = objective::kl_decompose(zp, prior_like, n);
    for (const auto& [name, v] : {std::pair{"mi", dec.mi.item()}, {"tc", dec.tc.item()}, {"fp", dec.fp.item()}})
      rep.expect(std::abs(v) < 0.05, std::string("posterior = prior: ") + name + " = " + fmt(v));
  }

  // Perfectly correlated dimensions.
  {
    constexpr std::size_t n = 512;
    std::vector<double> mu, lv;
    const auto a = normals(n, engine);
    for (std::size_t i = 0; i < n; ++i) {
      mu.push_back(a[i]);
      mu.push_back(a[i]);
      lv.push_back(std::log(0.01));
      lv.push_back(std::log(0.01));
    }
    const dist::GaussianParams post(Tensor({n, 2}, mu), Tensor({n, 2}, lv));
    const Tensor z = dist::gaussian_sample(post, Tensor({n, 2}, normals(2 * n, engine)));
    const double tc = objective::kl_decompose(z, post, n).tc.item();
    rep.expect(tc > 0.2, "correlated TC " + fmt(tc));
    rep.note("correlated TC " + fmt(tc, 3));
  }
  return rep.finish("estimators", start);
}

CheckResult structure_suite() {
  const auto start = Clock::now();
  Report rep;
  NoGradScope no_grad;
  Engine engine(stream_seed(0, "check-structure"));

  ModelConfig cfg;
  cfg.image_dim = data::kSynthImageDim;
  cfg.label_classes = 4;
  cfg.shared_dim = 4;
  cfg.hidden_dim = 32;
  Engine init(stream_seed(3, "check-structure-init"));
  const Model model(cfg, init);
  const data::Dataset ds = data::synth_bimodal(8, 4, 11);
  std::vector<std::size_t> all(ds.count);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const data::BimodalBatch batch = data::make_batch(ds, all, std::vector<bool>(ds.count, true));

  // Private noise differs, everything else identical.
  const auto b = batch.size(), p = cfg.private_dim;
  auto n1 = normals(2 * b * p, engine);
  auto n2 = n1;
  for (std::size_t i = 0; i < b * p; ++i) n2[i] = -n1[i] + 0.5;
  const auto un = uniforms(16 * b * cfg.shared_width(), engine);
  BufferNoise noise1(n1, un), noise2(n2, un);
  const LatentBundle a1 = model.forward_train(batch, noise1);
  const LatentBundle a2 = model.forward_train(batch, noise2);
  const auto same = [](const Tensor& x, const Tensor& y) { return x.to_vector() == y.to_vector(); };
  rep.expect(!same(a1.private_sample, a2.private_sample), "private samples did not change");
  rep.expect(!same(a1.recon_image_self, a2.recon_image_self), "image output ignored the private latent");
  rep.expect(same(a1.recon_label_self, a2.recon_label_self), "label self output changed with z_p");
  rep.expect(same(a1.recon_label_joint, a2.recon_label_joint), "label joint output changed with z_p");
  rep.expect(same(a1.recon_label_cross, a2.recon_label_cross), "label cross output changed with z_p");

  // Swapping private latents between two samples.
  {
    std::vector<std::size_t> swap(b);
    for (std::size_t i = 0; i < b; ++i) swap[i] = i ^ 1U;
    const Tensor zp_swapped = take_rows(a1.private_sample, swap);
    const Tensor img = model.decode_image(a1.private_sample, a1.shared_sample_image);
    const Tensor img_swapped = model.decode_image(zp_swapped, a1.shared_sample_image);
    rep.expect(!same(img, img_swapped), "swapping z_p left images unchanged");
  }

  // Traversal grid layout.
  {
    std::vector<double> src;
    for (std::size_t i : {0u, 1u, 2u, 2u}) src.insert(src.end(), ds.image(i).begin(), ds.image(i).end());
    const Tensor sources({4, cfg.image_dim}, src);
    const eval::GrayImage g = eval::render_traversal(model, sources);
    const std::size_t side = 4;
    rep.expect(g.width == (2 + cfg.label_classes) * side && g.height == 4 * side,
               "grid is " + std::to_string(g.width) + "x" + std::to_string(g.height));
    const auto row_bytes = [&](std::size_t r) {
      return std::vector<std::uint8_t>(g.pixels.begin() + static_cast<std::ptrdiff_t>(r * side * g.width),
                                       g.pixels.begin() + static_cast<std::ptrdiff_t>((r + 1) * side * g.width));
    };
    rep.expect(row_bytes(2) == row_bytes(3), "duplicated style row rendered differently");
    // Reconstruction column equals the column of the row's own shared code.
    const Tensor mode = eval::shared_mode(model, sources);
    bool match = true;
    for (std::size_t r = 0; r < 4; ++r) {
      const auto m = mode.data().subspan(r * cfg.shared_width(), cfg.shared_width());
      const auto k = static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin());
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const auto row = (r * side + y) * g.width;
          match = match && g.pixels[row + side + x] == g.pixels[row + (2 + k) * side + x];
        }
    }
    rep.expect(match, "reconstruction column differs from its one-hot column");
  }
  return rep.finish("structure", start);
}

RunConfig synthetic_config(std::uint64_t seed) {
  RunConfig c;
  c.dataset = "synth";
  c.synth_train = 2000;
  c.synth_test = 500;
  c.synth_classes = 4;
  c.paired_fraction = 0.05;
  c.seed = seed;
  c.eval_every = 0;
  c.out_dir = "unused";
  return c;
}

std::string strip_wall_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto comma = line.rfind(',');
    out += (comma == std::string::npos ? line : line.substr(0, comma)) + '\n';
  }
  return out;
}

CheckResult determinism_suite(const std::filesystem::path& scratch) {
  const auto start = Clock::now();
  Report rep;
  std::filesystem::remove_all(scratch);

  RunConfig c = synthetic_config(5);
  c.synth_train = 400;
  c.synth_test = 100;
  c.paired_fraction = 0.1;
  c.epochs = 6;
  c.eval_every = 3;
  c.checkpoint_every = 3;
  const auto split = load_run_data(c);
  const auto model_cfg = c.model_config(split.train.image_dim, split.train.label_dim);

  const auto run = [&](const std::string& name, std::size_t epochs, const Checkpoint* resume) {
    RunConfig rc = c;
    rc.out_dir = scratch / name;
    rc.epochs = epochs;
    return train(rc.train_config(), model_cfg, rc.loss_weights(split.train.count), split, resume);
  };
  const TrainResult a = run("a", 6, nullptr);
  const TrainResult b = run("b", 6, nullptr);
  const auto csv = [&](const std::string& name) {
    return strip_wall_seconds(read_file(scratch / name / kMetricsFile));
  };
  rep.expect(csv("a") == csv("b"), "two identical runs wrote different metrics");
  // Settings record out_dir, the one intended difference.
  const auto without_settings = [](Checkpoint k) {
    k.settings.clear();
    return encode_checkpoint(k);
  };
  rep.expect(without_settings(a.checkpoint) == without_settings(b.checkpoint),
             "two identical runs ended in different states");

  // Stop after 3 epochs, reload from disk, continue to 6.
  run("c", 3, nullptr);
  const Checkpoint mid = load_checkpoint(scratch / "c" / checkpoint_filename(3));
  run("c", 6, &mid);
  rep.expect(csv("a") == csv("c"), "resumed run's metrics differ from the uninterrupted run");
  rep.expect(without_settings(load_checkpoint(scratch / "a" / checkpoint_filename(6))) ==
                 without_settings(load_checkpoint(scratch / "c" / checkpoint_filename(6))),
             "resumed run's final checkpoint differs from the uninterrupted run");

  // Save/load round trip.
  const auto bytes = encode_checkpoint(a.checkpoint);
  rep.expect(encode_checkpoint(decode_checkpoint(bytes)) == bytes, "checkpoint encoding is not a fixed point");
  rep.expect(decode_checkpoint(bytes) == a.checkpoint, "checkpoint round trip changed the state");
  rep.note("6 epochs x 3 runs");
  return rep.finish("determinism", start);
}

SyntheticAblation run_synthetic_ablation(std::size_t epochs) {
  const auto accuracy = [epochs](SharedKind kind, double beta) {
    double total = 0.0;
    for (std::uint64_t seed : {0, 1, 2}) {
      RunConfig c = synthetic_config(seed);
      c.shared_kind = kind;
      c.beta_tc_private = beta;
      c.epochs = epochs;
      const auto split = load_run_data(c);
      TrainConfig tc = c.train_config();
      tc.out_dir.clear();
      const auto result = train(tc, c.model_config(split.train.image_dim, split.train.label_dim),
                                c.loss_weights(split.train.count), split);
      total += result.metrics.empty() ? 0.0 : result.metrics.back().test_accuracy.value_or(0.0);
    }
    return total / 3.0;
  };
  SyntheticAblation out;
  out.discrete_beta3 = accuracy(SharedKind::discrete, 3.0);
  out.discrete_beta1 = accuracy(SharedKind::discrete, 1.0);
  out.continuous_beta1 = accuracy(SharedKind::continuous, 1.0);
  return out;
}

CheckResult synthetic_suite(std::size_t epochs) {
  const auto start = Clock::now();
  Report rep;
  const SyntheticAblation a = run_synthetic_ablation(epochs);
  rep.expect(a.discrete_beta3 >= 0.95, "discrete(beta=3) accuracy " + fmt(a.discrete_beta3) + " < 0.95");
  rep.expect(a.discrete_beta3 >= a.discrete_beta1 && a.discrete_beta1 >= a.continuous_beta1,
             "ablation ordering broken");
  rep.note("D(d,3)=" + fmt(a.discrete_beta3, 4) + " D(d,1)=" + fmt(a.discrete_beta1, 4) +
           " D(c,1)=" + fmt(a.continuous_beta1, 4));
  return rep.finish("synthetic", start);
}

CheckResult mnist_suite(const std::filesystem::path& data_dir, const std::filesystem::path& scratch,
                        std::size_t epochs) {
  const auto start = Clock::now();
  Report rep;
  std::vector<double> acc;
  for (double f : {0.002, 0.01, 0.05}) {
    RunConfig c;
    c.dataset = "mnist";
    c.data_dir = data_dir;
    c.train_limit = 10000;
    c.paired_fraction = f;
    c.seed = 0;
    c.epochs = epochs;
    c.eval_every = 0;
    c.out_dir = scratch / ("paired_" + fmt(f));
    const auto split = load_run_data(c);
    const auto result = train(c.train_config(), c.model_config(split.train.image_dim, split.train.label_dim),
                              c.loss_weights(split.train.count), split);
    acc.push_back(result.metrics.empty() ? 0.0 : result.metrics.back().test_accuracy.value_or(0.0));
  }
  rep.expect(acc[1] >= 0.85, "1% paired accuracy " + fmt(acc[1]) + " < 0.85");
  rep.expect(acc[2] > acc[1] && acc[1] > acc[0], "accuracy not increasing with the paired fraction");
  rep.note("acc(0.2%)=" + fmt(acc[0], 4) + " acc(1%)=" + fmt(acc[1], 4) + " acc(5%)=" + fmt(acc[2], 4));
  return rep.finish("mnist", start);
}

}  // namespace dmvae::checks
