#include "dmvae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dmvae/eval.hpp"
#include "dmvae/rng.hpp"

namespace dmvae {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t first_non_finite(std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i])) return i;
  return v.size();
}

// Keeps the rows of an existing metrics file up to `epoch` and returns them
// with the header, or just the header when the file is absent.
std::string metrics_prefix(const std::filesystem::path& path, std::uint64_t epoch) {
  std::string header;
  for (const auto& c : metrics_columns()) header += (header.empty() ? "" : ",") + c;
  std::string out = header + '\n';
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto e = std::stoull(line.substr(0, line.find(',')));
    if (e <= epoch) out += line + '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

std::vector<Tensor> adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                              std::span<const std::string> names) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
    throw std::invalid_argument("adam_step: parameter, gradient and moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape())
      throw ShapeError("adam_step: gradient shape mismatch for parameter " + std::to_string(i));
    const auto bad = first_non_finite(grads[i].data());
    if (bad != grads[i].numel()) {
      const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
      throw NumericalError("non-finite gradient in parameter " + name + " at element " + std::to_string(bad));
    }
  }

  const auto t = state.t + 1;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(t));
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto p = params[i].data();
    const auto g = grads[i].data();
    std::vector<double> m = state.m[i].to_vector();
    std::vector<double> v = state.v[i].to_vector();
    std::vector<double> next(p.size());
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      next[k] = p[k] - state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    state.m[i] = Tensor(params[i].shape(), std::move(m));
    state.v[i] = Tensor(params[i].shape(), std::move(v));
    out.emplace_back(params[i].shape(), std::move(next));
  }
  state.t = t;
  return out;
}

const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols{
      "epoch",          "recon_image_self",  "recon_label_self",  "recon_image_joint", "recon_label_joint",
      "recon_image_cross", "recon_label_cross", "kl_private_mi",  "kl_private_tc",     "kl_private_fp",
      "kl_shared",      "total",             "test_accuracy",     "test_f1",           "wall_seconds"};
  return cols;
}

std::string metrics_row(const EpochMetrics& m) {
  const auto& l = m.loss;
  std::ostringstream out;
  out << m.epoch;
  for (double v : {l.recon_image_self, l.recon_label_self, l.recon_image_joint, l.recon_label_joint,
                   l.recon_image_cross, l.recon_label_cross, l.kl_private_mi, l.kl_private_tc, l.kl_private_fp,
                   l.kl_shared, l.total})
    out << ',' << fmt(v);
  out << ',' << (m.test_accuracy ? fmt(*m.test_accuracy) : "");
  out << ',' << (m.test_f1 ? fmt(*m.test_f1) : "");
  out << ',' << fmt(m.wall_seconds);
  return out.str();
}

Checkpoint initial_checkpoint(const ModelConfig& model_config, const TrainConfig& config) {
  RunStreams streams(config.seed);
  const Model model(model_config, streams.weights);
  Checkpoint c;
  c.model = model_config;
  c.names = model.parameter_names();
  c.parameters.assign(model.parameters().begin(), model.parameters().end());
  c.optimizer = OptimizerState::for_parameters(model.parameters(), config.learning_rate);
  c.epoch = 0;
  c.seed = config.seed;
  c.rng["gaussian"] = engine_state(streams.gaussian);
  c.rng["gumbel"] = engine_state(streams.gumbel);
  c.settings = config.settings;
  return c;
}

TrainResult train(const TrainConfig& config, const ModelConfig& model_config, objective::LossWeights weights,
                  const data::DatasetSplit& split, const Checkpoint* resume) {
  const auto& ds = split.train;
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(config.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (ds.count == 0) throw std::invalid_argument("training set is empty");
  if (ds.image_dim != model_config.image_dim || ds.label_dim != model_config.label_classes)
    throw std::invalid_argument("dataset dimensions (" + std::to_string(ds.image_dim) + ", " +
                                std::to_string(ds.label_dim) + ") do not match the model (" +
                                std::to_string(model_config.image_dim) + ", " +
                                std::to_string(model_config.label_classes) + ")");
  if (split.paired.size() != ds.count) throw std::invalid_argument("pairing mask length differs from the dataset");

  Checkpoint state = resume ? *resume : initial_checkpoint(model_config, config);
  if (resume) {
    if (!(resume->model == model_config)) throw CheckpointError("checkpoint model configuration differs from the run");
    if (resume->seed != config.seed)
      throw CheckpointError("checkpoint seed " + std::to_string(resume->seed) + " differs from run seed " +
                            std::to_string(config.seed));
    state.settings = config.settings;
  }
  Model model = model_from_checkpoint(state);
  Engine gaussian = engine_from_state(state.rng.at("gaussian"));
  Engine gumbel = engine_from_state(state.rng.at("gumbel"));
  EngineNoise noise(gaussian, gumbel);

  std::vector<std::size_t> paired_pool;
  for (std::size_t i = 0; i < ds.count; ++i)
    if (split.paired[i]) paired_pool.push_back(i);
  const std::size_t extra =
      paired_pool.empty() ? 0 : config.paired_batch.value_or(std::min(config.batch_size, paired_pool.size()));

  const bool writing = !config.out_dir.empty();
  const auto metrics_path = config.out_dir / kMetricsFile;
  if (writing) {
    std::filesystem::create_directories(config.out_dir);
    write_text(metrics_path, metrics_prefix(metrics_path, resume ? state.epoch : 0), false);
  }

  TrainResult result;
  Checkpoint last_good = state;
  const auto abort_run = [&](const std::string& why) {
    std::string where;
    if (writing) {
      const auto path = config.out_dir / checkpoint_filename(last_good.epoch);
      save_checkpoint(path, last_good);
      where = "; last good checkpoint written to " + path.string();
    }
    throw NumericalError(why + where);
  };

  for (std::uint64_t epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = data::epoch_order(ds.count, config.seed, epoch);
    std::vector<std::size_t> pool_order;
    if (!paired_pool.empty()) {
      Engine e(stream_seed(config.seed, "paired-shuffle", epoch));
      for (auto k : permutation(paired_pool.size(), e)) pool_order.push_back(paired_pool[k]);
    }
    std::size_t pool_pos = 0;

    objective::LossBreakdown sum;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < ds.count; begin += config.batch_size) {
      const auto end = std::min(ds.count, begin + config.batch_size);
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      for (std::size_t k = 0; k < extra; ++k) {
        rows.push_back(pool_order[pool_pos]);
        pool_pos = (pool_pos + 1) % pool_order.size();
      }
      const data::BimodalBatch batch = data::make_batch(ds, rows, split.paired);

      objective::LossWeights w = weights;
      w.dataset_size = std::max(ds.count, rows.size());

      Tape tape;
      std::vector<Tensor> grads;
      objective::LossResult loss;
      {
        TapeScope scope(tape);
        const Model watched = model.watched(tape);
        const LatentBundle bundle = watched.forward_train(batch, noise);
        loss = objective::dmvae_loss(bundle, batch, w);
        if (!std::isfinite(loss.terms.total))
          abort_run("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(steps));
        const Gradients g = tape.backward(loss.total);
        for (const auto& p : watched.parameters()) grads.push_back(g.of(p));
      }
      try {
        model.set_parameters(adam_step(model.parameters(), grads, state.optimizer, model.parameter_names()));
      } catch (const NumericalError& e) {
        abort_run(std::string(e.what()) + " at epoch " + std::to_string(epoch));
      }
      sum += loss.terms;
      ++steps;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = sum.scaled(1.0 / static_cast<double>(steps));
    const bool eval_now = epoch == config.epochs || (config.eval_every > 0 && epoch % config.eval_every == 0);
    if (eval_now && split.test.count > 0) {
      const eval::EvalReport report = eval::evaluate(model, split.test);
      m.test_accuracy = report.accuracy;
      m.test_f1 = report.f1_macro;
    }

    state.epoch = epoch;
    state.parameters.assign(model.parameters().begin(), model.parameters().end());
    state.rng["gaussian"] = engine_state(gaussian);
    state.rng["gumbel"] = engine_state(gumbel);
    last_good = state;

    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(m);
    if (writing) {
      write_text(metrics_path, metrics_row(m) + '\n', true);
      const bool ckpt_now =
          epoch == config.epochs || (config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0);
      if (ckpt_now) save_checkpoint(config.out_dir / checkpoint_filename(epoch), state);
    }
  }
  // Nothing trained (epochs already reached): still leave a loadable state.
  if (writing && result.metrics.empty()) save_checkpoint(config.out_dir / checkpoint_filename(state.epoch), state);
  result.checkpoint = state;
  return result;
}

}  // namespace dmvae
