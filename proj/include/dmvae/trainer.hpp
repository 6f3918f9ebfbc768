#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmvae/checkpoint.hpp"
#include "dmvae/data.hpp"
#include "dmvae/model.hpp"
#include "dmvae/objective.hpp"

namespace dmvae {

/// Non-finite loss or gradient. Training stops; the last good checkpoint
/// is written first when an output directory is configured.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One bias-corrected Adam update. Throws NumericalError naming the first
/// parameter whose gradient is not finite; `state` is left untouched then.
std::vector<Tensor> adam_step(std::span<const Tensor> params, std::span<const Tensor> grads, OptimizerState& state,
                              std::span<const std::string> names = {});

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 100;
  /// Paired rows appended to every minibatch, cycled through the paired
  /// subset. Unset: min(batch_size, number of paired samples).
  std::optional<std::size_t> paired_batch;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  /// Test metrics every k epochs and after the last one (0: last only).
  std::size_t eval_every = 10;
  /// Checkpoint every k epochs (0: only after the last epoch).
  std::size_t checkpoint_every = 0;
  /// Metrics and checkpoints go here; empty writes nothing.
  std::filesystem::path out_dir;
  /// Echoed into every checkpoint.
  std::map<std::string, std::string> settings;
};

struct EpochMetrics {
  std::uint64_t epoch = 0;
  objective::LossBreakdown loss;  // mean over the epoch's minibatches
  std::optional<double> test_accuracy;
  std::optional<double> test_f1;
  double wall_seconds = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochMetrics> metrics;
};

/// Freshly initialized model and optimizer for `seed`, at epoch 0.
Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& config);

/// Runs epochs (resume->epoch, config.epochs]. Deterministic in
/// (configuration, seed): shuffles depend only on (seed, epoch) and the
/// sampling engines are carried in the checkpoint.
TrainResult train(const TrainConfig& config, const ModelConfig& model, objective::LossWeights weights,
                  const data::DatasetSplit& split, const Checkpoint* resume = nullptr);

const std::vector<std::string>& metrics_columns();
std::string metrics_row(const EpochMetrics& m);

inline constexpr const char* kMetricsFile = "metrics.csv";

}  // namespace dmvae
