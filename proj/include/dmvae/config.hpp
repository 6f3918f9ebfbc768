#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmvae/data.hpp"
#include "dmvae/model.hpp"
#include "dmvae/objective.hpp"
#include "dmvae/trainer.hpp"

namespace dmvae {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kFullEpochs = 500;

/// Every setting of a run, as read from a flat key=value file.
struct RunConfig {
  // Data.
  std::string dataset = "mnist";  // mnist | synth
  std::filesystem::path data_dir;
  std::size_t train_limit = 10000;  // 0: all training images
  std::size_t test_limit = 0;       // 0: all test images
  std::size_t synth_train = 2000;
  std::size_t synth_test = 500;
  std::size_t synth_classes = 4;
  double paired_fraction = 0.01;

  // Model.
  std::size_t private_dim = 10;
  SharedKind shared_kind = SharedKind::discrete;
  std::optional<std::size_t> shared_dim;  // unset: label count (discrete) or 10 (continuous)
  std::size_t hidden_dim = 256;
  double temperature = dist::kDefaultTemperature;

  // Loss.
  double lambda_image = 1.0;
  double lambda_label = 50.0;
  double kl_weight = 1.0;
  double beta_tc_private = 3.0;
  double beta_tc_shared = 0.0;

  // Trainer.
  std::size_t epochs = 60;
  std::size_t batch_size = 100;
  std::optional<std::size_t> paired_batch;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  std::size_t checkpoint_every = 0;
  std::filesystem::path out_dir = "runs/default";

  /// Accepted keys, in dump order.
  static const std::vector<std::string>& keys();

  /// Throws ConfigError for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  void validate() const;
  /// `key=value` lines for every key.
  std::string dump() const;

  ModelConfig model_config(std::size_t image_dim, std::size_t label_classes) const;
  objective::LossWeights loss_weights(std::size_t dataset_size) const;
  TrainConfig train_config() const;
};

/// Applies `key=value` lines (blank lines and `#` comments allowed) on top of `base`.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Builds the train/test split and pairing mask a configuration describes.
/// Throws data::IdxError when MNIST files are missing or malformed.
data::DatasetSplit load_run_data(const RunConfig& config);

}  // namespace dmvae
