#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmvae/model.hpp"
#include "dmvae/tensor.hpp"

namespace dmvae {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "DMVAE-CHECKPOINT";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Adam moments and hyperparameters.
struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static OptimizerState for_parameters(std::span<const Tensor> params, double lr);
};

/// Everything needed to resume a run exactly.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  ModelConfig model;
  std::vector<std::string> names;
  std::vector<Tensor> parameters;
  OptimizerState optimizer;
  std::uint64_t epoch = 0;
  std::uint64_t seed = 0;
  /// Serialized engine states by stream name.
  std::map<std::string, std::string> rng;
  /// Free-form run settings echoed for reconstruction.
  std::map<std::string, std::string> settings;
};

bool operator==(const OptimizerState& a, const OptimizerState& b);
bool operator==(const Checkpoint& a, const Checkpoint& b);

/// Layout: the magic line, a little-endian u64 manifest length, a key=value
/// text manifest, then every tensor as raw little-endian f64 at the offsets
/// the manifest lists.
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// `ckpt_epoch{e}.dmv`
std::string checkpoint_filename(std::uint64_t epoch);

/// Model holding the checkpoint's configuration and parameters.
Model model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace dmvae
