#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dmvae/data.hpp"
#include "dmvae/distributions.hpp"
#include "dmvae/rng.hpp"
#include "dmvae/tensor.hpp"

namespace dmvae {

enum class SharedKind { continuous, discrete };
enum class LabelMode { single, multilabel };

const char* to_string(SharedKind kind);
const char* to_string(LabelMode mode);
SharedKind parse_shared_kind(const std::string& s);
LabelMode parse_label_mode(const std::string& s);

struct ModelConfig {
  std::size_t image_dim = 784;
  /// n classes (single-label) or K binary attributes (multi-label).
  std::size_t label_classes = 10;
  std::size_t private_dim = 10;
  SharedKind shared_kind = SharedKind::discrete;
  /// Continuous: Gaussian units. Discrete: must equal label_classes
  /// (one n-way categorical, or K binary categoricals in multi-label mode).
  std::size_t shared_dim = 10;
  std::size_t hidden_dim = 256;
  double temperature = dist::kDefaultTemperature;
  LabelMode label_mode = LabelMode::single;

  void validate() const;
  /// Discrete latent layout: groups x categories.
  std::size_t shared_groups() const;
  std::size_t shared_categories() const;
  /// Width of z_s as fed to the decoders.
  std::size_t shared_width() const;
  /// Width of the shared head of each encoder.
  std::size_t shared_head_width() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Posterior over the shared latent: Gaussian [B, S] or concrete [B, G, C].
using SharedParams = std::variant<dist::GaussianParams, dist::ConcreteParams>;

struct ImageEncoding {
  dist::GaussianParams private_params;
  SharedParams shared;
};

/// Everything one training forward pass produces.
///
/// Image-side entries cover all B rows of the batch. Label, joint and cross
/// entries cover only the paired rows (listed in `paired_rows`), in order;
/// they are empty when no row is paired.
struct LatentBundle {
  SharedKind kind = SharedKind::discrete;
  std::vector<std::size_t> paired_rows;

  // Image modality, all rows.
  std::optional<dist::GaussianParams> private_params;
  Tensor private_sample;
  std::optional<SharedParams> shared_image;        // raw expert
  std::optional<SharedParams> fused_image;         // single-expert fusion
  Tensor shared_sample_image;                      // decoder layout [B, width]
  Tensor shared_log_sample_image;                  // discrete: exact log coordinates
  Tensor recon_image_self;

  // Label modality and bimodal paths, paired rows only.
  std::optional<SharedParams> shared_label;
  std::optional<SharedParams> fused_label;
  Tensor shared_sample_label;
  Tensor shared_log_sample_label;
  Tensor recon_label_self;

  std::optional<SharedParams> fused_joint;
  Tensor shared_sample_joint;
  Tensor shared_log_sample_joint;
  Tensor recon_image_joint;
  Tensor recon_label_joint;

  Tensor cross_private_sample;  // z_p drawn from the prior
  Tensor recon_image_cross;     // image from label's shared sample
  Tensor recon_label_cross;     // label from image's shared sample

  bool has_pairs() const { return !paired_rows.empty(); }
};

class Model {
 public:
  struct Linear {
    std::size_t weight;  // index into parameters(): [in, out]
    std::size_t bias;    // [out]
  };

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization from `engine`.
  Model(const ModelConfig& config, Engine& engine);
  /// All parameters zero.
  static Model zeros(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  std::span<const Tensor> parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }
  void set_parameters(std::vector<Tensor> params);
  void set_parameter(std::size_t i, Tensor value);
  /// Copy whose parameters are registered as leaves of `tape`.
  Model watched(Tape& tape) const;
  /// Copy using `params` as they are (tape associations kept).
  Model with_parameters(std::span<const Tensor> params) const;

  ImageEncoding encode_image(const Tensor& images) const;
  SharedParams encode_label(const Tensor& labels) const;
  /// PoE over the available experts (plus the N(0, I) expert when continuous).
  SharedParams fuse_shared(std::span<const SharedParams> experts) const;
  Tensor decode_image(const Tensor& z_private, const Tensor& z_shared) const;
  Tensor decode_label(const Tensor& z_shared) const;

  /// A draw of z_s in decoder layout [B, width]. For a discrete space
  /// `log_sample` holds the unfloored log coordinates; empty otherwise.
  struct SharedDraw {
    Tensor sample;
    Tensor log_sample;
  };
  SharedDraw draw_shared(const SharedParams& params, NoiseSource& noise) const;
  Tensor sample_shared(const SharedParams& params, NoiseSource& noise) const;
  /// Deterministic z_s: the mean (continuous) or softmax probabilities (discrete).
  Tensor shared_mean(const SharedParams& params) const;

  LatentBundle forward_train(const data::BimodalBatch& batch, NoiseSource& noise) const;

  Linear enc_image_hidden, enc_image_out;
  Linear enc_label_hidden, enc_label_out;
  Linear dec_image_hidden, dec_image_out;
  Linear dec_label_hidden, dec_label_out;

 private:
  explicit Model(const ModelConfig& config);
  Tensor apply(const Linear& layer, const Tensor& x) const;
  SharedParams shared_from_head(const Tensor& head) const;

  ModelConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

/// Row-major [B, width] tensor of a shared sample from its stored layout.
Tensor flatten_rows(const Tensor& t);

}  // namespace dmvae
