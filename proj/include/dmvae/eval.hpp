#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dmvae/data.hpp"
#include "dmvae/model.hpp"
#include "dmvae/tensor.hpp"

namespace dmvae::eval {

/// Attribute decision threshold in multi-label mode.
inline constexpr double kMultilabelThreshold = 0.5;

/// Counting metrics. In single-label mode the per-class counts are
/// one-vs-rest; in multi-label mode they are per attribute.
struct EvalReport {
  LabelMode mode = LabelMode::single;
  std::size_t n_samples = 0;
  double accuracy = 0.0;
  double f1_macro = 0.0;
  std::vector<std::size_t> true_positive;
  std::vector<std::size_t> false_positive;
  std::vector<std::size_t> false_negative;
  std::vector<std::size_t> support;

  /// 2TP / (2TP + FP + FN), with 0/0 -> 0.
  double f1(std::size_t c) const;
};

/// Per-sample decisions. Single-label: one class index per sample.
/// Multi-label: `classes` 0/1 entries per sample, row-major.
struct Predictions {
  LabelMode mode = LabelMode::single;
  std::size_t classes = 0;
  std::vector<int> values;

  std::size_t size() const;
};

/// Mode of the fused shared posterior from images alone, in decoder layout:
/// the one-hot vertex of the largest logit per group (discrete; ties go to
/// the lowest index) or the mean (continuous).
Tensor shared_mode(const Model& model, const Tensor& images);

/// Label decoder output at the shared mode [B, n]: the cross-generated label.
Tensor cross_modal_scores(const Model& model, const Tensor& images);

/// Deterministic label decisions from images alone: argmax of the
/// cross-generated label (ties to the lowest class index), or a 0.5
/// threshold per attribute in multi-label mode.
Predictions classify_cross_modal(const Model& model, const Tensor& images);

/// Ground-truth labels of a dataset in Predictions layout.
Predictions truth_of(const data::Dataset& ds, LabelMode mode);

/// Exact counting metrics. Accuracy is correct / n over samples (single) or
/// over attribute decisions (multi-label). Macro F1 averages over the classes
/// that occur in the predictions or the truth.
EvalReport score(const Predictions& predicted, const Predictions& truth);

/// Classifies `ds` in chunks of `chunk` rows and scores it.
EvalReport evaluate(const Model& model, const data::Dataset& ds, std::size_t chunk = 1000);

/// Grayscale image, row-major, one byte per pixel.
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
};

/// Probability in [0, 1] to a byte, rounding half to even.
std::uint8_t quantize(double p);

/// Shared-space traversal for a discrete model. One row per source image;
/// columns are the source, its reconstruction (private mean with the shared
/// mode), then one column per one-hot shared code decoded with the same
/// private mean.
GrayImage render_traversal(const Model& model, const Tensor& style_sources);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
void traversal_grid(const Model& model, const Tensor& style_sources, const std::filesystem::path& out_path);

/// CSV with a header row and one row per sample: index, label, private
/// means, then the shared posterior parameters of the image encoder.
void export_embeddings(const Model& model, const data::Dataset& ds, const std::filesystem::path& out_path,
                       LabelMode mode = LabelMode::single);
std::vector<std::string> embedding_header(const ModelConfig& config);

/// Flat key=value report.
void write_report(const std::filesystem::path& path, const EvalReport& report,
                  const std::map<std::string, std::string>& extra = {});
std::string format_report(const EvalReport& report, const std::map<std::string, std::string>& extra = {});

}  // namespace dmvae::eval
