#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dmvae/tensor.hpp"

namespace dmvae::data {

// ---------------------------------------------------------------------------
// IDX container (MNIST distribution format)

enum class IdxErrorKind { io, bad_magic, truncated, dimension_overflow };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, std::size_t offset, const std::string& what);
  IdxErrorKind kind() const { return kind_; }
  std::size_t offset() const { return offset_; }

 private:
  IdxErrorKind kind_;
  std::size_t offset_;
};

inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;

/// Unsigned-byte IDX array: dims plus raw bytes in row-major order.
struct IdxArray {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxArray parse_idx(std::span<const std::uint8_t> file);
IdxArray load_idx(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);
void write_idx(const std::filesystem::path& path, const IdxArray& array);

/// Bytes scaled by 1/255 into [0, 1].
std::vector<double> scale_pixels(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Datasets

/// Images and labels held in flat row-major arrays.
struct Dataset {
  std::size_t count = 0;
  std::size_t image_dim = 0;
  std::size_t label_dim = 0;
  std::vector<double> images;  // count x image_dim, values in [0, 1]
  std::vector<double> labels;  // count x label_dim, one-hot or multi-hot
  std::vector<int> classes;    // class index per sample (single-label only)
  std::vector<double> style;   // synthetic only: count x 2 ground-truth style factors

  std::span<const double> image(std::size_t i) const;
  std::span<const double> label(std::size_t i) const;
  /// First `n` samples.
  Dataset head(std::size_t n) const;
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
  std::vector<bool> paired;  // per training sample

  std::size_t dataset_size() const { return train.count; }
  std::size_t paired_count() const;
};

/// Minibatch. Labels of unpaired rows are stored but must not be used.
struct BimodalBatch {
  Tensor images;  // [B, image_dim]
  Tensor labels;  // [B, label_dim]
  std::vector<bool> paired;

  std::size_t size() const { return paired.size(); }
  std::vector<std::size_t> paired_rows() const;
};

BimodalBatch make_batch(const Dataset& ds, std::span<const std::size_t> rows,
                        const std::vector<bool>& paired);

/// Loads `<prefix>-images-idx3-ubyte` and `<prefix>-labels-idx1-ubyte`
/// (prefix "train" or "t10k") from `dir`, keeping at most `limit` samples
/// (0 = all). Labels become one-hot over `classes`.
Dataset load_mnist(const std::filesystem::path& dir, const std::string& prefix, std::size_t limit,
                   std::size_t classes = 10);

/// Exactly round(fraction * count) true entries, chosen uniformly without
/// replacement; a pure function of (count, fraction, seed).
std::vector<bool> make_pairing_mask(std::size_t count, double fraction, std::uint64_t seed);

/// Synthetic bimodal data with 16-pixel images. Pixels 0-3 hold a fixed
/// template per class (shared content); pixels 4-15 are driven by a 2-D
/// Gaussian style factor (brightness, contrast) drawn independently of the
/// class (private content). Supports up to 16 classes.
Dataset synth_bimodal(std::size_t count, std::size_t classes, std::uint64_t seed);

inline constexpr std::size_t kSynthImageDim = 16;
inline constexpr std::size_t kSynthTemplatePixels = 4;

/// Template pixels of class c (before any style modulation).
std::vector<double> synth_template(std::size_t c, std::size_t classes);

DatasetSplit make_synth_split(std::size_t train_count, std::size_t test_count, std::size_t classes,
                              double paired_fraction, std::uint64_t seed);

/// Permutation of the training indices for epoch `epoch`; a pure function of
/// (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch);

}  // namespace dmvae::data
