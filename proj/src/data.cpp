#include "dmvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "dmvae/rng.hpp"

namespace dmvae::data {
namespace {

std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789ABCDEF";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) s += digits[(v >> shift) & 0xF];
  return s;
}

std::uint32_t read_be32(std::span<const std::uint8_t> file, std::size_t offset) {
  if (offset + 4 > file.size())
    throw IdxError(IdxErrorKind::truncated, offset,
                   "truncated header at offset " + std::to_string(offset));
  return (std::uint32_t{file[offset]} << 24) | (std::uint32_t{file[offset + 1]} << 16) |
         (std::uint32_t{file[offset + 2]} << 8) | std::uint32_t{file[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

// Arrays beyond this many elements are rejected as corrupt headers.
constexpr std::uint64_t kMaxIdxElements = std::uint64_t{1} << 32;

}  // namespace

IdxError::IdxError(IdxErrorKind kind, std::size_t offset, const std::string& what)
    : std::runtime_error(what), kind_(kind), offset_(offset) {}

IdxArray parse_idx(std::span<const std::uint8_t> file) {
  IdxArray out;
  out.magic = read_be32(file, 0);
  if (out.magic != kIdxLabelsMagic && out.magic != kIdxImagesMagic)
    throw IdxError(IdxErrorKind::bad_magic, 0, "bad magic at offset 0: " + hex32(out.magic));
  const std::size_t ndims = out.magic & 0xFF;
  std::uint64_t total = 1;
  for (std::size_t d = 0; d < ndims; ++d) {
    const std::size_t offset = 4 + 4 * d;
    const auto dim = read_be32(file, offset);
    total *= dim;
    if (total > kMaxIdxElements)
      throw IdxError(IdxErrorKind::dimension_overflow, offset,
                     "dimension overflow at offset " + std::to_string(offset));
    out.dims.push_back(dim);
  }
  const std::size_t data_offset = 4 + 4 * ndims;
  if (file.size() < data_offset + total)
    throw IdxError(IdxErrorKind::truncated, file.size(),
                   "truncated data at offset " + std::to_string(file.size()) + ": expected " +
                       std::to_string(total) + " bytes after offset " + std::to_string(data_offset));
  out.bytes.assign(file.begin() + static_cast<std::ptrdiff_t>(data_offset),
                   file.begin() + static_cast<std::ptrdiff_t>(data_offset + total));
  return out;
}

IdxArray load_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxErrorKind::io, 0, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_idx(bytes);
  } catch (const IdxError& e) {
    throw IdxError(e.kind(), e.offset(), path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
  std::vector<std::uint8_t> out;
  out.reserve(4 + 4 * array.dims.size() + array.bytes.size());
  put_be32(out, array.magic);
  for (auto d : array.dims) put_be32(out, d);
  out.insert(out.end(), array.bytes.begin(), array.bytes.end());
  return out;
}

void write_idx(const std::filesystem::path& path, const IdxArray& array) {
  const auto bytes = encode_idx(array);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IdxError(IdxErrorKind::io, 0, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<double> scale_pixels(std::span<const std::uint8_t> bytes) {
  std::vector<double> out(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) out[i] = bytes[i] / 255.0;
  return out;
}

// ---------------------------------------------------------------------------

std::span<const double> Dataset::image(std::size_t i) const {
  return std::span(images).subspan(i * image_dim, image_dim);
}

std::span<const double> Dataset::label(std::size_t i) const {
  return std::span(labels).subspan(i * label_dim, label_dim);
}

Dataset Dataset::head(std::size_t n) const {
  Dataset out = *this;
  n = std::min(n, count);
  out.count = n;
  out.images.resize(n * image_dim);
  out.labels.resize(n * label_dim);
  if (!classes.empty()) out.classes.resize(n);
  if (!style.empty()) out.style.resize(n * 2);
  return out;
}

std::size_t DatasetSplit::paired_count() const {
  return static_cast<std::size_t>(std::count(paired.begin(), paired.end(), true));
}

std::vector<std::size_t> BimodalBatch::paired_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < paired.size(); ++i)
    if (paired[i]) rows.push_back(i);
  return rows;
}

BimodalBatch make_batch(const Dataset& ds, std::span<const std::size_t> rows,
                        const std::vector<bool>& paired) {
  const auto b = rows.size();
  std::vector<double> images(b * ds.image_dim);
  std::vector<double> labels(b * ds.label_dim);
  std::vector<bool> mask(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto r = rows[i];
    std::ranges::copy(ds.image(r), images.begin() + static_cast<std::ptrdiff_t>(i * ds.image_dim));
    std::ranges::copy(ds.label(r), labels.begin() + static_cast<std::ptrdiff_t>(i * ds.label_dim));
    mask[i] = paired.empty() ? false : paired[r];
  }
  return {Tensor({b, ds.image_dim}, std::move(images)), Tensor({b, ds.label_dim}, std::move(labels)),
          std::move(mask)};
}

Dataset load_mnist(const std::filesystem::path& dir, const std::string& prefix, std::size_t limit,
                   std::size_t classes) {
  const auto images = load_idx(dir / (prefix + "-images-idx3-ubyte"));
  const auto labels = load_idx(dir / (prefix + "-labels-idx1-ubyte"));
  if (images.magic != kIdxImagesMagic || labels.magic != kIdxLabelsMagic)
    throw IdxError(IdxErrorKind::bad_magic, 0, "image/label files swapped in " + dir.string());
  if (images.dims[0] != labels.dims[0])
    throw IdxError(IdxErrorKind::truncated, 4, "image and label counts differ in " + dir.string());

  Dataset ds;
  ds.count = images.dims[0];
  if (limit > 0) ds.count = std::min<std::size_t>(ds.count, limit);
  ds.image_dim = std::size_t{images.dims[1]} * images.dims[2];
  ds.label_dim = classes;
  ds.images = scale_pixels(std::span(images.bytes).first(ds.count * ds.image_dim));
  ds.labels.assign(ds.count * classes, 0.0);
  ds.classes.resize(ds.count);
  for (std::size_t i = 0; i < ds.count; ++i) {
    const int c = labels.bytes[i];
    if (static_cast<std::size_t>(c) >= classes)
      throw IdxError(IdxErrorKind::bad_magic, 8 + i, "label " + std::to_string(c) + " out of range");
    ds.classes[i] = c;
    ds.labels[i * classes + static_cast<std::size_t>(c)] = 1.0;
  }
  return ds;
}

std::vector<bool> make_pairing_mask(std::size_t count, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw std::invalid_argument("paired fraction must lie in [0, 1], got " + std::to_string(fraction));
  const auto k = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  Engine engine(stream_seed(seed, "mask"));
  const auto order = permutation(count, engine);
  std::vector<bool> mask(count, false);
  for (std::size_t i = 0; i < k; ++i) mask[order[i]] = true;
  return mask;
}

std::vector<double> synth_template(std::size_t c, std::size_t classes) {
  constexpr double lo = 0.05, hi = 0.95;
  std::vector<double> t(kSynthTemplatePixels, lo);
  if (classes <= kSynthTemplatePixels) {
    t[c] = hi;
  } else {
    for (std::size_t b = 0; b < kSynthTemplatePixels; ++b)
      if ((c >> b) & 1U) t[b] = hi;
  }
  return t;
}

Dataset synth_bimodal(std::size_t count, std::size_t classes, std::uint64_t seed) {
  if (classes == 0 || classes > 16) throw std::invalid_argument("synth_bimodal supports 1..16 classes");
  if (count < classes) throw std::invalid_argument("synth_bimodal: count must be >= classes");

  Dataset ds;
  ds.count = count;
  ds.image_dim = kSynthImageDim;
  ds.label_dim = classes;
  ds.images.resize(count * kSynthImageDim);
  ds.labels.assign(count * classes, 0.0);
  ds.classes.resize(count);
  ds.style.resize(count * 2);

  Engine style_engine(stream_seed(seed, "synth-style"));
  EngineNoise noise(style_engine, style_engine);
  const Tensor style = noise.normal({count, 2});

  constexpr std::size_t style_pixels = kSynthImageDim - kSynthTemplatePixels;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t c = i % classes;
    ds.classes[i] = static_cast<int>(c);
    ds.labels[i * classes + c] = 1.0;
    const auto tmpl = synth_template(c, classes);
    double* img = ds.images.data() + i * kSynthImageDim;
    std::ranges::copy(tmpl, img);

    const double brightness = style[2 * i];
    const double contrast = style[2 * i + 1];
    ds.style[2 * i] = brightness;
    ds.style[2 * i + 1] = contrast;
    for (std::size_t j = 0; j < style_pixels; ++j) {
      const double pattern = std::cos(2.0 * std::numbers::pi * static_cast<double>(j) / style_pixels);
      img[kSynthTemplatePixels + j] = std::clamp(0.5 + 0.15 * brightness + 0.15 * contrast * pattern, 0.02, 0.98);
    }
  }
  return ds;
}

DatasetSplit make_synth_split(std::size_t train_count, std::size_t test_count, std::size_t classes,
                              double paired_fraction, std::uint64_t seed) {
  DatasetSplit split;
  split.train = synth_bimodal(train_count, classes, stream_seed(seed, "synth-train"));
  split.test = synth_bimodal(test_count, classes, stream_seed(seed, "synth-test"));
  split.paired = make_pairing_mask(train_count, paired_fraction, seed);
  return split;
}

std::vector<std::size_t> epoch_order(std::size_t count, std::uint64_t seed, std::uint64_t epoch) {
  Engine engine(stream_seed(seed, "shuffle", epoch));
  return permutation(count, engine);
}

}  // namespace dmvae::data
