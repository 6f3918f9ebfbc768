#include "dmvae/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace dmvae {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform on (0, 1): 53 random bits, offset by half a step so 0 is excluded.
double open_unit(Engine& e) {
  return (static_cast<double>(e() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return splitmix64(splitmix64(seed) ^ h ^ splitmix64(index + 0x51ed27ULL));
}

RunStreams::RunStreams(std::uint64_t seed)
    : weights(stream_seed(seed, "weights")),
      gaussian(stream_seed(seed, "gaussian-noise")),
      gumbel(stream_seed(seed, "gumbel-noise")),
      mask(stream_seed(seed, "mask")) {}

std::string engine_state(const Engine& engine) {
  std::ostringstream os;
  os << engine;
  return os.str();
}

Engine engine_from_state(const std::string& state) {
  Engine e;
  std::istringstream is(state);
  is >> e;
  if (!is) throw std::runtime_error("corrupt RNG state");
  return e;
}

Tensor EngineNoise::normal(const Shape& shape) {
  std::vector<double> out(numel_of(shape));
  for (auto& v : out) {
    const double u1 = open_unit(gaussian_);
    const double u2 = open_unit(gaussian_);
    v = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  return Tensor(shape, std::move(out));
}

Tensor EngineNoise::uniform(const Shape& shape) {
  std::vector<double> out(numel_of(shape));
  for (auto& v : out) v = open_unit(gumbel_);
  return Tensor(shape, std::move(out));
}

Tensor BufferNoise::normal(const Shape& shape) {
  const auto n = numel_of(shape);
  if (normal_pos_ + n > normals_.size())
    throw NoiseExhausted("normal noise buffer exhausted: need " + std::to_string(n) + " more after " +
                         std::to_string(normal_pos_) + " of " + std::to_string(normals_.size()));
  std::vector<double> out(normals_.begin() + static_cast<std::ptrdiff_t>(normal_pos_),
                          normals_.begin() + static_cast<std::ptrdiff_t>(normal_pos_ + n));
  normal_pos_ += n;
  return Tensor(shape, std::move(out));
}

Tensor BufferNoise::uniform(const Shape& shape) {
  const auto n = numel_of(shape);
  if (uniform_pos_ + n > uniforms_.size())
    throw NoiseExhausted("uniform noise buffer exhausted: need " + std::to_string(n) + " more after " +
                         std::to_string(uniform_pos_) + " of " + std::to_string(uniforms_.size()));
  std::vector<double> out(uniforms_.begin() + static_cast<std::ptrdiff_t>(uniform_pos_),
                          uniforms_.begin() + static_cast<std::ptrdiff_t>(uniform_pos_ + n));
  uniform_pos_ += n;
  return Tensor(shape, std::move(out));
}

Tensor ZeroNoise::normal(const Shape& shape) { return Tensor::zeros(shape); }

Tensor ZeroNoise::uniform(const Shape& shape) { return Tensor::full(shape, std::exp(-1.0)); }

std::vector<std::size_t> permutation(std::size_t n, Engine& engine) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(
        (static_cast<unsigned __int128>(engine()) * static_cast<unsigned __int128>(i)) >> 64);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

}  // namespace dmvae
