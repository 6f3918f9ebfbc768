#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dmvae/tensor.hpp"

namespace dmvae {

using Engine = std::mt19937_64;

/// Seed for the stream `name` of run `seed`. Streams are independent, so a
/// new consumer never shifts the draws of an existing one.
std::uint64_t stream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

/// The named streams of one run.
struct RunStreams {
  explicit RunStreams(std::uint64_t seed);

  Engine weights;
  Engine gaussian;
  Engine gumbel;
  Engine mask;
};

std::string engine_state(const Engine& engine);
Engine engine_from_state(const std::string& state);

class NoiseExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Source of the standard-normal and uniform draws a forward pass consumes.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Tensor normal(const Shape& shape) = 0;
  /// Uniform on the open interval (0, 1).
  virtual Tensor uniform(const Shape& shape) = 0;
};

/// Draws from two engines (one per noise kind) owned by the caller.
class EngineNoise final : public NoiseSource {
 public:
  EngineNoise(Engine& gaussian, Engine& gumbel) : gaussian_(gaussian), gumbel_(gumbel) {}
  Tensor normal(const Shape& shape) override;
  Tensor uniform(const Shape& shape) override;

 private:
  Engine& gaussian_;
  Engine& gumbel_;
};

/// Replays fixed buffers; throws NoiseExhausted when a buffer runs out.
class BufferNoise final : public NoiseSource {
 public:
  BufferNoise(std::vector<double> normals, std::vector<double> uniforms)
      : normals_(std::move(normals)), uniforms_(std::move(uniforms)) {}
  Tensor normal(const Shape& shape) override;
  Tensor uniform(const Shape& shape) override;

  std::size_t normals_used() const { return normal_pos_; }
  std::size_t uniforms_used() const { return uniform_pos_; }

 private:
  std::vector<double> normals_;
  std::vector<double> uniforms_;
  std::size_t normal_pos_ = 0;
  std::size_t uniform_pos_ = 0;
};

/// Noise that always returns zeros (normals) and 1/e (uniforms, i.e. zero
/// Gumbel noise). Gives the deterministic "mean" forward pass.
class ZeroNoise final : public NoiseSource {
 public:
  Tensor normal(const Shape& shape) override;
  Tensor uniform(const Shape& shape) override;
};

/// Uniform permutation of 0..n-1 (Fisher-Yates).
std::vector<std::size_t> permutation(std::size_t n, Engine& engine);

}  // namespace dmvae
