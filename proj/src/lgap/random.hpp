#pragma once

#include "lgap/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace lgap {

// splitmix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

// Unbiased integer in [0, bound) by rejection on a 64-bit engine.
std::uint64_t uniform_index(std::mt19937_64& engine, std::uint64_t bound);
// Double in [0,1) from the top 53 bits of one engine draw.
double uniform_unit(std::mt19937_64& engine);

// Source of standard normal draws shaped like a latent batch. Every draw is
// attributable to (seed, row, draw index within that row).
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  // Fills `out` (rows = samples) with fresh draws.
  virtual void draw(Matrix& out) = 0;
};

// Row i uses its own engine seeded with derive_seed(seed, i), so the draws of
// a sample do not depend on the rest of the batch.
class SeededNoise final : public NoiseSource {
 public:
  explicit SeededNoise(std::uint64_t seed) : seed_(seed) {}

  void draw(Matrix& out) override;

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

 private:
  std::uint64_t seed_;
  std::vector<std::mt19937_64> engines_;
  std::vector<std::normal_distribution<double>> normals_;
  std::uint64_t draws_ = 0;
};

class ZeroNoise final : public NoiseSource {
 public:
  void draw(Matrix& out) override { out.setZero(); }
};

// Replays one fixed matrix on every draw (test and analytic use).
class ConstantNoise final : public NoiseSource {
 public:
  explicit ConstantNoise(Matrix value) : value_(std::move(value)) {}
  void draw(Matrix& out) override;

 private:
  Matrix value_;
};

}  // namespace lgap
