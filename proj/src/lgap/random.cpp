#include "lgap/random.hpp"

#include "lgap/error.hpp"

namespace lgap {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix64(mix64(seed) ^ (stream * 0xD1B54A32D192ED03ULL + 1));
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(seed, h);
}

std::uint64_t uniform_index(std::mt19937_64& engine, std::uint64_t bound) {
  if (bound == 0) throw DomainError("uniform_index bound must be positive");
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t r;
  do {
    r = engine();
  } while (r >= limit);
  return r % bound;
}

double uniform_unit(std::mt19937_64& engine) {
  return static_cast<double>(engine() >> 11) * 0x1.0p-53;
}

void SeededNoise::draw(Matrix& out) {
  const auto rows = static_cast<std::size_t>(out.rows());
  while (engines_.size() < rows) {
    engines_.emplace_back(derive_seed(seed_, engines_.size()));
    normals_.emplace_back(0.0, 1.0);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    auto& engine = engines_[r];
    auto& normal = normals_[r];
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      out(static_cast<Eigen::Index>(r), c) = normal(engine);
    }
  }
  draws_ += static_cast<std::uint64_t>(out.size());
}

void ConstantNoise::draw(Matrix& out) {
  if (out.rows() != value_.rows() || out.cols() != value_.cols()) {
    throw ShapeError("constant noise has the wrong shape");
  }
  out = value_;
}

}  // namespace lgap
