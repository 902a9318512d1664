#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace lgap {

// Row-major so that each sample of a batch is one contiguous row.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Labels = std::vector<std::int64_t>;

// Per-sample shape (channels, height, width).
struct SampleShape {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
  bool operator==(const SampleShape&) const = default;
  std::string str() const;
};

// A batch of images, values in [0,1], stored as an (N, C*H*W) matrix.
struct ImageBatch {
  SampleShape shape;
  Matrix data;
  std::optional<Labels> labels;

  ImageBatch() = default;
  ImageBatch(SampleShape s, Matrix d, std::optional<Labels> l = std::nullopt);

  std::size_t size() const { return static_cast<std::size_t>(data.rows()); }
  bool has_labels() const { return labels.has_value(); }
  const Labels& require_labels() const;

  // Rows `indices` in order, labels carried along.
  ImageBatch select(const std::vector<std::size_t>& indices) const;
  ImageBatch slice(std::size_t begin, std::size_t end) const;

  // Throws DomainError when any value lies outside [0,1] or a label is out
  // of range.
  void validate(std::optional<std::size_t> num_classes = std::nullopt) const;
};

// A batch in the codec's latent space. `origin` is the image shape it decodes to.
struct LatentBatch {
  SampleShape shape;
  SampleShape origin;
  Matrix data;

  std::size_t size() const { return static_cast<std::size_t>(data.rows()); }
};

void clamp_unit(Matrix& m);
bool all_finite(const Matrix& m);

}  // namespace lgap
