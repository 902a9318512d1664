#include "lgap/tensor.hpp"

#include "lgap/error.hpp"

#include <cmath>

namespace lgap {

std::string SampleShape::str() const {
  return "(" + std::to_string(channels) + "," + std::to_string(height) + "," +
         std::to_string(width) + ")";
}

ImageBatch::ImageBatch(SampleShape s, Matrix d, std::optional<Labels> l)
    : shape(s), data(std::move(d)), labels(std::move(l)) {
  if (static_cast<std::size_t>(data.cols()) != shape.size()) {
    throw ShapeError("image data has " + std::to_string(data.cols()) +
                     " columns, shape " + shape.str() + " needs " +
                     std::to_string(shape.size()));
  }
  if (labels && labels->size() != static_cast<std::size_t>(data.rows())) {
    throw ShapeError("label count does not match batch size");
  }
}

const Labels& ImageBatch::require_labels() const {
  if (!labels) throw DomainError("operation requires labelled images");
  return *labels;
}

ImageBatch ImageBatch::select(const std::vector<std::size_t>& indices) const {
  Matrix out(static_cast<Eigen::Index>(indices.size()), data.cols());
  std::optional<Labels> out_labels;
  if (labels) out_labels.emplace();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw DomainError("sample index out of range");
    out.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(indices[i]));
    if (labels) out_labels->push_back((*labels)[indices[i]]);
  }
  return ImageBatch(shape, std::move(out), std::move(out_labels));
}

ImageBatch ImageBatch::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw DomainError("slice out of range");
  Matrix out = data.middleRows(static_cast<Eigen::Index>(begin),
                               static_cast<Eigen::Index>(end - begin));
  std::optional<Labels> out_labels;
  if (labels) out_labels.emplace(labels->begin() + begin, labels->begin() + end);
  return ImageBatch(shape, std::move(out), std::move(out_labels));
}

void ImageBatch::validate(std::optional<std::size_t> num_classes) const {
  if (static_cast<std::size_t>(data.cols()) != shape.size()) {
    throw ShapeError("image data does not match its declared shape");
  }
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    const double v = data.data()[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw DomainError("image value outside [0,1]");
    }
  }
  if (labels && num_classes) {
    for (auto y : *labels) {
      if (y < 0 || static_cast<std::size_t>(y) >= *num_classes) {
        throw DomainError("label " + std::to_string(y) + " outside [0," +
                          std::to_string(*num_classes) + ")");
      }
    }
  }
}

void clamp_unit(Matrix& m) { m = m.cwiseMax(0.0).cwiseMin(1.0); }

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace lgap
