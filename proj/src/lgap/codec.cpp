#include "lgap/codec.hpp"

#include "lgap/error.hpp"
#include "lgap/safetensors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdio>
#include <cmath>

namespace lgap {

LatentBatch LatentCodec::encode(const ImageBatch& x) const {
  const SampleShape latent = latent_shape(x.shape);
  Matrix z = encode_rows(x.data, x.shape);
  if (static_cast<std::size_t>(z.cols()) != latent.size()) {
    throw ShapeError(id() + " codec produced a latent of the wrong width");
  }
  return LatentBatch{latent, x.shape, std::move(z)};
}

ImageBatch LatentCodec::decode(const LatentBatch& z) const {
  if (!(latent_shape(z.origin) == z.shape) ||
      static_cast<std::size_t>(z.data.cols()) != z.shape.size()) {
    throw ShapeError("latent " + z.shape.str() + " is not compatible with " + id() +
                     " codec for images " + z.origin.str());
  }
  Matrix x = decode_rows(z.data, z.origin);
  clamp_unit(x);
  return ImageBatch(z.origin, std::move(x));
}

LinearCodec::LinearCodec(SampleShape input, Vector mean, Matrix encoder, Matrix decoder,
                         double calibration_rmse)
    : input_(input),
      mean_(std::move(mean)),
      encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      calibration_rmse_(calibration_rmse) {
  const auto d = static_cast<Eigen::Index>(input_.size());
  if (mean_.size() != d || encoder_.cols() != d || decoder_.rows() != d ||
      decoder_.cols() != encoder_.rows() || encoder_.rows() == 0) {
    throw ShapeError("inconsistent linear codec weights");
  }
}

LinearCodec LinearCodec::load(const std::filesystem::path& path) {
  SafeTensors st;
  try {
    st = SafeTensors::load(path);
  } catch (const IoError& e) {
    throw AdapterError(std::string("pretrained codec unavailable: ") + e.what());
  }
  if (st.metadata().count("kind") == 0 || st.meta("kind") != "linear_codec") {
    throw AdapterError(path.string() + " is not a linear codec checkpoint");
  }
  const auto& dims = st.integers("input_shape");
  if (dims.size() != 3) throw AdapterError("codec input_shape must have 3 entries");
  SampleShape shape{static_cast<std::size_t>(dims[0]), static_cast<std::size_t>(dims[1]),
                    static_cast<std::size_t>(dims[2])};
  return LinearCodec(shape, st.vector("mean"), st.matrix("encoder"), st.matrix("decoder"),
                     std::stod(st.meta("calibration_rmse")));
}

void LinearCodec::save(const std::filesystem::path& path) const {
  SafeTensors st;
  st.put_integers("input_shape", {3},
                  {static_cast<std::int64_t>(input_.channels), static_cast<std::int64_t>(input_.height),
                   static_cast<std::int64_t>(input_.width)});
  st.put("mean", mean_);
  st.put("encoder", encoder_);
  st.put("decoder", decoder_);
  st.metadata()["kind"] = "linear_codec";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", calibration_rmse_);
  st.metadata()["calibration_rmse"] = buf;
  st.save(path);
}

SampleShape LinearCodec::latent_shape(const SampleShape& image) const {
  if (!(image == input_)) {
    throw ShapeError("linear codec expects images " + input_.str() + ", got " + image.str());
  }
  return {static_cast<std::size_t>(encoder_.rows()), 1, 1};
}

Matrix LinearCodec::encode_rows(const Matrix& x, const SampleShape&) const {
  return (x.rowwise() - mean_.transpose()) * encoder_.transpose();
}

Matrix LinearCodec::decode_rows(const Matrix& z, const SampleShape&) const {
  return (z * decoder_.transpose()).rowwise() + mean_.transpose();
}

LinearCodec fit_linear_codec(const ImageBatch& train, std::size_t latent_dim,
                             const ImageBatch& held_out) {
  const auto d = static_cast<Eigen::Index>(train.shape.size());
  if (train.size() < 2) throw DomainError("codec fitting needs at least two samples");
  if (latent_dim == 0 || static_cast<Eigen::Index>(latent_dim) > d) {
    throw DomainError("latent dimension must lie in [1, D]");
  }
  const Vector mean = train.data.colwise().mean().transpose();
  const Matrix centered = train.data.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(train.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::kRuntime, "eigen decomposition failed");
  // Eigenvalues ascend; keep the trailing `latent_dim` columns, largest first.
  const auto k = static_cast<Eigen::Index>(latent_dim);
  Matrix basis = solver.eigenvectors().rightCols(k).rowwise().reverse();
  // Fix the sign of each component so fitting is reproducible.
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::Index arg = 0;
    basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, j) < 0) basis.col(j) *= -1.0;
  }
  LinearCodec codec(train.shape, mean, basis.transpose(), basis, 0.0);
  const double rmse = reconstruction_rmse(codec, held_out);
  return LinearCodec(train.shape, mean, basis.transpose(), basis, rmse);
}

double reconstruction_rmse(const LatentCodec& codec, const ImageBatch& x) {
  if (x.size() == 0) throw DomainError("reconstruction error needs samples");
  const ImageBatch round_trip = codec.decode(codec.encode(x));
  return std::sqrt((round_trip.data - x.data).squaredNorm() / static_cast<double>(x.data.size()));
}

ResizePolicy parse_resize_policy(const std::string& name) {
  if (name == "none") return ResizePolicy::kNone;
  if (name == "nearest") return ResizePolicy::kNearest;
  if (name == "bilinear") return ResizePolicy::kBilinear;
  throw ConfigError("unknown resize policy '" + name + "'");
}

std::string to_string(ResizePolicy policy) {
  switch (policy) {
    case ResizePolicy::kNone: return "none";
    case ResizePolicy::kNearest: return "nearest";
    case ResizePolicy::kBilinear: return "bilinear";
  }
  return "none";
}

Matrix resize_images(const Matrix& x, const SampleShape& from, const SampleShape& to,
                     ResizePolicy policy) {
  if (from.channels != to.channels) throw ShapeError("resize cannot change channel count");
  if (from == to) return x;
  if (policy == ResizePolicy::kNone) {
    throw ShapeError("images " + from.str() + " need resizing to " + to.str() +
                     " but the resize policy is 'none'");
  }
  Matrix out(x.rows(), static_cast<Eigen::Index>(to.size()));
  const double sy = static_cast<double>(from.height) / static_cast<double>(to.height);
  const double sx = static_cast<double>(from.width) / static_cast<double>(to.width);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    for (std::size_t c = 0; c < to.channels; ++c) {
      const std::size_t src_base = c * from.height * from.width;
      const std::size_t dst_base = c * to.height * to.width;
      for (std::size_t i = 0; i < to.height; ++i) {
        for (std::size_t j = 0; j < to.width; ++j) {
          double v;
          if (policy == ResizePolicy::kNearest) {
            const auto si = std::min(from.height - 1, static_cast<std::size_t>((i + 0.5) * sy));
            const auto sj = std::min(from.width - 1, static_cast<std::size_t>((j + 0.5) * sx));
            v = x(n, static_cast<Eigen::Index>(src_base + si * from.width + sj));
          } else {
            // Half-pixel centres, edge-clamped.
            const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(from.height - 1));
            const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(from.width - 1));
            const auto y0 = static_cast<std::size_t>(fy);
            const auto x0 = static_cast<std::size_t>(fx);
            const auto y1 = std::min(y0 + 1, from.height - 1);
            const auto x1 = std::min(x0 + 1, from.width - 1);
            const double wy = fy - static_cast<double>(y0);
            const double wx = fx - static_cast<double>(x0);
            auto at = [&](std::size_t yy, std::size_t xx) {
              return x(n, static_cast<Eigen::Index>(src_base + yy * from.width + xx));
            };
            v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
          }
          out(n, static_cast<Eigen::Index>(dst_base + i * to.width + j)) = v;
        }
      }
    }
  }
  return out;
}

ResizingCodec::ResizingCodec(std::shared_ptr<const LinearCodec> inner, ResizePolicy policy)
    : inner_(std::move(inner)), policy_(policy) {
  if (!inner_) throw AdapterError("resizing codec needs an inner codec");
}

std::string ResizingCodec::id() const { return inner_->id() + "+resize:" + to_string(policy_); }

SampleShape ResizingCodec::latent_shape(const SampleShape& image) const {
  if (image.channels != inner_->input_shape().channels ||
      (policy_ == ResizePolicy::kNone && !(image == inner_->input_shape()))) {
    throw ShapeError("codec expects images " + inner_->input_shape().str() + ", got " + image.str());
  }
  return inner_->latent_shape(inner_->input_shape());
}

Matrix ResizingCodec::encode_rows(const Matrix& x, const SampleShape& image) const {
  const Matrix native = resize_images(x, image, inner_->input_shape(), policy_);
  return inner_->encode(ImageBatch(inner_->input_shape(), native)).data;
}

Matrix ResizingCodec::decode_rows(const Matrix& z, const SampleShape& image) const {
  const SampleShape native = inner_->input_shape();
  LatentBatch inner_latent{inner_->latent_shape(native), native, z};
  const ImageBatch decoded = inner_->decode(inner_latent);
  return resize_images(decoded.data, native, image, policy_);
}

}  // namespace lgap
