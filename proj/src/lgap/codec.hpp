#pragma once

#include "lgap/tensor.hpp"

#include <filesystem>
#include <memory>
#include <string>

namespace lgap {

// Encoder/decoder pair between image space and the space diffusion runs in.
// Implementations are deterministic and read-only after construction.
class LatentCodec {
 public:
  virtual ~LatentCodec() = default;

  virtual std::string id() const = 0;
  // Latent shape for images of `image` shape; ShapeError when unsupported.
  virtual SampleShape latent_shape(const SampleShape& image) const = 0;

  LatentBatch encode(const ImageBatch& x) const;
  // Always clamps to [0,1].
  ImageBatch decode(const LatentBatch& z) const;

 protected:
  virtual Matrix encode_rows(const Matrix& x, const SampleShape& image) const = 0;
  virtual Matrix decode_rows(const Matrix& z, const SampleShape& image) const = 0;
};

class IdentityCodec final : public LatentCodec {
 public:
  std::string id() const override { return "identity"; }
  SampleShape latent_shape(const SampleShape& image) const override { return image; }

 protected:
  Matrix encode_rows(const Matrix& x, const SampleShape&) const override { return x; }
  Matrix decode_rows(const Matrix& z, const SampleShape&) const override { return z; }
};

// Pretrained affine autoencoder loaded from a safetensors checkpoint:
//   z = (x - mean) E^T,   x = z D^T + mean.
// The checkpoint records the reconstruction RMSE measured on held-out data when
// it was fitted; that number is the tolerance floor for anything downstream.
class LinearCodec final : public LatentCodec {
 public:
  LinearCodec(SampleShape input, Vector mean, Matrix encoder, Matrix decoder,
              double calibration_rmse);

  static LinearCodec load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::string id() const override { return "pretrained:linear"; }
  SampleShape latent_shape(const SampleShape& image) const override;
  const SampleShape& input_shape() const { return input_; }
  double calibration_rmse() const { return calibration_rmse_; }

 protected:
  Matrix encode_rows(const Matrix& x, const SampleShape& image) const override;
  Matrix decode_rows(const Matrix& z, const SampleShape& image) const override;

 private:
  SampleShape input_;
  Vector mean_;
  Matrix encoder_;  // (k, D)
  Matrix decoder_;  // (D, k)
  double calibration_rmse_;
};

// Principal-component codec with `latent_dim` components. The reconstruction
// RMSE on `held_out` becomes the codec's calibration constant.
LinearCodec fit_linear_codec(const ImageBatch& train, std::size_t latent_dim,
                             const ImageBatch& held_out);

double reconstruction_rmse(const LatentCodec& codec, const ImageBatch& x);

enum class ResizePolicy { kNone, kNearest, kBilinear };

ResizePolicy parse_resize_policy(const std::string& name);
std::string to_string(ResizePolicy policy);

Matrix resize_images(const Matrix& x, const SampleShape& from, const SampleShape& to,
                     ResizePolicy policy);

// Resamples images to the inner codec's native input size before encoding and
// back to the original size after decoding.
class ResizingCodec final : public LatentCodec {
 public:
  ResizingCodec(std::shared_ptr<const LinearCodec> inner, ResizePolicy policy);

  std::string id() const override;
  SampleShape latent_shape(const SampleShape& image) const override;

 protected:
  Matrix encode_rows(const Matrix& x, const SampleShape& image) const override;
  Matrix decode_rows(const Matrix& z, const SampleShape& image) const override;

 private:
  std::shared_ptr<const LinearCodec> inner_;
  ResizePolicy policy_;
};

}  // namespace lgap
