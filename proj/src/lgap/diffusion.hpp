#pragma once

#include "lgap/codec.hpp"
#include "lgap/conditioning.hpp"
#include "lgap/nn.hpp"
#include "lgap/random.hpp"
#include "lgap/schedules.hpp"
#include "lgap/tensor.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace lgap {

// Token count L and width d of the text condition a denoiser consumes.
struct ConditionContract {
  std::size_t tokens = 0;
  std::size_t dim = 0;
  bool operator==(const ConditionContract&) const = default;
};

// One reverse step g(z_k, k, noise, C) -> z_{k-1}. The noise draw is passed
// in so deterministic (zero-noise) and stochastic samplers share the contract.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  virtual std::string kind() const = 0;
  // Latent shape this denoiser runs on; nullopt when any shape is accepted.
  virtual std::optional<SampleShape> latent_shape() const = 0;
  virtual ConditionContract contract() const = 0;
  // Embedding of the null caption, one (L*d) row.
  virtual RowVector unconditional_embedding() const;

  virtual Matrix step(const Matrix& z, std::size_t k, const Matrix& noise,
                      const TextCondition& condition, const VarianceSchedule& schedule) const = 0;

  virtual nlohmann::json describe() const;
};

// Returns its input unchanged at every step.
class IdentityDenoiser final : public Denoiser {
 public:
  explicit IdentityDenoiser(ConditionContract contract) : contract_(contract) {}

  std::string kind() const override { return "stub"; }
  std::optional<SampleShape> latent_shape() const override { return std::nullopt; }
  ConditionContract contract() const override { return contract_; }
  Matrix step(const Matrix& z, std::size_t, const Matrix&, const TextCondition&,
              const VarianceSchedule&) const override {
    return z;
  }

 private:
  ConditionContract contract_;
};

struct ToyDenoiserShape {
  SampleShape latent;
  ConditionContract contract;
  std::size_t hidden = 256;
  std::size_t time_features = 32;
};

// Small denoising network F with variance-normalised preconditioning. With
// s = sqrt(abar_k), sigma = sqrt(1 - abar_k), nu = sigma / s and
// y = z / s - mu (mu, sd: scalar mean and std of the training latents):
//   x0_hat  = mu + c_skip y + c_out F(c_in y, k, c)
//   eps_hat = (z - s x0_hat) / sigma
// with c_in = 1/sqrt(nu^2 + sd^2), c_skip = sd^2/(nu^2 + sd^2),
// c_out = nu sd/sqrt(nu^2 + sd^2). F is
//   h1 = silu(W1 u + T1 tau(k) + C1 c + b1)
//   h2 = silu(W2 h1 + T2 tau(k) + C2 c + b2)
//   F  = W3 h2 + b3
// where tau is a sinusoidal embedding of k/T and c the pooled caption
// embedding. The reverse step is the DDPM ancestral update with posterior
// variance, and classifier-free guidance when guidance_scale != 1.
class ToyDenoiser final : public Denoiser {
 public:
  ToyDenoiser(ToyDenoiserShape shape, VarianceSchedule schedule);

  void initialize(std::uint64_t seed);

  std::string kind() const override { return "toy"; }
  std::optional<SampleShape> latent_shape() const override { return shape_.latent; }
  ConditionContract contract() const override { return shape_.contract; }
  Matrix step(const Matrix& z, std::size_t k, const Matrix& noise, const TextCondition& condition,
              const VarianceSchedule& schedule) const override;
  nlohmann::json describe() const override;

  // Predicted noise / clean latent for rows of z at per-row steps.
  Matrix predict_noise(const Matrix& z, const std::vector<std::size_t>& steps,
                       const Matrix& pooled) const;
  Matrix predict_clean(const Matrix& z, const std::vector<std::size_t>& steps,
                       const Matrix& pooled) const;

  // Squared error of F against its target for clean latents `clean`, summed
  // over the batch and divided by the latent size; gradients are accumulated
  // for the mean over all elements.
  double accumulate_gradients(const Matrix& z, const std::vector<std::size_t>& steps,
                              const Matrix& pooled, const Matrix& clean);
  std::vector<nn::ParamRef> parameters();
  void zero_grad();

  void set_data_statistics(double mean, double stdev);
  double data_mean() const { return data_mean_; }
  double data_std() const { return data_std_; }

  double guidance_scale() const { return guidance_scale_; }
  void set_guidance_scale(double s) { guidance_scale_ = s; }
  const VarianceSchedule& schedule() const { return schedule_; }
  const ToyDenoiserShape& shape() const { return shape_; }

  // Training state carried with the checkpoint.
  std::size_t epochs_seen = 0;
  std::vector<double> loss_history;

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<ToyDenoiser> load(const std::filesystem::path& path);

 private:
  struct Trace {
    Matrix time, cond, a1, h1, a2, h2;
  };
  struct Precondition {
    Vector s, sigma, c_in, c_skip, c_out;
  };
  Precondition precondition(const std::vector<std::size_t>& steps) const;
  Matrix time_embedding(const std::vector<std::size_t>& steps) const;
  // x0_hat for the given pooled condition; y is z / s - mu.
  Matrix clean_estimate(const Matrix& y, const Precondition& p, const Matrix& time, const Matrix& pooled) const;
  Matrix forward(const Matrix& z, const Matrix& time, const Matrix& pooled, Trace* trace) const;

  ToyDenoiserShape shape_;
  VarianceSchedule schedule_;
  double guidance_scale_ = 1.0;
  double data_mean_ = 0.0;
  double data_std_ = 1.0;
  nn::Dense in_, mid_, out_, time1_, time2_, cond1_, cond2_;
};

// z_k = sqrt(1 - beta_k) z_{k-1} + sqrt(beta_k) eps_k, iterated for k = 1..step.
LatentBatch forward_diffuse(const LatentBatch& z0, const VarianceSchedule& schedule,
                            std::size_t step, NoiseSource& noise);

// Applies the denoiser for k = from_step..1 and returns the step-0 latent.
LatentBatch reverse_denoise(const LatentBatch& zT, std::size_t from_step, const Denoiser& denoiser,
                            const VarianceSchedule& schedule, const TextCondition& condition,
                            NoiseSource& noise);

// caption -> encode -> partial forward diffusion -> conditioned reverse
// denoising -> decode. Read-only after construction; every call owns its
// noise generators, derived from the call's seed.
class Purifier {
 public:
  Purifier(VarianceSchedule schedule, std::shared_ptr<const LatentCodec> codec,
           std::shared_ptr<const CaptionProvider> captions, std::shared_ptr<const TextEncoder> encoder,
           std::shared_ptr<const Denoiser> denoiser, double t_frac);

  ImageBatch purify(const ImageBatch& x, std::uint64_t seed) const;

  double t_frac() const { return t_frac_; }
  std::size_t diffusion_steps() const { return step_; }
  const CaptionProvider& caption_provider() const { return *captions_; }
  nlohmann::json describe() const;

 private:
  VarianceSchedule schedule_;
  std::shared_ptr<const LatentCodec> codec_;
  std::shared_ptr<const CaptionProvider> captions_;
  std::shared_ptr<const TextEncoder> encoder_;
  std::shared_ptr<const Denoiser> denoiser_;
  double t_frac_;
  std::size_t step_;
};

struct ToyTrainingOptions {
  std::size_t epochs = 60;
  std::size_t batch_size = 64;
  std::size_t hidden = 256;
  std::size_t time_features = 32;
  double learning_rate = 1e-3;
  // Probability of replacing a caption with the null caption during training,
  // which is what makes unconditional prediction (and guidance) available.
  double cond_dropout = 0.2;
  double holdout_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct ToyTrainingResult {
  std::unique_ptr<ToyDenoiser> model;
  std::vector<double> train_loss;    // per epoch
  std::vector<double> heldout_loss;  // per epoch
  double initial_heldout_loss = 0.0;
  std::size_t train_size = 0;
  std::size_t heldout_size = 0;
};

// Trains on codec latents of `data` with captions from `captions`.
ToyTrainingResult train_toy_denoiser(const ImageBatch& data, const LatentCodec& codec,
                                     const CaptionProvider& captions, const TextEncoder& encoder,
                                     const VarianceSchedule& schedule, const ToyTrainingOptions& options);

}  // namespace lgap
