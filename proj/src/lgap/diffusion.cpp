#include "lgap/diffusion.hpp"

#include "lgap/error.hpp"
#include "lgap/safetensors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace lgap {

RowVector Denoiser::unconditional_embedding() const {
  const auto c = contract();
  return RowVector::Zero(static_cast<Eigen::Index>(c.tokens * c.dim));
}

nlohmann::json Denoiser::describe() const {
  const auto c = contract();
  return {{"type", kind()}, {"condition_tokens", c.tokens}, {"condition_dim", c.dim}};
}

// ---------------------------------------------------------------- ToyDenoiser

ToyDenoiser::ToyDenoiser(ToyDenoiserShape shape, VarianceSchedule schedule)
    : shape_(shape), schedule_(std::move(schedule)) {
  const std::size_t d = shape_.latent.size();
  if (d == 0 || shape_.hidden == 0 || shape_.time_features < 2 || shape_.time_features % 2 != 0 ||
      shape_.contract.dim == 0 || shape_.contract.tokens == 0) {
    throw DomainError("invalid toy denoiser shape");
  }
  in_ = nn::Dense(d, shape_.hidden);
  mid_ = nn::Dense(shape_.hidden, shape_.hidden);
  out_ = nn::Dense(shape_.hidden, d);
  time1_ = nn::Dense(shape_.time_features, shape_.hidden);
  time2_ = nn::Dense(shape_.time_features, shape_.hidden);
  cond1_ = nn::Dense(shape_.contract.dim, shape_.hidden);
  cond2_ = nn::Dense(shape_.contract.dim, shape_.hidden);
}

void ToyDenoiser::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto* l : {&in_, &mid_, &out_, &time1_, &time2_, &cond1_, &cond2_}) l->init_glorot(rng);
}

Matrix ToyDenoiser::time_embedding(const std::vector<std::size_t>& steps) const {
  const auto half = static_cast<Eigen::Index>(shape_.time_features / 2);
  Matrix out(static_cast<Eigen::Index>(steps.size()), 2 * half);
  const double T = static_cast<double>(schedule_.steps());
  for (std::size_t n = 0; n < steps.size(); ++n) {
    const double tau = static_cast<double>(steps[n]) / T;
    for (Eigen::Index i = 0; i < half; ++i) {
      const double w = std::numbers::pi * static_cast<double>(i + 1) * tau;
      out(static_cast<Eigen::Index>(n), i) = std::sin(w);
      out(static_cast<Eigen::Index>(n), half + i) = std::cos(w);
    }
  }
  return out;
}

Matrix ToyDenoiser::forward(const Matrix& z, const Matrix& time, const Matrix& pooled,
                            Trace* trace) const {
  if (static_cast<std::size_t>(z.cols()) != shape_.latent.size()) {
    throw ShapeError("toy denoiser expects latents " + shape_.latent.str());
  }
  if (static_cast<std::size_t>(pooled.cols()) != shape_.contract.dim || pooled.rows() != z.rows()) {
    throw ShapeError("toy denoiser condition does not match its contract");
  }
  Matrix a1 = in_.forward(z);
  a1.noalias() += time * time1_.weight.transpose();
  a1.rowwise() += time1_.bias;
  a1.noalias() += pooled * cond1_.weight.transpose();
  a1.rowwise() += cond1_.bias;
  Matrix h1 = nn::silu(a1);
  Matrix a2 = mid_.forward(h1);
  a2.noalias() += time * time2_.weight.transpose();
  a2.rowwise() += time2_.bias;
  a2.noalias() += pooled * cond2_.weight.transpose();
  a2.rowwise() += cond2_.bias;
  Matrix h2 = nn::silu(a2);
  Matrix eps = out_.forward(h2);
  if (trace) {
    trace->time = time;
    trace->cond = pooled;
    trace->a1 = std::move(a1);
    trace->h1 = std::move(h1);
    trace->a2 = std::move(a2);
    trace->h2 = std::move(h2);
  }
  return eps;
}

void ToyDenoiser::set_data_statistics(double mean, double stdev) {
  if (!std::isfinite(mean) || !(stdev > 0.0) || !std::isfinite(stdev)) {
    throw DomainError("toy denoiser data statistics must be finite with positive std");
  }
  data_mean_ = mean;
  data_std_ = stdev;
}

ToyDenoiser::Precondition ToyDenoiser::precondition(const std::vector<std::size_t>& steps) const {
  const auto n = static_cast<Eigen::Index>(steps.size());
  Precondition p{Vector(n), Vector(n), Vector(n), Vector(n), Vector(n)};
  const double sd2 = data_std_ * data_std_;
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t k = steps[static_cast<std::size_t>(i)];
    if (k == 0 || k > schedule_.steps()) throw DomainError("denoiser step out of range");
    const double abar = schedule_.alpha_bar(k);
    p.s(i) = std::sqrt(abar);
    p.sigma(i) = std::sqrt(1.0 - abar);
    const double nu = p.sigma(i) / p.s(i);
    const double r = nu * nu + sd2;
    p.c_in(i) = 1.0 / std::sqrt(r);
    p.c_skip(i) = sd2 / r;
    p.c_out(i) = nu * data_std_ / std::sqrt(r);
  }
  return p;
}

Matrix ToyDenoiser::clean_estimate(const Matrix& y, const Precondition& p, const Matrix& time,
                                   const Matrix& pooled) const {
  const Matrix f = forward(p.c_in.asDiagonal() * y, time, pooled, nullptr);
  Matrix x0 = p.c_skip.asDiagonal() * y + p.c_out.asDiagonal() * f;
  x0.array() += data_mean_;
  return x0;
}

Matrix ToyDenoiser::predict_clean(const Matrix& z, const std::vector<std::size_t>& steps,
                                  const Matrix& pooled) const {
  if (steps.size() != static_cast<std::size_t>(z.rows())) throw ShapeError("one step per row required");
  const Precondition p = precondition(steps);
  Matrix y = p.s.cwiseInverse().asDiagonal() * z;
  y.array() -= data_mean_;
  return clean_estimate(y, p, time_embedding(steps), pooled);
}

Matrix ToyDenoiser::predict_noise(const Matrix& z, const std::vector<std::size_t>& steps,
                                  const Matrix& pooled) const {
  const Matrix x0 = predict_clean(z, steps, pooled);
  const Precondition p = precondition(steps);
  return p.sigma.cwiseInverse().asDiagonal() * (z - p.s.asDiagonal() * x0);
}

double ToyDenoiser::accumulate_gradients(const Matrix& z, const std::vector<std::size_t>& steps,
                                         const Matrix& pooled, const Matrix& clean) {
  if (steps.size() != static_cast<std::size_t>(z.rows()) || clean.rows() != z.rows() || clean.cols() != z.cols()) {
    throw ShapeError("training batch shapes disagree");
  }
  const Precondition p = precondition(steps);
  Matrix y = p.s.cwiseInverse().asDiagonal() * z;
  y.array() -= data_mean_;
  Matrix target = clean;
  target.array() -= data_mean_;
  target = p.c_out.cwiseInverse().asDiagonal() * (target - p.c_skip.asDiagonal() * y);
  const Matrix u = p.c_in.asDiagonal() * y;
  Trace t;
  const Matrix f = forward(u, time_embedding(steps), pooled, &t);
  const Matrix diff = f - target;
  const double count = static_cast<double>(diff.size());
  const Matrix g_out = diff * (2.0 / count);
  Matrix g = out_.backward(t.h2, g_out);
  const Matrix g_a2 = nn::silu_backward(t.a2, g);
  g = mid_.backward(t.h1, g_a2);
  time2_.accumulate(t.time, g_a2);
  cond2_.accumulate(t.cond, g_a2);
  const Matrix g_a1 = nn::silu_backward(t.a1, g);
  in_.accumulate(u, g_a1);
  time1_.accumulate(t.time, g_a1);
  cond1_.accumulate(t.cond, g_a1);
  return diff.squaredNorm() / static_cast<double>(shape_.latent.size());
}

std::vector<nn::ParamRef> ToyDenoiser::parameters() {
  std::vector<nn::ParamRef> out;
  for (auto* l : {&in_, &mid_, &out_, &time1_, &time2_, &cond1_, &cond2_}) l->collect(out);
  return out;
}

void ToyDenoiser::zero_grad() {
  for (auto* l : {&in_, &mid_, &out_, &time1_, &time2_, &cond1_, &cond2_}) l->zero_grad();
}

Matrix ToyDenoiser::step(const Matrix& z, std::size_t k, const Matrix& noise,
                         const TextCondition& condition, const VarianceSchedule& schedule) const {
  if (!(schedule == schedule_)) {
    throw ShapeError("toy denoiser was trained with a different variance schedule");
  }
  if (condition.tokens != shape_.contract.tokens || condition.dim != shape_.contract.dim ||
      condition.size() != static_cast<std::size_t>(z.rows())) {
    throw ShapeError("text condition does not match the toy denoiser contract");
  }
  const std::vector<std::size_t> steps(static_cast<std::size_t>(z.rows()), k);
  const Matrix time = time_embedding(steps);
  const Matrix pooled = condition.pooled();
  const Precondition p = precondition(steps);
  Matrix y = z / p.s(0);
  y.array() -= data_mean_;
  Matrix x0 = clean_estimate(y, p, time, pooled);
  if (guidance_scale_ != 1.0) {
    const Matrix uncond = clean_estimate(y, p, time, Matrix::Zero(pooled.rows(), pooled.cols()));
    x0 = uncond + guidance_scale_ * (x0 - uncond);
  }
  const Matrix eps = (z - p.s(0) * x0) / p.sigma(0);
  const double beta = schedule.beta(k);
  const double abar = schedule.alpha_bar(k);
  const double abar_prev = schedule.alpha_bar(k - 1);
  Matrix mean = (z - (beta / std::sqrt(1.0 - abar)) * eps) / std::sqrt(1.0 - beta);
  const double var = beta * (1.0 - abar_prev) / (1.0 - abar);
  if (var > 0.0) mean += std::sqrt(var) * noise;
  return mean;
}

nlohmann::json ToyDenoiser::describe() const {
  return {{"type", kind()},
          {"latent_shape", {shape_.latent.channels, shape_.latent.height, shape_.latent.width}},
          {"condition_tokens", shape_.contract.tokens},
          {"condition_dim", shape_.contract.dim},
          {"hidden", shape_.hidden},
          {"time_features", shape_.time_features},
          {"guidance_scale", guidance_scale_},
          {"schedule", {{"type", schedule_.type()}, {"T", schedule_.steps()}}},
          {"sampler", "ddpm-ancestral"},
          {"epochs_seen", epochs_seen}};
}

void ToyDenoiser::save(const std::filesystem::path& path) const {
  SafeTensors st;
  st.metadata()["kind"] = "toy_denoiser";
  st.metadata()["hidden"] = std::to_string(shape_.hidden);
  st.metadata()["time_features"] = std::to_string(shape_.time_features);
  st.metadata()["condition_tokens"] = std::to_string(shape_.contract.tokens);
  st.metadata()["condition_dim"] = std::to_string(shape_.contract.dim);
  st.metadata()["schedule_type"] = schedule_.type();
  st.metadata()["epochs_seen"] = std::to_string(epochs_seen);
  st.metadata()["loss_history"] = nlohmann::json(loss_history).dump();
  st.put_integers("latent_shape", {3},
                  {static_cast<std::int64_t>(shape_.latent.channels),
                   static_cast<std::int64_t>(shape_.latent.height),
                   static_cast<std::int64_t>(shape_.latent.width)});
  st.put("schedule.betas", {static_cast<std::int64_t>(schedule_.steps())}, schedule_.betas());
  st.put("data_statistics", {2}, {data_mean_, data_std_});
  const std::pair<const char*, const nn::Dense*> layers[] = {
      {"in", &in_}, {"mid", &mid_}, {"out", &out_}, {"time1", &time1_},
      {"time2", &time2_}, {"cond1", &cond1_}, {"cond2", &cond2_}};
  for (const auto& [name, l] : layers) {
    st.put(std::string(name) + ".weight", l->weight);
    st.put(std::string(name) + ".bias", Vector(l->bias.transpose()));
  }
  st.save(path);
}

std::unique_ptr<ToyDenoiser> ToyDenoiser::load(const std::filesystem::path& path) {
  SafeTensors st;
  try {
    st = SafeTensors::load(path);
  } catch (const IoError& e) {
    throw AdapterError(std::string("toy denoiser checkpoint unavailable: ") + e.what());
  }
  if (st.metadata().count("kind") == 0 || st.meta("kind") != "toy_denoiser") {
    throw AdapterError(path.string() + " is not a toy denoiser checkpoint");
  }
  const auto& ls = st.integers("latent_shape");
  if (ls.size() != 3) throw IoError("latent_shape must have 3 entries");
  ToyDenoiserShape shape;
  shape.latent = {static_cast<std::size_t>(ls[0]), static_cast<std::size_t>(ls[1]),
                  static_cast<std::size_t>(ls[2])};
  shape.hidden = std::stoul(st.meta("hidden"));
  shape.time_features = std::stoul(st.meta("time_features"));
  shape.contract = {std::stoul(st.meta("condition_tokens")), std::stoul(st.meta("condition_dim"))};
  const Vector betas = st.vector("schedule.betas");
  auto model = std::make_unique<ToyDenoiser>(
      shape, VarianceSchedule(st.meta("schedule_type"),
                              std::vector<double>(betas.data(), betas.data() + betas.size())));
  const std::pair<const char*, nn::Dense*> layers[] = {
      {"in", &model->in_}, {"mid", &model->mid_}, {"out", &model->out_}, {"time1", &model->time1_},
      {"time2", &model->time2_}, {"cond1", &model->cond1_}, {"cond2", &model->cond2_}};
  for (const auto& [name, l] : layers) {
    const Matrix w = st.matrix(std::string(name) + ".weight");
    const Vector b = st.vector(std::string(name) + ".bias");
    if (w.rows() != l->weight.rows() || w.cols() != l->weight.cols() || b.size() != l->bias.size()) {
      throw IoError(std::string("toy denoiser layer '") + name + "' has inconsistent shape");
    }
    l->weight = w;
    l->bias = b.transpose();
  }
  const Vector stats = st.vector("data_statistics");
  if (stats.size() != 2) throw IoError("data_statistics must hold mean and std");
  model->set_data_statistics(stats(0), stats(1));
  model->epochs_seen = std::stoul(st.meta("epochs_seen"));
  model->loss_history = nlohmann::json::parse(st.meta("loss_history")).get<std::vector<double>>();
  return model;
}

// ------------------------------------------------------------ diffusion ops

LatentBatch forward_diffuse(const LatentBatch& z0, const VarianceSchedule& schedule,
                            std::size_t step, NoiseSource& noise) {
  if (step > schedule.steps()) {
    throw DomainError("forward diffusion step " + std::to_string(step) + " exceeds T=" +
                      std::to_string(schedule.steps()));
  }
  LatentBatch z = z0;
  Matrix eps(z.data.rows(), z.data.cols());
  for (std::size_t k = 1; k <= step; ++k) {
    noise.draw(eps);
    const double beta = schedule.beta(k);
    z.data = std::sqrt(1.0 - beta) * z.data + std::sqrt(beta) * eps;
  }
  return z;
}

LatentBatch reverse_denoise(const LatentBatch& zT, std::size_t from_step, const Denoiser& denoiser,
                            const VarianceSchedule& schedule, const TextCondition& condition,
                            NoiseSource& noise) {
  if (from_step > schedule.steps()) {
    throw DomainError("reverse start step " + std::to_string(from_step) + " exceeds T=" +
                      std::to_string(schedule.steps()));
  }
  const auto contract = denoiser.contract();
  if (condition.tokens != contract.tokens || condition.dim != contract.dim) {
    throw ShapeError("text condition (" + std::to_string(condition.tokens) + "," +
                     std::to_string(condition.dim) + ") does not match denoiser contract (" +
                     std::to_string(contract.tokens) + "," + std::to_string(contract.dim) + ")");
  }
  if (condition.size() != zT.size()) throw ShapeError("one text condition per latent required");
  if (auto shape = denoiser.latent_shape(); shape && !(*shape == zT.shape)) {
    throw ShapeError("denoiser runs on latents " + shape->str() + ", got " + zT.shape.str());
  }
  LatentBatch z = zT;
  Matrix eps(z.data.rows(), z.data.cols());
  for (std::size_t k = from_step; k >= 1; --k) {
    noise.draw(eps);
    Matrix next = denoiser.step(z.data, k, eps, condition, schedule);
    if (next.rows() != z.data.rows() || next.cols() != z.data.cols()) {
      throw ShapeError(denoiser.kind() + " denoiser changed the latent shape");
    }
    z.data = std::move(next);
  }
  return z;
}

// ----------------------------------------------------------------- Purifier

Purifier::Purifier(VarianceSchedule schedule, std::shared_ptr<const LatentCodec> codec,
                   std::shared_ptr<const CaptionProvider> captions,
                   std::shared_ptr<const TextEncoder> encoder, std::shared_ptr<const Denoiser> denoiser,
                   double t_frac)
    : schedule_(std::move(schedule)),
      codec_(std::move(codec)),
      captions_(std::move(captions)),
      encoder_(std::move(encoder)),
      denoiser_(std::move(denoiser)),
      t_frac_(t_frac),
      step_(fraction_to_step(t_frac, schedule_.steps())) {
  if (!codec_ || !captions_ || !encoder_ || !denoiser_) {
    throw ConfigError("purifier components must all be set");
  }
  const auto contract = denoiser_->contract();
  if (encoder_->max_tokens() != contract.tokens || encoder_->dim() != contract.dim) {
    throw ConfigError("text encoder output (" + std::to_string(encoder_->max_tokens()) + "," +
                      std::to_string(encoder_->dim()) + ") does not match the denoiser contract (" +
                      std::to_string(contract.tokens) + "," + std::to_string(contract.dim) + ")");
  }
}

ImageBatch Purifier::purify(const ImageBatch& x, std::uint64_t seed) const {
  x.validate();
  const auto captions = generate_captions(*captions_, x);
  const TextCondition condition = encode_text(*encoder_, captions);
  const LatentBatch z0 = codec_->encode(x);
  SeededNoise forward_noise(derive_seed(seed, "forward"));
  SeededNoise reverse_noise(derive_seed(seed, "reverse"));
  const LatentBatch zt = forward_diffuse(z0, schedule_, step_, forward_noise);
  const LatentBatch z = reverse_denoise(zt, step_, *denoiser_, schedule_, condition, reverse_noise);
  if (!all_finite(z.data)) throw Error(ErrorCode::kRuntime, "purification produced non-finite latents");
  ImageBatch out = codec_->decode(z);
  out.labels = x.labels;
  return out;
}

nlohmann::json Purifier::describe() const {
  return {{"t_frac", t_frac_},
          {"diffusion_steps", step_},
          {"schedule", {{"type", schedule_.type()}, {"T", schedule_.steps()},
                        {"alpha_bar_at_step", schedule_.alpha_bar(step_)}}},
          {"codec", codec_->id()},
          {"caption", captions_->describe()},
          {"text_encoder", {{"type", encoder_->id()}, {"max_tokens", encoder_->max_tokens()},
                            {"dim", encoder_->dim()}, {"truncation", "truncate at max_tokens"}}},
          {"denoiser", denoiser_->describe()},
          {"captions_from", "purifier input"}};
}

// ----------------------------------------------------------------- training

namespace {

Matrix noised(const Matrix& z0, const std::vector<std::size_t>& steps, const Matrix& eps,
              const VarianceSchedule& schedule) {
  Matrix zt(z0.rows(), z0.cols());
  for (Eigen::Index n = 0; n < z0.rows(); ++n) {
    const double abar = schedule.alpha_bar(steps[static_cast<std::size_t>(n)]);
    zt.row(n) = std::sqrt(abar) * z0.row(n) + std::sqrt(1.0 - abar) * eps.row(n);
  }
  return zt;
}

Matrix take_rows(const Matrix& m, const std::vector<std::size_t>& idx, std::size_t begin,
                 std::size_t end) {
  Matrix out(static_cast<Eigen::Index>(end - begin), m.cols());
  for (std::size_t i = begin; i < end; ++i) {
    out.row(static_cast<Eigen::Index>(i - begin)) = m.row(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

}  // namespace

ToyTrainingResult train_toy_denoiser(const ImageBatch& data, const LatentCodec& codec,
                                     const CaptionProvider& captions, const TextEncoder& encoder,
                                     const VarianceSchedule& schedule, const ToyTrainingOptions& options) {
  if (data.size() == 0) throw DomainError("toy denoiser training needs data");
  if (options.batch_size == 0) throw DomainError("batch size must be positive");
  if (!(options.learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (!(options.cond_dropout >= 0.0 && options.cond_dropout <= 1.0)) {
    throw DomainError("condition dropout must lie in [0,1]");
  }
  if (!(options.holdout_fraction >= 0.0 && options.holdout_fraction < 1.0)) {
    throw DomainError("holdout fraction must lie in [0,1)");
  }
  const LatentBatch latents = codec.encode(data);
  const Matrix pooled = encode_text(encoder, generate_captions(captions, data)).pooled();

  ToyDenoiserShape shape{latents.shape, {encoder.max_tokens(), encoder.dim()}, options.hidden,
                         options.time_features};
  ToyTrainingResult result;
  result.model = std::make_unique<ToyDenoiser>(shape, schedule);
  ToyDenoiser& model = *result.model;
  model.initialize(derive_seed(options.seed, "init"));
  {
    const double mean = latents.data.mean();
    const double var = (latents.data.array() - mean).square().mean();
    model.set_data_statistics(mean, std::max(std::sqrt(var), 1e-3));
  }

  // Fixed train/held-out split.
  std::mt19937_64 split_rng(derive_seed(options.seed, "split"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(split_rng, i)]);
  auto heldout_n = static_cast<std::size_t>(std::floor(options.holdout_fraction * static_cast<double>(data.size())));
  if (options.holdout_fraction > 0.0 && heldout_n == 0 && data.size() > 1) heldout_n = 1;
  const std::vector<std::size_t> heldout(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(heldout_n));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(heldout_n), order.end());
  if (train.empty()) throw DomainError("no training samples left after the held-out split");
  result.train_size = train.size();
  result.heldout_size = heldout.size();

  // Held-out objective with frozen steps and noise so epochs are comparable.
  const std::size_t T = schedule.steps();
  std::vector<std::size_t> heldout_steps(heldout.size());
  Matrix heldout_eps(static_cast<Eigen::Index>(heldout.size()), latents.data.cols());
  {
    std::mt19937_64 rng(derive_seed(options.seed, "heldout"));
    for (auto& k : heldout_steps) k = 1 + uniform_index(rng, T);
    SeededNoise noise(derive_seed(options.seed, "heldout-noise"));
    noise.draw(heldout_eps);
  }
  const Matrix heldout_z0 = take_rows(latents.data, heldout, 0, heldout.size());
  const Matrix heldout_zt = noised(heldout_z0, heldout_steps, heldout_eps, schedule);
  const Matrix heldout_c = take_rows(pooled, heldout, 0, heldout.size());
  auto heldout_loss = [&]() {
    if (heldout.empty()) return 0.0;
    const Matrix eps = model.predict_noise(heldout_zt, heldout_steps, heldout_c);
    return (eps - heldout_eps).squaredNorm() / static_cast<double>(heldout_eps.size());
  };
  result.initial_heldout_loss = heldout_loss();

  nn::Adam adam(options.learning_rate);
  std::mt19937_64 rng(derive_seed(options.seed, "train"));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto params = model.parameters();
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[uniform_index(rng, i)]);
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < train.size(); b += options.batch_size) {
      const std::size_t e = std::min(train.size(), b + options.batch_size);
      const Matrix z0 = take_rows(latents.data, train, b, e);
      Matrix c = take_rows(pooled, train, b, e);
      std::vector<std::size_t> steps(e - b);
      for (std::size_t n = 0; n < steps.size(); ++n) {
        steps[n] = 1 + uniform_index(rng, T);
        if (uniform_unit(rng) < options.cond_dropout) c.row(static_cast<Eigen::Index>(n)).setZero();
      }
      Matrix eps(z0.rows(), z0.cols());
      for (Eigen::Index j = 0; j < eps.size(); ++j) eps.data()[j] = normal(rng);
      model.zero_grad();
      const double loss = model.accumulate_gradients(noised(z0, steps, eps, schedule), steps, c, z0);
      if (!std::isfinite(loss)) {
        throw DivergenceError("toy denoiser loss became non-finite in epoch " + std::to_string(epoch));
      }
      adam.step(params);
      epoch_loss += loss;
      seen += e - b;
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(seen));
    const double h = heldout_loss();
    if (!std::isfinite(h)) throw DivergenceError("held-out loss became non-finite");
    result.heldout_loss.push_back(h);
    model.epochs_seen += 1;
  }
  model.loss_history = result.train_loss;
  return result;
}

}  // namespace lgap
