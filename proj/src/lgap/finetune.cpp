#include "lgap/finetune.hpp"

#include "lgap/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lgap {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdam ? "adam" : "sgd"; }

void FinetuneConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("finetune.learning_rate must be > 0");
  if (batch_size == 0) throw ConfigError("finetune.batch_size must be positive");
}

nlohmann::json FinetuneConfig::to_json() const {
  return {{"epochs", epochs},       {"learning_rate", learning_rate}, {"optimizer", to_string(optimizer)},
          {"batch_size", batch_size}, {"seed", seed},                 {"augment", augment}};
}

ImageBatch purify_in_batches(const Purifier& purifier, const ImageBatch& x, std::uint64_t seed,
                             std::size_t batch_size) {
  if (batch_size == 0) throw DomainError("batch size must be positive");
  Matrix out(x.data.rows(), x.data.cols());
  std::size_t b = 0;
  for (std::size_t begin = 0; begin < x.size(); begin += batch_size, ++b) {
    const std::size_t end = std::min(x.size(), begin + batch_size);
    const ImageBatch purified = purifier.purify(x.slice(begin, end), derive_seed(seed, b));
    out.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = purified.data;
  }
  return ImageBatch(x.shape, std::move(out), x.labels);
}

Dataset build_purified_dataset(const Dataset& data, const Purifier& purifier, std::uint64_t seed,
                               std::size_t batch_size) {
  if (!data.images.has_labels()) throw DomainError("purified dataset needs labels");
  Dataset result = data;
  result.images = purify_in_batches(purifier, data.images, seed, batch_size);
  result.source = "purified:" + data.source;
  return result;
}

namespace {

Matrix flip_horizontal(const Matrix& x, const SampleShape& s, const std::vector<bool>& flip) {
  Matrix out = x;
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    if (!flip[static_cast<std::size_t>(n)]) continue;
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t i = 0; i < s.height; ++i) {
        for (std::size_t j = 0; j < s.width; ++j) {
          out(n, static_cast<Eigen::Index>((c * s.height + i) * s.width + j)) =
              x(n, static_cast<Eigen::Index>((c * s.height + i) * s.width + (s.width - 1 - j)));
        }
      }
    }
  }
  return out;
}

}  // namespace

double mean_cross_entropy(const Classifier& f, const ImageBatch& data, std::size_t batch_size) {
  const Labels& y = data.require_labels();
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const Matrix logits = f.logits(data.data.middleRows(static_cast<Eigen::Index>(begin),
                                                        static_cast<Eigen::Index>(end - begin)));
    total += nn::softmax_cross_entropy(logits, Labels(y.begin() + begin, y.begin() + end), nullptr, nullptr);
  }
  return total / static_cast<double>(data.size());
}

double accuracy(const Classifier& f, const ImageBatch& data, std::size_t batch_size) {
  const Labels& y = data.require_labels();
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    const auto pred = nn::argmax_rows(f.logits(
        data.data.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin))));
    for (std::size_t i = begin; i < end; ++i) correct += pred[i - begin] == y[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

FinetuneResult finetune_classifier(const Classifier& base, const ImageBatch& data, const FinetuneConfig& config) {
  config.validate();
  if (data.size() == 0) throw DomainError("fine-tuning dataset is empty");
  if (!(data.shape == base.input_shape())) {
    throw ShapeError("dataset shape " + data.shape.str() + " does not match classifier input " +
                     base.input_shape().str());
  }
  data.validate(base.num_classes());
  data.require_labels();

  FinetuneResult result{base.clone(), {}};
  if (config.epochs == 0) return result;

  Classifier& f = *result.classifier;
  std::unique_ptr<nn::Optimizer> optimizer;
  if (config.optimizer == OptimizerKind::kAdam) optimizer = std::make_unique<nn::Adam>(config.learning_rate);
  else optimizer = std::make_unique<nn::Sgd>(config.learning_rate);

  std::shared_ptr<const Classifier> last_good(base.clone());
  std::mt19937_64 rng(derive_seed(config.seed, "finetune"));
  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
      ImageBatch batch = data.select(idx);
      if (config.augment) {
        std::vector<bool> flip(idx.size());
        for (std::size_t i = 0; i < flip.size(); ++i) flip[i] = uniform_unit(rng) < 0.5;
        batch.data = flip_horizontal(batch.data, batch.shape, flip);
      }
      f.zero_grad();
      const double loss = f.accumulate_gradients(batch.data, *batch.labels);
      if (!std::isfinite(loss)) {
        throw FinetuneDivergence("non-finite loss in epoch " + std::to_string(epoch + 1), last_good,
                                 result.loss_history);
      }
      auto params = f.parameters();
      const double scale = 1.0 / static_cast<double>(idx.size());
      for (auto& p : params) {
        for (std::size_t k = 0; k < p.size; ++k) p.grad[k] *= scale;
      }
      optimizer->step(params);
    }
    const double epoch_loss = mean_cross_entropy(f, data);
    if (!std::isfinite(epoch_loss)) {
      throw FinetuneDivergence("non-finite loss after epoch " + std::to_string(epoch + 1), last_good,
                               result.loss_history);
    }
    result.loss_history.push_back(epoch_loss);
    last_good = std::shared_ptr<const Classifier>(f.clone());
  }
  return result;
}

}  // namespace lgap
