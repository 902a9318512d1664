#pragma once

#include "lgap/classifier.hpp"
#include "lgap/datasets.hpp"
#include "lgap/diffusion.hpp"
#include "lgap/error.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace lgap {

enum class OptimizerKind { kAdam, kSgd };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct FinetuneConfig {
  std::size_t epochs = 15;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool augment = false;  // random horizontal flips

  void validate() const;
  nlohmann::json to_json() const;
};

// Purifies `x` in fixed-size batches; batch b uses seed derive_seed(seed, b).
ImageBatch purify_in_batches(const Purifier& purifier, const ImageBatch& x, std::uint64_t seed,
                             std::size_t batch_size = 256);

// Purifies every sample of `data` (labels kept) in fixed-size batches; batch b
// uses purification seed derive_seed(seed, b).
Dataset build_purified_dataset(const Dataset& data, const Purifier& purifier, std::uint64_t seed,
                               std::size_t batch_size = 256);

struct FinetuneResult {
  std::unique_ptr<Classifier> classifier;
  std::vector<double> loss_history;  // mean CE over the full dataset after each epoch
};

// Thrown when the loss turns non-finite; carries the parameters as they were
// at the end of the last finite epoch.
class FinetuneDivergence : public DivergenceError {
 public:
  FinetuneDivergence(const std::string& message, std::shared_ptr<const Classifier> snapshot,
                     std::vector<double> history)
      : DivergenceError(message), snapshot_(std::move(snapshot)), history_(std::move(history)) {}
  const std::shared_ptr<const Classifier>& last_good() const { return snapshot_; }
  const std::vector<double>& loss_history() const { return history_; }

 private:
  std::shared_ptr<const Classifier> snapshot_;
  std::vector<double> history_;
};

// Minimises mean cross-entropy on `data` starting from a copy of `base`;
// `base` is never modified.
FinetuneResult finetune_classifier(const Classifier& base, const ImageBatch& data,
                                   const FinetuneConfig& config);

double mean_cross_entropy(const Classifier& f, const ImageBatch& data, std::size_t batch_size = 512);
double accuracy(const Classifier& f, const ImageBatch& data, std::size_t batch_size = 512);

}  // namespace lgap
