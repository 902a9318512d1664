#pragma once

#include "lgap/classifier.hpp"
#include "lgap/diffusion.hpp"
#include "lgap/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace lgap {

enum class AttackMode { kPreprocessorBlind, kBpda, kBpdaEot };

AttackMode parse_attack_mode(const std::string& name);
std::string to_string(AttackMode mode);

// Accepts "k/255"-style fractions or plain decimals; ConfigError otherwise.
double parse_epsilon(const std::string& text);

struct AttackConfig {
  std::string name;  // report column label
  AttackMode mode = AttackMode::kPreprocessorBlind;
  double epsilon = 8.0 / 255.0;
  std::string epsilon_text = "8/255";
  std::size_t steps = 40;
  std::optional<double> step_size;  // defaults to epsilon / 4
  std::size_t eot_samples = 15;
  bool random_start = true;
  std::uint64_t seed = 0;

  double resolved_step_size() const { return step_size.value_or(epsilon / 4.0); }
  void validate() const;
  nlohmann::json to_json() const;
};

struct OracleOutput {
  Matrix grad;
  std::vector<double> loss;  // per sample
};

using GradFn = std::function<OracleOutput(const ImageBatch& x, const Labels& y, std::uint64_t seed)>;

// Gradient of the classification loss with respect to the input for a
// declared target (bare classifier, or purifier + classifier under an
// approximation).
class GradientOracle {
 public:
  virtual ~GradientOracle() = default;
  virtual std::string target() const = 0;
  virtual OracleOutput gradient(const ImageBatch& x, const Labels& y, std::uint64_t seed) const = 0;
  // Logits of the attacked pipeline, used for success flags.
  virtual Matrix logits(const ImageBatch& x, std::uint64_t seed) const = 0;
};

// Preprocessor-blind: the adversary only sees the classifier.
class ClassifierOracle final : public GradientOracle {
 public:
  explicit ClassifierOracle(const Classifier& f) : f_(f) {}
  std::string target() const override { return "classifier"; }
  OracleOutput gradient(const ImageBatch& x, const Labels& y, std::uint64_t seed) const override;
  Matrix logits(const ImageBatch& x, std::uint64_t seed) const override;

 private:
  const Classifier& f_;
};

// Forward through purify then classify; backward treats purify as identity.
OracleOutput bpda_gradient(const Purifier& purifier, const Classifier& f, const ImageBatch& x,
                           const Labels& y, std::uint64_t seed);

class BpdaOracle final : public GradientOracle {
 public:
  BpdaOracle(const Purifier& purifier, const Classifier& f) : purifier_(purifier), f_(f) {}
  std::string target() const override { return "purifier+classifier (bpda identity)"; }
  OracleOutput gradient(const ImageBatch& x, const Labels& y, std::uint64_t seed) const override;
  Matrix logits(const ImageBatch& x, std::uint64_t seed) const override;

 private:
  const Purifier& purifier_;
  const Classifier& f_;
};

struct EotEstimate {
  Matrix grad;
  std::vector<double> loss;
  std::vector<std::uint64_t> seeds;  // base_seed + i
};

// Mean of grad_fn over seeds base_seed, ..., base_seed + n - 1. The mean is
// accumulated incrementally so a seed-independent grad_fn is reproduced
// exactly. `per_seed`, when given, receives every individual gradient.
EotEstimate eot_gradient(const GradFn& grad_fn, const ImageBatch& x, const Labels& y, std::size_t n,
                         std::uint64_t base_seed, std::vector<Matrix>* per_seed = nullptr);

class EotOracle final : public GradientOracle {
 public:
  EotOracle(const GradientOracle& inner, std::size_t samples) : inner_(inner), samples_(samples) {}
  std::string target() const override { return inner_.target() + " + eot"; }
  OracleOutput gradient(const ImageBatch& x, const Labels& y, std::uint64_t seed) const override;
  Matrix logits(const ImageBatch& x, std::uint64_t seed) const override { return inner_.logits(x, seed); }

 private:
  const GradientOracle& inner_;
  std::size_t samples_;
};

struct AttackResult {
  ImageBatch x_adv;
  std::vector<bool> success;             // pipeline prediction != label
  std::vector<double> loss_trajectory;   // mean oracle loss at each step's iterate
  std::vector<std::uint64_t> step_seeds;
  AttackConfig config;
  std::string target;
  double max_perturbation = 0.0;
};

// Projection onto the epsilon-ball around x0 intersected with [0,1].
void project_linf(Matrix& x, const Matrix& x0, double epsilon);

// Throws when adv leaves the epsilon-ball (up to 2 machine epsilon) or [0,1].
void check_containment(const Matrix& x0, const Matrix& adv, double epsilon);

// Signed-gradient ascent with optional seeded uniform start in the ball.
AttackResult pgd_attack(const GradientOracle& oracle, const ImageBatch& x, const AttackConfig& config);

AttackResult bpda_eot_attack(const Purifier& purifier, const Classifier& f, const ImageBatch& x,
                             const AttackConfig& config);

// Dispatches on config.mode. Adaptive modes require a purifier.
AttackResult run_attack(const AttackConfig& config, const Classifier& f, const Purifier* purifier,
                        const ImageBatch& x);

// An externally produced adversarial batch (e.g. from a third-party attack
// suite) admitted after the same containment checks as internal attacks.
AttackResult admit_external_attack(const ImageBatch& x, ImageBatch x_adv, AttackConfig config,
                                   const GradientOracle& oracle);

}  // namespace lgap
