#include "lgap/attacks.hpp"

#include "lgap/error.hpp"
#include "lgap/random.hpp"

#include <cfloat>
#include <cmath>
#include <random>

namespace lgap {

AttackMode parse_attack_mode(const std::string& name) {
  if (name == "preprocessor_blind") return AttackMode::kPreprocessorBlind;
  if (name == "bpda") return AttackMode::kBpda;
  if (name == "bpda_eot") return AttackMode::kBpdaEot;
  throw ConfigError("unknown attack mode '" + name + "'");
}

std::string to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::kPreprocessorBlind: return "preprocessor_blind";
    case AttackMode::kBpda: return "bpda";
    case AttackMode::kBpdaEot: return "bpda_eot";
  }
  return "preprocessor_blind";
}

namespace {

double parse_number(const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError("cannot parse '" + text + "' as a number");
  }
  if (pos != text.size()) throw ConfigError("cannot parse '" + text + "' as a number");
  return v;
}

}  // namespace

double parse_epsilon(const std::string& text) {
  if (text.empty()) throw ConfigError("epsilon is empty");
  double v;
  try {
    if (const auto slash = text.find('/'); slash != std::string::npos) {
      const double num = parse_number(text.substr(0, slash));
      const double den = parse_number(text.substr(slash + 1));
      if (!(den > 0.0)) throw ConfigError("denominator must be positive");
      v = num / den;
    } else {
      v = parse_number(text);
    }
  } catch (const ConfigError& e) {
    throw ConfigError("invalid epsilon '" + text + "': " + e.what());
  }
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("epsilon '" + text + "' outside [0,1]");
  return v;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("attack epsilon outside [0,1]");
  if (steps > 0 && !(resolved_step_size() > 0.0) && epsilon > 0.0) {
    throw ConfigError("attack step size must be positive");
  }
  if (step_size && !(*step_size > 0.0)) throw ConfigError("attack step size must be positive");
  if (eot_samples < 1) throw ConfigError("attack eot_samples must be >= 1");
}

nlohmann::json AttackConfig::to_json() const {
  return {{"name", name},
          {"mode", to_string(mode)},
          {"epsilon", epsilon_text},
          {"epsilon_value", epsilon},
          {"steps", steps},
          {"step_size", resolved_step_size()},
          {"eot_samples", eot_samples},
          {"random_start", random_start},
          {"seed", seed},
          {"loss", "cross_entropy"}};
}

OracleOutput ClassifierOracle::gradient(const ImageBatch& x, const Labels& y, std::uint64_t) const {
  if (!(x.shape == f_.input_shape())) throw ShapeError("attack input does not match the classifier");
  auto g = f_.input_gradient(x.data, y);
  return {std::move(g.grad), std::move(g.loss)};
}

Matrix ClassifierOracle::logits(const ImageBatch& x, std::uint64_t) const {
  return classify_logits(f_, x);
}

OracleOutput bpda_gradient(const Purifier& purifier, const Classifier& f, const ImageBatch& x,
                           const Labels& y, std::uint64_t seed) {
  const ImageBatch purified = purifier.purify(x, seed);
  if (!(purified.shape == x.shape)) throw ShapeError("purifier changed the image shape");
  if (!(purified.shape == f.input_shape())) throw ShapeError("purified images do not match the classifier");
  auto g = f.input_gradient(purified.data, y);
  return {std::move(g.grad), std::move(g.loss)};
}

OracleOutput BpdaOracle::gradient(const ImageBatch& x, const Labels& y, std::uint64_t seed) const {
  return bpda_gradient(purifier_, f_, x, y, seed);
}

Matrix BpdaOracle::logits(const ImageBatch& x, std::uint64_t seed) const {
  return classify_logits(f_, purifier_.purify(x, seed));
}

EotEstimate eot_gradient(const GradFn& grad_fn, const ImageBatch& x, const Labels& y, std::size_t n,
                         std::uint64_t base_seed, std::vector<Matrix>* per_seed) {
  if (n < 1) throw DomainError("EOT needs at least one sample");
  EotEstimate est;
  if (per_seed) per_seed->clear();
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t seed = base_seed + i;
    OracleOutput out = grad_fn(x, y, seed);
    if (out.grad.rows() != x.data.rows() || out.grad.cols() != x.data.cols()) {
      throw ShapeError("EOT sub-gradient has the wrong shape");
    }
    est.seeds.push_back(seed);
    if (i == 0) {
      est.grad = out.grad;
      est.loss = out.loss;
    } else {
      const double w = 1.0 / static_cast<double>(i + 1);
      est.grad += (out.grad - est.grad) * w;
      for (std::size_t j = 0; j < est.loss.size(); ++j) est.loss[j] += (out.loss[j] - est.loss[j]) * w;
    }
    if (per_seed) per_seed->push_back(std::move(out.grad));
  }
  return est;
}

OracleOutput EotOracle::gradient(const ImageBatch& x, const Labels& y, std::uint64_t seed) const {
  auto est = eot_gradient(
      [this](const ImageBatch& xi, const Labels& yi, std::uint64_t s) { return inner_.gradient(xi, yi, s); },
      x, y, samples_, seed);
  return {std::move(est.grad), std::move(est.loss)};
}

void project_linf(Matrix& x, const Matrix& x0, double epsilon) {
  x = x.array().max(x0.array() - epsilon).min(x0.array() + epsilon).matrix();
  clamp_unit(x);
}

void check_containment(const Matrix& x0, const Matrix& adv, double epsilon) {
  if (x0.rows() != adv.rows() || x0.cols() != adv.cols()) throw ShapeError("adversarial batch shape changed");
  const double tol = epsilon + 2.0 * DBL_EPSILON;
  for (Eigen::Index i = 0; i < adv.size(); ++i) {
    const double a = adv.data()[i];
    if (!(a >= 0.0 && a <= 1.0) || !(std::abs(a - x0.data()[i]) <= tol)) {
      throw Error(ErrorCode::kRuntime, "adversarial example violates the L-infinity/[0,1] constraint");
    }
  }
}

namespace {

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void finish(AttackResult& r, const GradientOracle& oracle, const ImageBatch& x, const Labels& y) {
  check_containment(x.data, r.x_adv.data, r.config.epsilon);
  r.max_perturbation = r.x_adv.size() ? (r.x_adv.data - x.data).cwiseAbs().maxCoeff() : 0.0;
  const Labels pred = nn::argmax_rows(oracle.logits(r.x_adv, derive_seed(r.config.seed, "final")));
  r.success.resize(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) r.success[i] = pred[i] != y[i];
  r.target = oracle.target();
}

}  // namespace

AttackResult pgd_attack(const GradientOracle& oracle, const ImageBatch& x, const AttackConfig& config) {
  config.validate();
  x.validate();
  const Labels& y = x.require_labels();
  AttackResult r;
  r.config = config;
  Matrix adv = x.data;
  if (config.random_start && config.epsilon > 0.0) {
    std::mt19937_64 rng(derive_seed(config.seed, "start"));
    for (Eigen::Index i = 0; i < adv.size(); ++i) {
      adv.data()[i] += config.epsilon * (2.0 * uniform_unit(rng) - 1.0);
    }
    project_linf(adv, x.data, config.epsilon);
  }
  const double alpha = config.resolved_step_size();
  for (std::size_t s = 0; s < config.steps; ++s) {
    const std::uint64_t seed = derive_seed(config.seed, s + 1);
    r.step_seeds.push_back(seed);
    const OracleOutput g = oracle.gradient(ImageBatch(x.shape, adv, x.labels), y, seed);
    if (!all_finite(g.grad)) {
      throw Error(ErrorCode::kRuntime, "non-finite gradient at attack step " + std::to_string(s) +
                                           " (target: " + oracle.target() + ")");
    }
    r.loss_trajectory.push_back(mean(g.loss));
    adv += alpha * g.grad.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
    project_linf(adv, x.data, config.epsilon);
  }
  r.x_adv = ImageBatch(x.shape, std::move(adv), x.labels);
  finish(r, oracle, x, y);
  return r;
}

AttackResult bpda_eot_attack(const Purifier& purifier, const Classifier& f, const ImageBatch& x,
                             const AttackConfig& config) {
  if (config.mode != AttackMode::kBpdaEot) throw ConfigError("bpda_eot_attack needs mode bpda_eot");
  BpdaOracle bpda(purifier, f);
  EotOracle eot(bpda, config.eot_samples);
  return pgd_attack(eot, x, config);
}

AttackResult run_attack(const AttackConfig& config, const Classifier& f, const Purifier* purifier,
                        const ImageBatch& x) {
  switch (config.mode) {
    case AttackMode::kPreprocessorBlind: {
      ClassifierOracle oracle(f);
      return pgd_attack(oracle, x, config);
    }
    case AttackMode::kBpda: {
      if (!purifier) throw ConfigError("bpda attacks need a purifier");
      BpdaOracle oracle(*purifier, f);
      return pgd_attack(oracle, x, config);
    }
    case AttackMode::kBpdaEot:
      if (!purifier) throw ConfigError("bpda_eot attacks need a purifier");
      return bpda_eot_attack(*purifier, f, x, config);
  }
  throw ConfigError("unknown attack mode");
}

AttackResult admit_external_attack(const ImageBatch& x, ImageBatch x_adv, AttackConfig config,
                                   const GradientOracle& oracle) {
  config.validate();
  const Labels& y = x.require_labels();
  if (!(x_adv.shape == x.shape) || x_adv.size() != x.size()) {
    throw ShapeError("external adversarial batch does not match the clean batch");
  }
  AttackResult r;
  r.config = std::move(config);
  x_adv.labels = x.labels;
  r.x_adv = std::move(x_adv);
  finish(r, oracle, x, y);
  return r;
}

}  // namespace lgap
