// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
// required criterion fails. Criterion 10 needs pretrained adapters and a GPU.

#include "lgap/attacks.hpp"
#include "lgap/classifier.hpp"
#include "lgap/codec.hpp"
#include "lgap/commands.hpp"
#include "lgap/conditioning.hpp"
#include "lgap/config.hpp"
#include "lgap/datasets.hpp"
#include "lgap/diffusion.hpp"
#include "lgap/harness.hpp"
#include "lgap/nn.hpp"
#include "lgap/random.hpp"
#include "lgap/schedules.hpp"

#include <algorithm>
#include <cfloat>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

using namespace lgap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

const SampleShape kShape{1, 4, 4};

ImageBatch random_batch(std::size_t n, std::uint64_t seed, std::size_t classes, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kShape.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<std::int64_t>(rng() % classes);
  return ImageBatch(kShape, m, y);
}

MlpClassifier two_layer(std::uint64_t seed, std::size_t classes = 3) {
  MlpClassifier f(kShape, {8}, classes, Activation::kTanh);
  f.initialize(seed);
  f.set_normalization({0.5}, {0.25});
  return f;
}

std::shared_ptr<const Purifier> identity_purifier() {
  return std::make_shared<Purifier>(make_linear_schedule(10, 1e-3, 0.2), std::make_shared<IdentityCodec>(),
                                    std::make_shared<ConstantCaptionProvider>(""),
                                    std::make_shared<HashTextEncoder>(2, 4),
                                    std::make_shared<IdentityDenoiser>(ConditionContract{2, 4}), 0.0);
}

std::shared_ptr<const Purifier> toy_purifier(double t_frac) {
  const auto schedule = make_linear_schedule(20, 1e-3, 0.2);
  auto den = std::make_shared<ToyDenoiser>(ToyDenoiserShape{kShape, {2, 4}, 8, 4}, schedule);
  den->initialize(17);
  den->set_data_statistics(0.5, 0.2);
  return std::make_shared<Purifier>(schedule, std::make_shared<IdentityCodec>(),
                                    std::make_shared<ConstantCaptionProvider>("x"),
                                    std::make_shared<HashTextEncoder>(2, 4), den, t_frac);
}

Outcome forward_marginals() {
  // Cumulative product accumulated in long double, independent of the
  // schedule code.
  long double prod = 1.0L;
  for (int k = 0; k < 100; ++k) prod *= 1.0L - 0.01L;
  const double abar = static_cast<double>(prod);
  const double z0 = 1.0;
  const std::size_t draws = 10000;
  const VarianceSchedule s("constant", std::vector<double>(100, 0.01));
  SeededNoise noise(20240601);
  const SampleShape one{1, 1, 1};
  const LatentBatch z = forward_diffuse(LatentBatch{one, one, Matrix::Constant(draws, 1, z0)}, s, 100, noise);
  const double mean = z.data.mean();
  const double var = (z.data.array() - mean).square().sum() / static_cast<double>(draws - 1);
  const double mean_err = std::abs(mean - std::sqrt(abar) * z0) / (std::sqrt(abar) * z0);
  const double var_err = std::abs(var - (1.0 - abar)) / (1.0 - abar);
  const bool oracle_ok = std::abs(abar - 0.366032341273229504930616) < 1e-15 &&
                         std::abs(s.alpha_bar(100) - abar) < 1e-13;
  return {oracle_ok && mean_err <= 0.02 && var_err <= 0.02,
          "abar=" + fmt(abar, 12) + " mean rel err=" + fmt(mean_err) + " var rel err=" + fmt(var_err)};
}

Outcome linear_pgd_oracle() {
  MlpClassifier f(kShape, {}, 2);
  f.set_normalization({0.0}, {1.0});
  auto& layer = f.layers().at(0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = 0; i < layer.weight.size(); ++i) {
    double v = u(rng);
    if (std::abs(v) < 0.05) v = 0.3;
    layer.weight.data()[i] = v;
  }
  layer.bias << 0.1, -0.2;
  const ImageBatch x = random_batch(256, 6, 2, 0.1, 0.9);
  const double eps = 8.0 / 255.0;
  AttackConfig c;
  c.epsilon = eps;
  c.steps = 1;
  c.step_size = eps;
  c.random_start = false;
  const auto r = run_attack(c, f, nullptr, x);
  std::size_t agree = 0, total = 0;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.data.rows(); ++i) {
    // d CE/dx for two classes points along (w1 - w0) for label 0 and (w0 - w1) for label 1.
    const double s_y = 1.0 - 2.0 * static_cast<double>((*x.labels)[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < x.data.cols(); ++j) {
      const double dir = (layer.weight(1, j) - layer.weight(0, j) > 0 ? 1.0 : -1.0) * s_y;
      const double expect = x.data(i, j) + eps * dir;
      const double got = r.x_adv.data(i, j);
      worst = std::max(worst, std::abs(got - expect));
      if ((got - x.data(i, j) > 0) == (dir > 0)) ++agree;
      ++total;
    }
  }
  return {agree == total && worst <= 1e-9,
          "sign agreement " + std::to_string(agree) + "/" + std::to_string(total) + ", max abs err " + fmt(worst)};
}

Outcome bpda_finite_differences() {
  const auto f = two_layer(8);
  const auto p = identity_purifier();
  const ImageBatch x = random_batch(8, 9, 3, 0.1, 0.9);
  const auto g = bpda_gradient(*p, f, x, *x.labels, 0);
  const double h = 1e-5;
  auto loss = [&](const Matrix& m) {
    const ImageBatch xp = p->purify(ImageBatch(kShape, m, x.labels), 0);
    Matrix grad;
    return nn::softmax_cross_entropy(f.logits(xp.data), *x.labels, &grad);
  };
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.data.size(); ++i) {
    Matrix up = x.data, down = x.data;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (loss(up) - loss(down)) / (2.0 * h);
    const double an = g.grad.data()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
  }
  return {worst < 1e-3, "max rel err " + fmt(worst)};
}

Outcome eot_reductions() {
  const auto f = two_layer(10);
  const auto p = toy_purifier(0.3);
  const ImageBatch x = random_batch(5, 11, 3);
  const GradFn stochastic = [&](const ImageBatch& xi, const Labels& yi, std::uint64_t s) {
    return bpda_gradient(*p, f, xi, yi, s);
  };
  const GradFn deterministic = [&](const ImageBatch& xi, const Labels& yi, std::uint64_t) {
    auto g = f.input_gradient(xi.data, yi);
    return OracleOutput{g.grad, g.loss};
  };
  const bool n1 = eot_gradient(stochastic, x, *x.labels, 1, 42).grad == stochastic(x, *x.labels, 42).grad;
  const Matrix base = deterministic(x, *x.labels, 0).grad;
  bool det = true;
  for (std::size_t n : {1u, 2u, 3u, 7u, 10u, 15u, 40u}) det = det && eot_gradient(deterministic, x, *x.labels, n, 5).grad == base;
  std::vector<Matrix> logged;
  const auto e = eot_gradient(stochastic, x, *x.labels, 10, 100, &logged);
  Matrix mean = Matrix::Zero(x.data.rows(), x.data.cols());
  bool replay = logged.size() == 10;
  for (std::size_t i = 0; replay && i < logged.size(); ++i) {
    const Matrix again = stochastic(x, *x.labels, 100 + i).grad;
    replay = again == logged[i];
    mean += again;
  }
  mean /= 10.0;
  const double err = replay ? (e.grad - mean).cwiseAbs().maxCoeff() : INFINITY;
  return {n1 && det && replay && err <= 1e-6,
          std::string("n=1 exact ") + (n1 ? "yes" : "no") + ", deterministic exact " + (det ? "yes" : "no") +
              ", n=10 max abs err " + fmt(err)};
}

Outcome purifier_identity_determinism() {
  ToyStripesOptions o;
  o.samples = 64;
  o.size = 16;
  o.seed = 3;
  const Dataset d = make_toy_stripes(o);
  const auto schedule = make_linear_schedule(100, 1e-3, 0.2);
  auto den = std::make_shared<ToyDenoiser>(ToyDenoiserShape{d.images.shape, {8, 16}, 32, 8}, schedule);
  den->initialize(4);
  den->set_data_statistics(0.5, 0.12);
  auto make = [&](double t) {
    return Purifier(schedule, std::make_shared<IdentityCodec>(),
                    std::make_shared<LabelTemplateCaptionProvider>("a photo of {label} stripes", d.class_names),
                    std::make_shared<HashTextEncoder>(8, 16), den, t);
  };
  const bool identity = make(0.0).purify(d.images, 123).data == d.images.data;
  const Purifier p = make(0.5);
  const ImageBatch a = p.purify(d.images, 99);
  const ImageBatch b = p.purify(d.images, 99);
  const bool same = a.data == b.data;
  const bool moved = a.data != d.images.data;
  return {identity && same && moved, std::string("t=0 identity ") + (identity ? "exact" : "broken") +
                                         ", repeat run " + (same ? "bitwise equal" : "differs")};
}

Outcome containment() {
  const auto p = toy_purifier(0.3);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t violations = 0, instances = 0;
  for (std::size_t trial = 0; trial < 1000; ++trial) {
    const auto mode = static_cast<AttackMode>(trial % 3);
    const auto f = two_layer(rng());
    const ImageBatch x = random_batch(1 + rng() % 3, rng(), 3);
    AttackConfig c;
    c.mode = mode;
    c.epsilon = trial % 5 == 0 ? 8.0 / 255.0 : u(rng) * 0.5;
    c.steps = 1 + rng() % 4;
    c.seed = rng();
    c.step_size = c.epsilon * (0.1 + 2.0 * u(rng)) + 1e-6;
    c.random_start = trial % 2 == 0;
    c.eot_samples = 1 + rng() % 3;
    const auto r = run_attack(c, f, p.get(), x);
    ++instances;
    bool ok = r.x_adv.shape == x.shape && r.x_adv.data.rows() == x.data.rows();
    for (Eigen::Index i = 0; ok && i < r.x_adv.data.size(); ++i) {
      const double a = r.x_adv.data.data()[i];
      ok = a >= 0.0 && a <= 1.0 && std::abs(a - x.data.data()[i]) <= c.epsilon + 2.0 * DBL_EPSILON;
    }
    if (!ok) ++violations;
  }
  return {violations == 0 && instances == 1000,
          std::to_string(instances) + " instances, " + std::to_string(violations) + " violations"};
}

// Toy benchmark shared by criteria 7 to 9.
struct ToyBench {
  bool ready = false;
  std::string error;
  EvalReport undefended, guided, unguided;
};

fs::path scratch_root() {
  static const fs::path root = fs::temp_directory_path() / ("lgap_acceptance_" + std::to_string(::getpid()));
  return root;
}

RunConfig toy_config() {
  RunConfig c = RunConfig::load(fs::path(LGAP_SOURCE_DIR) / "configs" / "toy.json");
  const fs::path model = scratch_root() / "model";
  c.set("denoiser.checkpoint=" + (model / "denoiser.safetensors").string());
  c.set("classifier.checkpoint=" + (model / "classifier.safetensors").string());
  c.set("harness.subset_size=256");
  return c;
}

EvalReport run_eval(RunConfig c, const std::string& name, const std::vector<std::string>& sets) {
  for (const auto& s : sets) c.set(s);
  c.set("output_dir=" + (scratch_root() / name).string());
  const auto t0 = std::chrono::steady_clock::now();
  const CommandResult r = cmd_evaluate(c);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "  [" << name << "] " << fmt(secs, 3) << " s\n" << r.text << std::flush;
  return load_report(r.output_dir / "report.json");
}

ToyBench& toy_bench() {
  static ToyBench bench = [] {
    ToyBench b;
    try {
      fs::remove_all(scratch_root());
      fs::create_directories(scratch_root());
      RunConfig train = toy_config();
      train.set("output_dir=" + (scratch_root() / "model").string());
      const auto t0 = std::chrono::steady_clock::now();
      cmd_train_toy(train);
      std::cout << "  [train] "
                << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 3) << " s\n";
      const std::string blind = R"({"name":"PGD","mode":"preprocessor_blind","epsilon":"8/255","steps":40})";
      const std::string adaptive =
          R"({"name":"BPDA+EOT","mode":"bpda_eot","epsilon":"8/255","steps":40,"eot_samples":4})";
      const RunConfig base = toy_config();
      b.undefended = run_eval(base, "undefended", {"harness.purify=false", "attack=[" + blind + "]"});
      b.guided = run_eval(base, "guided", {"attack=[" + blind + "," + adaptive + "]"});
      b.unguided = run_eval(base, "unguided",
                            {"caption.provider=constant", "caption.text=", "attack=[" + blind + "]"});
      b.ready = true;
    } catch (const std::exception& e) {
      b.error = e.what();
    }
    return b;
  }();
  return bench;
}

Outcome toy_end_to_end() {
  const ToyBench& b = toy_bench();
  if (!b.ready) return {false, "toy benchmark failed: " + b.error};
  const double undefended = b.undefended.robust.at(0).result.accuracy;
  const double defended = b.guided.robust.at(0).result.accuracy;
  const double drop = b.undefended.natural.accuracy - b.guided.natural.accuracy;
  const bool pass = undefended < 10.0 && defended - undefended >= 40.0 && drop <= 15.0 &&
                    b.guided.subset == b.undefended.subset;
  return {pass, "undefended robust " + fmt(undefended) + "%, purified robust " + fmt(defended) +
                    "% (+" + fmt(defended - undefended) + "), natural " + fmt(b.undefended.natural.accuracy) +
                    "% -> " + fmt(b.guided.natural.accuracy) + "% (drop " + fmt(drop) + ")"};
}

Outcome guidance_effect() {
  const ToyBench& b = toy_bench();
  if (!b.ready) return {false, "toy benchmark failed: " + b.error};
  const double guided = b.guided.robust.at(0).result.accuracy;
  const double unguided = b.unguided.robust.at(0).result.accuracy;
  const bool paired = b.guided.subset == b.unguided.subset && b.guided.seed == b.unguided.seed;
  return {paired && guided - unguided >= 5.0, "label captions " + fmt(guided) + "%, empty caption " +
                                                  fmt(unguided) + "% (margin " + fmt(guided - unguided) + ")" +
                                                  (paired ? "" : ", NOT paired")};
}

Outcome adaptive_ordering() {
  const ToyBench& b = toy_bench();
  if (!b.ready) return {false, "toy benchmark failed: " + b.error};
  const double blind = b.guided.robust.at(0).result.accuracy;
  const double adaptive = b.guided.robust.at(1).result.accuracy;
  return {adaptive <= blind, "BPDA+EOT " + fmt(adaptive) + "% vs blind PGD " + fmt(blind) + "%"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"forward-diffusion marginals", forward_marginals},
      {"PGD analytic oracle", linear_pgd_oracle},
      {"BPDA gradient vs finite differences", bpda_finite_differences},
      {"EOT reductions", eot_reductions},
      {"purifier identity and determinism", purifier_identity_determinism},
      {"L-inf containment", containment},
      {"toy end-to-end recovery", toy_end_to_end},
      {"language-guidance effect", guidance_effect},
      {"adaptive-attack ordering", adaptive_ordering},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::cout << "criterion " << i + 1 << ": " << (o.pass ? "PASS" : "FAIL") << " - " << criteria[i].first << ": "
              << o.detail << " [" << fmt(secs, 3) << " s]" << std::endl;
  }
  std::cout << "criterion 10: SKIPPED - pretrained CIFAR-10/ImageNet reproduction: optional, needs a GPU and "
               "pretrained caption/diffusion/classifier adapters, not run"
            << std::endl;
  std::error_code ec;
  fs::remove_all(scratch_root(), ec);
  std::cout << (failed == 0 ? "all required criteria passed" : std::to_string(failed) + " required criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
