#include "lgap/attacks.hpp"
#include "lgap/classifier.hpp"
#include "lgap/codec.hpp"
#include "lgap/conditioning.hpp"
#include "lgap/datasets.hpp"
#include "lgap/diffusion.hpp"
#include "lgap/error.hpp"
#include "lgap/finetune.hpp"
#include "lgap/harness.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <unordered_map>

#include <unistd.h>

using namespace lgap;

namespace {

// Sampler written from its contract: sparse Fisher-Yates over 0..size-1, each
// swap partner drawn uniformly from [i, size) with 64-bit rejection sampling
// (accept r < (2^64 - 1) - ((2^64 - 1) mod bound)), result sorted.
std::vector<std::size_t> reference_subset(std::size_t size, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::unordered_map<std::size_t, std::size_t> moved;
  auto at = [&](std::size_t i) {
    auto it = moved.find(i);
    return it == moved.end() ? i : it->second;
  };
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned __int128 all = (static_cast<unsigned __int128>(1) << 64) - 1;
    const std::uint64_t bound = size - i;
    const unsigned __int128 limit = all - all % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (static_cast<unsigned __int128>(r) >= limit);
    const std::size_t j = i + r % bound;
    const std::size_t vi = at(i), vj = at(j);
    moved[i] = vj;
    moved[j] = vi;
    out.push_back(vj);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Reads the true label from pixel 0 (label / 4) and returns its one-hot row.
class OracleClassifier final : public Classifier {
 public:
  explicit OracleClassifier(SampleShape s) : shape_(s) {}
  std::string kind() const override { return "oracle"; }
  SampleShape input_shape() const override { return shape_; }
  std::size_t num_classes() const override { return 2; }
  Matrix logits(const Matrix& x) const override {
    Matrix out = Matrix::Zero(x.rows(), 2);
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i, x(i, 0) > 0.125 ? 1 : 0) = 1.0;
    return out;
  }
  InputGradient input_gradient(const Matrix& x, const Labels& y) const override {
    return {Matrix::Zero(x.rows(), x.cols()), std::vector<double>(y.size(), 0.0)};
  }
  std::unique_ptr<Classifier> clone() const override { return std::make_unique<OracleClassifier>(shape_); }

 private:
  SampleShape shape_;
};

Dataset labelled_pixels(std::size_t n, std::uint64_t seed) {
  Dataset d = [&] {
    ToyStripesOptions o;
    o.samples = n;
    o.size = 4;
    o.seed = seed;
    return make_toy_stripes(o);
  }();
  for (std::size_t i = 0; i < n; ++i) {
    d.images.data(static_cast<Eigen::Index>(i), 0) = static_cast<double>((*d.images.labels)[i]) * 0.25;
  }
  return d;
}

Dataset toy(std::size_t n, std::uint64_t seed) {
  ToyStripesOptions o;
  o.samples = n;
  o.size = 4;
  o.seed = seed;
  return make_toy_stripes(o);
}

AttackConfig named(std::string name, AttackMode mode, double eps) {
  AttackConfig c;
  c.name = std::move(name);
  c.mode = mode;
  c.epsilon = eps;
  c.epsilon_text = std::to_string(eps);
  c.steps = 3;
  c.eot_samples = 2;
  return c;
}

MlpClassifier trained_mlp(const Dataset& d) {
  MlpClassifier f(d.images.shape, {8}, 2);
  f.initialize(1);
  f.set_normalization({0.5}, {0.15});
  FinetuneConfig c;
  c.epochs = 20;
  c.learning_rate = 1e-2;
  c.batch_size = 32;
  auto r = finetune_classifier(f, d.images, c);
  return *dynamic_cast<MlpClassifier*>(r.classifier.get());
}

Purifier toy_purifier(const Dataset& d) {
  const auto schedule = make_linear_schedule(20, 1e-3, 0.2);
  auto den = std::make_shared<ToyDenoiser>(ToyDenoiserShape{d.images.shape, {4, 8}, 8, 4}, schedule);
  den->initialize(2);
  den->set_data_statistics(0.5, 0.12);
  return Purifier(schedule, std::make_shared<IdentityCodec>(),
                  std::make_shared<LabelTemplateCaptionProvider>("{label}", d.class_names),
                  std::make_shared<HashTextEncoder>(4, 8), den, 0.2);
}

}  // namespace

TEST_CASE("fixed subset: full size is the canonical order") {
  const auto s = sample_fixed_subset(10, 10, 99);
  for (std::size_t i = 0; i < 10; ++i) CHECK(s[i] == i);
}

TEST_CASE("fixed subset: same seed gives the same list, errors on bad sizes") {
  CHECK(sample_fixed_subset(1000, 100, 4) == sample_fixed_subset(1000, 100, 4));
  CHECK(sample_fixed_subset(1000, 100, 4) != sample_fixed_subset(1000, 100, 5));
  CHECK_THROWS_AS(sample_fixed_subset(10, 11, 0), DomainError);
  CHECK_THROWS_AS(sample_fixed_subset(10, 0, 0), DomainError);
}

TEST_CASE("fixed subset: 2048 of 50000 matches the reference sampler") {
  for (std::uint64_t seed : {0ULL, 1ULL, 20240101ULL}) {
    const auto got = sample_fixed_subset(50000, 2048, seed);
    const auto want = reference_subset(50000, 2048, seed);
    CHECK(got == want);
    CHECK(got.size() == 2048);
    CHECK(std::adjacent_find(got.begin(), got.end()) == got.end());
    CHECK(got.back() < 50000);
  }
}

TEST_CASE("fixed subset: indices are spread uniformly") {
  std::vector<std::size_t> hits(10, 0);
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    for (auto i : sample_fixed_subset(100, 10, seed)) ++hits[i / 10];
  }
  for (auto h : hits) CHECK(std::abs(static_cast<double>(h) - 400.0) < 80.0);
}

TEST_CASE("perfect classifier with no attack scores 100 percent") {
  const Dataset d = labelled_pixels(64, 1);
  EvalOptions o;
  o.subset_size = 32;
  const auto r = evaluate(OracleClassifier(d.images.shape), nullptr, {}, d, o);
  CHECK(r.natural.accuracy == 100.0);
  CHECK(r.natural.correct == 32);
  CHECK(r.n_evaluated == 32);
  CHECK(r.robust.empty());
}

TEST_CASE("majority-class baseline scores the subset's majority share") {
  const Dataset d = toy(1000, 2);
  RowVector logits(2);
  logits << 1.0, 0.0;
  const ConstantClassifier f(d.images.shape, logits);
  EvalOptions o;
  o.subset_size = 200;
  o.subset_seed = 7;
  const auto r = evaluate(f, nullptr, {}, d, o);
  std::size_t zeros = 0;
  for (auto i : r.subset) zeros += (*d.images.labels)[i] == 0;
  CHECK(r.natural.correct == zeros);
  CHECK(r.natural.accuracy == doctest::Approx(100.0 * static_cast<double>(zeros) / 200.0));
  CHECK(std::abs(r.natural.accuracy - 50.0) < 15.0);
}

TEST_CASE("no purifier and no attack reduces to plain test accuracy") {
  const Dataset d = toy(96, 3);
  const auto f = trained_mlp(d);
  EvalOptions o;
  o.subset_size = 96;
  o.batch_size = 40;
  const auto r = evaluate(f, nullptr, {}, d, o);
  CHECK(r.natural.accuracy == doctest::Approx(accuracy(f, d.images)));
}

TEST_CASE("reports are reproducible, consistent and round trip") {
  const Dataset d = toy(64, 4);
  const auto f = trained_mlp(d);
  const Purifier p = toy_purifier(d);
  const std::vector<AttackConfig> attacks{named("zeta", AttackMode::kPreprocessorBlind, 0.05),
                                          named("alpha", AttackMode::kBpdaEot, 0.05),
                                          named("mid", AttackMode::kBpda, 0.05)};
  EvalOptions o;
  o.subset_size = 24;
  o.batch_size = 10;
  o.seed = 3;
  const auto a = evaluate(f, &p, attacks, d, o);
  const auto b = evaluate(f, &p, attacks, d, o);
  CHECK(a.same_results(b));
  CHECK(a.caption_uses_ground_truth);

  for (const auto* rec : {&a.natural, &a.robust[0].result, &a.robust[1].result, &a.robust[2].result}) {
    CHECK(rec->mask.size() == a.n_evaluated);
    CHECK(static_cast<std::size_t>(std::count(rec->mask.begin(), rec->mask.end(), true)) == rec->correct);
    const double k = rec->accuracy * static_cast<double>(a.n_evaluated) / 100.0;
    CHECK(std::abs(k - std::round(k)) < 1e-9);
    CHECK(rec->accuracy >= 0.0);
    CHECK(rec->accuracy <= 100.0);
  }

  const EvalReport back = EvalReport::from_json(nlohmann::json::parse(render_report(a, ReportFormat::kJson)));
  CHECK(back.same_results(a));
  CHECK(back.wall_clock_seconds == a.wall_clock_seconds);
  CHECK(back.to_json() == a.to_json());

  const auto path = std::filesystem::temp_directory_path() / ("lgap_report_" + std::to_string(::getpid()) + ".json");
  save_report(path, a);
  CHECK(load_report(path).same_results(a));
  std::filesystem::remove(path);

  const std::string table = render_report(a, ReportFormat::kTable);
  const auto pz = table.find("Robust (zeta)");
  const auto pa = table.find("Robust (alpha)");
  const auto pm = table.find("Robust (mid)");
  REQUIRE(pz != std::string::npos);
  REQUIRE(pa != std::string::npos);
  REQUIRE(pm != std::string::npos);
  CHECK(table.find("Natural") < pz);
  CHECK(pz < pa);
  CHECK(pa < pm);
  CHECK(table.find("ground-truth") != std::string::npos);
}

TEST_CASE("a single attack renders as Natural and Robust columns") {
  const Dataset d = toy(32, 5);
  const auto f = trained_mlp(d);
  EvalOptions o;
  o.subset_size = 16;
  const auto r = evaluate(f, nullptr, {named("", AttackMode::kPreprocessorBlind, 8.0 / 255.0)}, d, o);
  const std::string table = render_report(r, ReportFormat::kTable);
  CHECK(table.find("| Natural | Robust |") != std::string::npos);
  CHECK(table.find("Robust (") == std::string::npos);
  CHECK(r.robust[0].name == attack_display_name(named("", AttackMode::kPreprocessorBlind, 8.0 / 255.0)));
}

TEST_CASE("reports missing provenance or with broken counts are invalid") {
  const Dataset d = toy(32, 6);
  RowVector logits(2);
  logits << 0.0, 1.0;
  EvalOptions o;
  o.subset_size = 8;
  const auto good = evaluate(ConstantClassifier(d.images.shape, logits), nullptr, {}, d, o);
  CHECK_NOTHROW(good.validate());
  for (const char* key : {"purifier", "classifier", "caption", "attacks", "dataset"}) {
    EvalReport r = good;
    r.config.erase(key);
    CHECK_THROWS_AS(r.validate(), DomainError);
  }
  EvalReport r = good;
  r.natural.correct += 1;
  CHECK_THROWS_AS(r.validate(), DomainError);
  r = good;
  r.n_evaluated = 0;
  CHECK_THROWS_AS(r.validate(), DomainError);
}

TEST_CASE("adaptive attacks without a purifier are rejected before any compute") {
  const Dataset d = toy(16, 7);
  RowVector logits(2);
  logits << 0.0, 1.0;
  EvalOptions o;
  o.subset_size = 8;
  CHECK_THROWS_AS(evaluate(ConstantClassifier(d.images.shape, logits), nullptr,
                           {named("x", AttackMode::kBpda, 0.1)}, d, o),
                  ConfigError);
}

TEST_CASE("report format names") {
  CHECK(parse_report_format("table") == ReportFormat::kTable);
  CHECK(parse_report_format("json") == ReportFormat::kJson);
  CHECK_THROWS_AS(parse_report_format("csv"), ConfigError);
}
