#include "lgap/error.hpp"
#include "lgap/schedules.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace lgap;

namespace {

// Independent cumulative product in extended precision, betas rebuilt from
// the interpolation formula rather than read back from the schedule.
long double linear_alpha_bar(std::size_t T, long double bs, long double be, std::size_t k) {
  long double p = 1.0L;
  for (std::size_t s = 0; s < k; ++s) {
    const long double b = T == 1 ? bs : bs + (be - bs) * static_cast<long double>(s) / static_cast<long double>(T - 1);
    p *= 1.0L - b;
  }
  return p;
}

}  // namespace

TEST_CASE("constant two-step schedule") {
  const auto s = make_linear_schedule(2, 0.5, 0.5);
  CHECK(s.betas() == std::vector<double>{0.5, 0.5});
  CHECK(s.alpha_bars() == std::vector<double>{1.0, 0.5, 0.25});
}

TEST_CASE("single step schedule") {
  const auto s = make_linear_schedule(1, 0.1, 0.1);
  CHECK(s.betas() == std::vector<double>{0.1});
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("linear T=1000 matches the high-precision product") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  // 50-digit product of (1 - beta_k), frozen.
  const double frozen = 4.035829765375683314817635e-05;
  CHECK(std::abs(s.alpha_bar(1000) - frozen) / frozen < 1e-12);
  const long double oracle = linear_alpha_bar(1000, 1e-4L, 0.02L, 1000);
  CHECK(std::abs(static_cast<long double>(s.alpha_bar(1000)) - oracle) / oracle < 1e-12L);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
}

TEST_CASE("alpha bars: left fold agreement and strict decrease over random schedules") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1e-5, 0.3);
  for (int trial = 0; trial < 200; ++trial) {
    double a = u(rng), b = u(rng);
    if (a > b) std::swap(a, b);
    const std::size_t T = 1 + rng() % 2000;
    const auto s = make_linear_schedule(T, a, b);
    REQUIRE(s.alpha_bars().size() == T + 1);
    CHECK(s.alpha_bar(0) == 1.0);
    CHECK(s.alpha_bar(T) > 0.0);
    long double fold = 1.0L;
    for (std::size_t k = 1; k <= T; ++k) {
      CHECK(s.beta(k) > 0.0);
      CHECK(s.beta(k) < 1.0);
      CHECK(s.alpha_bar(k) < s.alpha_bar(k - 1));
      CHECK(s.alpha_bar(k) == s.alpha_bar(k - 1) * (1.0 - s.beta(k)));
      fold *= 1.0L - s.beta(k);
      if (k == T) CHECK(std::abs(s.alpha_bar(k) - fold) / fold < 1e-12L);
    }
  }
}

TEST_CASE("cosine schedule is valid") {
  const auto s = make_cosine_schedule(1000);
  CHECK(s.steps() == 1000);
  CHECK(s.type() == "cosine");
  for (std::size_t k = 1; k <= 1000; ++k) CHECK(s.alpha_bar(k) < s.alpha_bar(k - 1));
  CHECK(s.alpha_bar(1000) > 0.0);
}

TEST_CASE("schedule bounds are enforced") {
  CHECK_THROWS_AS(make_linear_schedule(0, 0.1, 0.2), DomainError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), DomainError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.2), DomainError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), DomainError);
  CHECK_THROWS_AS(VarianceSchedule("custom", {0.5, 1.0}), DomainError);
  CHECK_THROWS_AS(VarianceSchedule("custom", {}), DomainError);
}

TEST_CASE("fraction_to_step") {
  CHECK(fraction_to_step(0.5, 1000) == 500);
  CHECK(fraction_to_step(0.0, 37) == 0);
  CHECK(fraction_to_step(1.0, 50) == 50);
  CHECK(fraction_to_step(0.5, 5) == 3);   // 2.5 rounds away from zero
  CHECK(fraction_to_step(0.1, 1000) == 100);
  CHECK_THROWS_AS(fraction_to_step(-0.01, 10), DomainError);
  CHECK_THROWS_AS(fraction_to_step(1.01, 10), DomainError);
  CHECK_THROWS_AS(fraction_to_step(std::nan(""), 10), DomainError);
}

TEST_CASE("fraction_to_step is monotone") {
  for (std::size_t T : {1u, 7u, 100u, 1000u}) {
    std::size_t prev = 0;
    for (int i = 0; i <= 1000; ++i) {
      const std::size_t k = fraction_to_step(i / 1000.0, T);
      CHECK(k >= prev);
      CHECK(k <= T);
      prev = k;
    }
  }
}
