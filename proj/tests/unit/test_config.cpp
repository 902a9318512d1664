#include "lgap/config.hpp"
#include "lgap/error.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <unistd.h>

using namespace lgap;
using nlohmann::json;

TEST_CASE("defaults resolve for every declared key") {
  const RunConfig c;
  CHECK(c.integer("schedule.T") == 1000);
  CHECK(c.number("schedule.beta_start") == 1e-4);
  CHECK(c.number("schedule.beta_end") == 0.02);
  CHECK(c.number("diffusion.t_frac") == 0.5);
  CHECK(c.integer("finetune.epochs") == 15);
  CHECK(c.number("finetune.learning_rate") == 1e-3);
  CHECK(c.string("finetune.optimizer") == "adam");
  CHECK_FALSE(c.boolean("finetune.augment"));
  CHECK(c.integer("harness.subset_size") == 2048);
  CHECK(c.attacks().empty());
  CHECK(c.resolved()["attack"] == json::array());
  for (const auto& k : RunConfig::known_keys()) {
    if (k.rfind("attack.", 0) == 0) continue;
    const json* node = &c.resolved();
    std::size_t start = 0;
    for (std::size_t dot; (dot = k.find('.', start)) != std::string::npos; start = dot + 1) {
      node = &node->at(k.substr(start, dot - start));
    }
    CHECK(node->contains(k.substr(start)));
  }
}

TEST_CASE("nested and dotted documents are equivalent") {
  const auto a = RunConfig::from_json({{"schedule", {{"T", 100}}}, {"diffusion", {{"t_frac", 0.25}}}});
  const auto b = RunConfig::from_json({{"schedule.T", 100}, {"diffusion.t_frac", 0.25}});
  CHECK(a.resolved() == b.resolved());
  CHECK(a.integer("schedule.T") == 100);
}

TEST_CASE("unknown keys, wrong types and out-of-range values are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json({{"schedule", {{"steps", 10}}}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"schedule.T", "100"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"schedule.T", 0}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"diffusion.t_frac", 1.5}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"denoiser.type", "huge"}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"schedule.beta_start", 0.5}, {"schedule.beta_end", 0.1}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json(json::array()), ConfigError);
  RunConfig c;
  CHECK_THROWS_AS(c.set("nonsense"), ConfigError);
  CHECK_THROWS_AS(c.set("diffusion.nope=1"), ConfigError);
  CHECK_THROWS_AS(c.integer("harness.missing"), ConfigError);
}

TEST_CASE("overrides parse JSON values and fall back to strings") {
  RunConfig c;
  c.set("seed=7");
  c.set("diffusion.t_frac=0.1");
  c.set("caption.provider=label_template");
  c.set("caption.text=");
  c.set("harness.purify=false");
  CHECK(c.seed_value("seed") == 7);
  CHECK(c.number("diffusion.t_frac") == 0.1);
  CHECK(c.string("caption.provider") == "label_template");
  CHECK(c.string("caption.text").empty());
  CHECK_FALSE(c.boolean("harness.purify"));
  c.set("caption.text=42");
  CHECK(c.string("caption.text") == "42");
}

TEST_CASE("attack declarations") {
  SUBCASE("single object with fraction epsilon") {
    const auto c = RunConfig::from_json({{"attack", {{"mode", "preprocessor_blind"}, {"epsilon", "8/255"}}}});
    const auto a = c.attacks();
    REQUIRE(a.size() == 1);
    CHECK(a[0].epsilon == 8.0 / 255.0);
    CHECK(a[0].steps == 40);
    CHECK(a[0].resolved_step_size() == doctest::Approx(2.0 / 255.0));
    CHECK(a[0].eot_samples == 15);
    CHECK(a[0].random_start);
  }
  SUBCASE("array keeps declaration order") {
    const auto c = RunConfig::from_json(
        {{"attack", json::array({{{"mode", "bpda_eot"}, {"name", "first"}}, {{"mode", "preprocessor_blind"}}})}});
    const auto a = c.attacks();
    REQUIRE(a.size() == 2);
    CHECK(a[0].name == "first");
    CHECK(a[1].mode == AttackMode::kPreprocessorBlind);
  }
  SUBCASE("plain bpda defaults to one gradient sample") {
    const auto c = RunConfig::from_json({{"attack", {{"mode", "bpda"}}}});
    CHECK(c.attacks().at(0).eot_samples == 1);
  }
  SUBCASE("no mode means no attack") {
    const auto c = RunConfig::from_json({{"attack", {{"epsilon", "8/255"}}}});
    CHECK(c.attacks().empty());
  }
  SUBCASE("invalid epsilon strings fail validation") {
    CHECK_THROWS_AS(RunConfig::from_json({{"attack", {{"mode", "bpda"}, {"epsilon", "eight/255"}}}}), ConfigError);
    RunConfig c;
    c.set("attack.mode=preprocessor_blind");
    CHECK_THROWS_AS(c.set("attack.epsilon=9/0"), ConfigError);
    CHECK_THROWS_AS(c.set("attack.colour=red"), ConfigError);
    CHECK_THROWS_AS(c.set("attack.eot_samples=0"), ConfigError);
    CHECK_THROWS_AS(c.set("attack.mode=cw"), ConfigError);
  }
  SUBCASE("overrides build an attack") {
    RunConfig c;
    c.set("attack.mode=bpda_eot");
    c.set("attack.epsilon=0.05");
    c.set("attack.eot_samples=4");
    const auto a = c.attacks();
    REQUIRE(a.size() == 1);
    CHECK(a[0].epsilon == 0.05);
    CHECK(a[0].eot_samples == 4);
  }
}

TEST_CASE("the resolved document reloads to the same configuration") {
  RunConfig c;
  c.set("schedule.T=100");
  c.set(R"(attack=[{"mode":"bpda_eot","epsilon":"4/255","steps":7,"step_size":0.01}])");
  const auto again = RunConfig::from_json(c.resolved());
  CHECK(again.resolved() == c.resolved());
  CHECK(again.attacks().at(0).step_size.value() == 0.01);

  const auto path = std::filesystem::temp_directory_path() / ("lgap_cfg_" + std::to_string(::getpid()) + ".json");
  std::ofstream(path) << c.resolved().dump(2);
  CHECK(RunConfig::load(path).resolved() == c.resolved());
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(RunConfig::load(path), ConfigError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(RunConfig::load(path), ConfigError);
}

TEST_CASE("model paths resolve against the checkpoint root") {
  RunConfig c;
  c.set("denoiser.checkpoint=models/d.safetensors");
  ::setenv("LGAP_HOME", "/opt/lgap", 1);
  CHECK(c.model_path("denoiser.checkpoint") == std::filesystem::path("/opt/lgap/models/d.safetensors"));
  c.set("denoiser.checkpoint=/abs/d.safetensors");
  CHECK(c.model_path("denoiser.checkpoint") == std::filesystem::path("/abs/d.safetensors"));
  ::unsetenv("LGAP_HOME");
  c.set("denoiser.checkpoint=rel.safetensors");
  CHECK(c.model_path("denoiser.checkpoint") == std::filesystem::path("rel.safetensors"));
}
