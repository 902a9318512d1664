#include "lgap/config.hpp"

#include "lgap/error.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>

namespace lgap {

using nlohmann::json;

namespace {

enum class Kind { kInt, kNumber, kString, kBool };

struct KeyRule {
  Kind kind;
  json fallback;
  std::vector<std::string> choices{};
  double min = -INFINITY;
  double max = INFINITY;
};

const std::map<std::string, KeyRule>& schema() {
  static const std::map<std::string, KeyRule> s = {
      {"seed", {Kind::kInt, 0, {}, 0}},
      {"output_dir", {Kind::kString, "lgap-out"}},
      {"schedule.type", {Kind::kString, "linear", {"linear", "cosine"}}},
      {"schedule.T", {Kind::kInt, 1000, {}, 1}},
      {"schedule.beta_start", {Kind::kNumber, 1e-4, {}, 0, 1}},
      {"schedule.beta_end", {Kind::kNumber, 0.02, {}, 0, 1}},
      {"codec.type", {Kind::kString, "identity", {"identity", "pretrained"}}},
      {"codec.model_id", {Kind::kString, ""}},
      {"codec.resize", {Kind::kString, "none", {"none", "nearest", "bilinear"}}},
      {"caption.provider", {Kind::kString, "pretrained", {"pretrained", "constant", "label_template"}}},
      {"caption.template", {Kind::kString, "a photo of a {label}"}},
      {"caption.text", {Kind::kString, ""}},
      {"caption.command", {Kind::kString, ""}},
      {"caption.max_tokens", {Kind::kInt, 16, {}, 1}},
      {"caption.embed_dim", {Kind::kInt, 32, {}, 1}},
      {"diffusion.t_frac", {Kind::kNumber, 0.5, {}, 0, 1}},
      {"diffusion.guidance_scale", {Kind::kNumber, 1.0, {}, 0}},
      {"diffusion.sampler_steps", {Kind::kInt, 0, {}, 0}},
      {"denoiser.type", {Kind::kString, "toy", {"pretrained", "toy", "stub"}}},
      {"denoiser.checkpoint", {Kind::kString, ""}},
      {"denoiser.hidden", {Kind::kInt, 256, {}, 1}},
      {"denoiser.time_features", {Kind::kInt, 32, {}, 2}},
      {"denoiser.epochs", {Kind::kInt, 60, {}, 0}},
      {"denoiser.batch_size", {Kind::kInt, 64, {}, 1}},
      {"denoiser.learning_rate", {Kind::kNumber, 1e-3, {}, 0}},
      {"denoiser.cond_dropout", {Kind::kNumber, 0.2, {}, 0, 1}},
      {"classifier.checkpoint", {Kind::kString, ""}},
      {"classifier.hidden", {Kind::kInt, 32, {}, 0}},
      {"classifier.epochs", {Kind::kInt, 30, {}, 0}},
      {"classifier.learning_rate", {Kind::kNumber, 1e-3, {}, 0}},
      {"classifier.batch_size", {Kind::kInt, 64, {}, 1}},
      {"finetune.epochs", {Kind::kInt, 15, {}, 0}},
      {"finetune.learning_rate", {Kind::kNumber, 1e-3, {}, 0}},
      {"finetune.optimizer", {Kind::kString, "adam", {"adam", "sgd"}}},
      {"finetune.batch_size", {Kind::kInt, 64, {}, 1}},
      {"finetune.seed", {Kind::kInt, 0, {}, 0}},
      {"finetune.augment", {Kind::kBool, false}},
      {"finetune.dataset", {Kind::kString, ""}},
      {"harness.dataset", {Kind::kString, ""}},
      {"harness.format", {Kind::kString, "auto", {"auto", "toy", "tensor", "images", "cifar10", "cifar100"}}},
      {"harness.train_dataset", {Kind::kString, ""}},
      {"harness.train_format", {Kind::kString, "auto", {"auto", "toy", "tensor", "images", "cifar10", "cifar100"}}},
      {"harness.subset_size", {Kind::kInt, 2048, {}, 0}},
      {"harness.subset_seed", {Kind::kInt, 0, {}, 0}},
      {"harness.batch_size", {Kind::kInt, 256, {}, 1}},
      {"harness.purify", {Kind::kBool, true}},
      {"harness.label", {Kind::kString, "LGAP"}},
      {"harness.report_format", {Kind::kString, "table", {"table", "json"}}},
  };
  return s;
}

const std::set<std::string> kAttackKeys = {"name", "mode", "epsilon", "steps", "step_size",
                                           "eot_samples", "seed", "random_start"};

void flatten(const json& doc, const std::string& prefix, json& flat, json& attack) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : doc.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (key == "attack") {
      attack = v;
    } else if (key.rfind("attack.", 0) == 0) {
      if (attack.is_null()) attack = json::object();
      if (!attack.is_object()) throw ConfigError("'" + key + "' cannot be combined with an attack array");
      attack[key.substr(7)] = v;
    } else if (v.is_object() && !schema().count(key)) {
      flatten(v, key, flat, attack);
    } else {
      flat[key] = v;
    }
  }
}

void check_value(const std::string& key, const json& v) {
  const auto it = schema().find(key);
  if (it == schema().end()) throw ConfigError("unknown config key '" + key + "'");
  const KeyRule& rule = it->second;
  switch (rule.kind) {
    case Kind::kInt:
      if (!v.is_number_integer()) throw ConfigError("'" + key + "' must be an integer");
      break;
    case Kind::kNumber:
      if (!v.is_number() || !std::isfinite(v.get<double>())) throw ConfigError("'" + key + "' must be a number");
      break;
    case Kind::kString:
      if (!v.is_string()) throw ConfigError("'" + key + "' must be a string");
      break;
    case Kind::kBool:
      if (!v.is_boolean()) throw ConfigError("'" + key + "' must be true or false");
      break;
  }
  if (rule.kind == Kind::kInt || rule.kind == Kind::kNumber) {
    const double d = v.get<double>();
    if (d < rule.min || d > rule.max) {
      throw ConfigError("'" + key + "' = " + v.dump() + " is out of range");
    }
  }
  if (!rule.choices.empty()) {
    const auto s = v.get<std::string>();
    bool ok = false;
    for (const auto& c : rule.choices) ok = ok || c == s;
    if (!ok) throw ConfigError("'" + key + "' = '" + s + "' is not one of the accepted values");
  }
}

void put_nested(json& root, const std::string& dotted, const json& v) {
  json* node = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = dotted.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &(*node)[dotted.substr(start, dot - start)];
  }
  (*node)[dotted.substr(start)] = v;
}

AttackConfig parse_attack(const json& a, std::size_t index) {
  const std::string where = "attack[" + std::to_string(index) + "]";
  if (!a.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : a.items()) {
    if (!kAttackKeys.count(k)) throw ConfigError("unknown config key 'attack." + k + "'");
  }
  AttackConfig c;
  try {
    if (!a.contains("mode")) throw ConfigError(where + " lacks 'mode'");
    c.mode = parse_attack_mode(a.at("mode").get<std::string>());
    if (a.contains("name")) c.name = a.at("name").get<std::string>();
    if (a.contains("epsilon")) {
      const json& e = a.at("epsilon");
      if (e.is_string()) {
        c.epsilon_text = e.get<std::string>();
      } else if (e.is_number()) {
        c.epsilon_text = e.dump();
      } else {
        throw ConfigError("attack.epsilon must be a number or a 'k/255' string");
      }
      c.epsilon = parse_epsilon(c.epsilon_text);
    }
    if (a.contains("steps")) c.steps = a.at("steps").get<std::size_t>();
    if (a.contains("step_size") && !a.at("step_size").is_null()) c.step_size = a.at("step_size").get<double>();
    if (a.contains("eot_samples")) c.eot_samples = a.at("eot_samples").get<std::size_t>();
    if (a.contains("seed")) c.seed = a.at("seed").get<std::uint64_t>();
    if (a.contains("random_start")) c.random_start = a.at("random_start").get<bool>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const DomainError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (c.mode == AttackMode::kBpda && !a.contains("eot_samples")) c.eot_samples = 1;
  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

}  // namespace

RunConfig::RunConfig() : user_(json::object()) { rebuild(); }

RunConfig RunConfig::from_json(const json& doc) {
  RunConfig c;
  json flat = json::object();
  json attack;
  flatten(doc, "", flat, attack);
  for (const auto& [k, v] : flat.items()) check_value(k, v);
  c.user_ = flat;
  c.attack_ = attack;
  c.rebuild();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

void RunConfig::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  set(key, value);
}

void RunConfig::set(const std::string& key, const json& value) {
  if (key == "attack") {
    attack_ = value;
  } else if (key.rfind("attack.", 0) == 0) {
    if (attack_.is_null()) attack_ = json::object();
    if (!attack_.is_object()) throw ConfigError("cannot override '" + key + "' when several attacks are declared");
    json v = value;
    if (key == "attack.epsilon" && v.is_number()) v = value.dump();
    attack_[key.substr(7)] = v;
  } else {
    json v = value;
    const auto it = schema().find(key);
    if (it != schema().end() && it->second.kind == Kind::kString && !v.is_string()) v = value.dump();
    check_value(key, v);
    user_[key] = v;
  }
  rebuild();
}

void RunConfig::rebuild() {
  json r = json::object();
  for (const auto& [k, rule] : schema()) put_nested(r, k, user_.contains(k) ? user_.at(k) : rule.fallback);

  attacks_.clear();
  if (attack_.is_array()) {
    for (std::size_t i = 0; i < attack_.size(); ++i) attacks_.push_back(parse_attack(attack_[i], i));
  } else if (attack_.is_object()) {
    if (attack_.contains("mode")) {
      attacks_.push_back(parse_attack(attack_, 0));
    } else {
      json probe = attack_;
      probe["mode"] = "preprocessor_blind";
      parse_attack(probe, 0);
    }
  } else if (!attack_.is_null()) {
    throw ConfigError("'attack' must be an object or an array of objects");
  }
  json attacks = json::array();
  for (const auto& a : attacks_) {
    attacks.push_back({{"name", a.name},
                       {"mode", to_string(a.mode)},
                       {"epsilon", a.epsilon_text},
                       {"steps", a.steps},
                       {"step_size", a.step_size ? json(*a.step_size) : json(nullptr)},
                       {"eot_samples", a.eot_samples},
                       {"seed", a.seed},
                       {"random_start", a.random_start}});
  }
  r["attack"] = attacks;

  const double bs = r["schedule"]["beta_start"].get<double>();
  const double be = r["schedule"]["beta_end"].get<double>();
  if (r["schedule"]["type"] == "linear" && !(bs > 0.0 && bs <= be && be < 1.0)) {
    throw ConfigError("schedule needs 0 < beta_start <= beta_end < 1");
  }
  if (r["caption"]["max_tokens"].get<std::int64_t>() > 4096) throw ConfigError("caption.max_tokens too large");
  resolved_ = std::move(r);
}

namespace {

const json& lookup(const json& root, const std::string& key) {
  if (!schema().count(key)) throw ConfigError("unknown config key '" + key + "'");
  const json* node = &root;
  std::size_t start = 0;
  for (std::size_t dot; (dot = key.find('.', start)) != std::string::npos; start = dot + 1) {
    node = &node->at(key.substr(start, dot - start));
  }
  return node->at(key.substr(start));
}

}  // namespace

std::int64_t RunConfig::integer(const std::string& key) const { return lookup(resolved_, key).get<std::int64_t>(); }
std::uint64_t RunConfig::seed_value(const std::string& key) const {
  return lookup(resolved_, key).get<std::uint64_t>();
}
double RunConfig::number(const std::string& key) const { return lookup(resolved_, key).get<double>(); }
const std::string& RunConfig::string(const std::string& key) const {
  return lookup(resolved_, key).get_ref<const std::string&>();
}
bool RunConfig::boolean(const std::string& key) const { return lookup(resolved_, key).get<bool>(); }

std::vector<AttackConfig> RunConfig::attacks() const { return attacks_; }

std::filesystem::path RunConfig::model_path(const std::string& key) const {
  std::filesystem::path p = string(key);
  if (p.empty() || p.is_absolute()) return p;
  if (const char* home = std::getenv("LGAP_HOME"); home != nullptr && *home != '\0') {
    return std::filesystem::path(home) / p;
  }
  return p;
}

std::vector<std::string> RunConfig::known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, rule] : schema()) keys.push_back(k);
  for (const auto& k : kAttackKeys) keys.push_back("attack." + k);
  return keys;
}

}  // namespace lgap
