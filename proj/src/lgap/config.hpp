#pragma once

#include "lgap/attacks.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lgap {

// Declarative run configuration. Keys are namespaced ("schedule.T"); a
// document may nest them ({"schedule": {"T": 100}}) or spell them dotted.
// `attack` is either one attack object or an array of them. Unknown keys,
// wrong types and out-of-range values raise ConfigError at construction, so
// nothing downstream starts on a bad config.
class RunConfig {
 public:
  RunConfig();  // all defaults
  static RunConfig from_json(const nlohmann::json& doc);
  static RunConfig load(const std::filesystem::path& path);

  // "key=value"; value is parsed as JSON when it parses, else taken as a string.
  void set(const std::string& assignment);
  void set(const std::string& key, const nlohmann::json& value);

  // Fully resolved document (defaults filled in), nested form.
  const nlohmann::json& resolved() const { return resolved_; }

  std::int64_t integer(const std::string& key) const;
  std::uint64_t seed_value(const std::string& key) const;
  double number(const std::string& key) const;
  const std::string& string(const std::string& key) const;
  bool boolean(const std::string& key) const;

  // Declared attacks in order; empty when no attack mode is configured.
  std::vector<AttackConfig> attacks() const;

  // Relative model/checkpoint paths resolve against $LGAP_HOME when set.
  std::filesystem::path model_path(const std::string& key) const;

  static std::vector<std::string> known_keys();

 private:
  void rebuild();

  nlohmann::json user_;      // flat map: dotted key -> value, excluding attack
  nlohmann::json attack_;    // null, object or array as given
  nlohmann::json resolved_;
  std::vector<AttackConfig> attacks_;
};

}  // namespace lgap
