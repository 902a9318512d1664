#pragma once

#include "lgap/attacks.hpp"
#include "lgap/classifier.hpp"
#include "lgap/datasets.hpp"
#include "lgap/diffusion.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lgap {

inline constexpr int kReportSchemaVersion = 1;

// n == size gives 0..size-1. Otherwise a partial Fisher-Yates shuffle of
// 0..size-1 driven by mt19937_64(seed) and uniform_index picks n indices,
// returned in ascending order.
std::vector<std::size_t> sample_fixed_subset(std::size_t size, std::size_t n, std::uint64_t seed);

struct AccuracyRecord {
  std::size_t correct = 0;
  double accuracy = 0.0;    // percent
  std::vector<bool> mask;   // per evaluated sample, subset order
};

struct RobustRecord {
  std::string name;
  nlohmann::json attack;    // AttackConfig echo
  std::string target;
  AccuracyRecord result;
};

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::string label;
  std::size_t n_evaluated = 0;
  std::uint64_t subset_seed = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> subset;
  AccuracyRecord natural;
  std::vector<RobustRecord> robust;
  bool caption_uses_ground_truth = false;
  nlohmann::json config;   // purifier, classifier, caption, attacks, dataset (+ run)
  std::map<std::string, std::string> checksums;
  double wall_clock_seconds = 0.0;

  // Throws DomainError on any broken invariant (ranges, counts, provenance).
  void validate() const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // Equality of everything except wall-clock time.
  bool same_results(const EvalReport& other) const;
};

struct EvalOptions {
  std::size_t subset_size = 2048;
  std::uint64_t subset_seed = 0;
  std::uint64_t seed = 0;           // purification randomness
  std::size_t batch_size = 256;
  std::string label = "LGAP";
  nlohmann::json run_config;        // echoed under config.run when not null
  std::map<std::string, std::string> checksums;
};

// Natural accuracy through (purifier?) -> classifier on the subset, then for
// each attack, attack the same subset in the same order and classify the
// adversarial batch through the same path. Batch b of every pass is purified
// with the same seed, so all columns are paired.
EvalReport evaluate(const Classifier& f, const Purifier* purifier, const std::vector<AttackConfig>& attacks,
                    const Dataset& dataset, const EvalOptions& options);

enum class ReportFormat { kTable, kJson };
ReportFormat parse_report_format(const std::string& name);

std::string render_report(const EvalReport& report, ReportFormat format);

void save_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(const std::filesystem::path& path);

std::string attack_display_name(const AttackConfig& config);

}  // namespace lgap
