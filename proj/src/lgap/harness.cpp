#include "lgap/harness.hpp"

#include "lgap/checksum.hpp"
#include "lgap/error.hpp"
#include "lgap/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

namespace lgap {

using nlohmann::json;

std::vector<std::size_t> sample_fixed_subset(std::size_t size, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw DomainError("subset size must be positive");
  if (n > size) {
    throw DomainError("subset size " + std::to_string(n) + " exceeds dataset size " + std::to_string(size));
  }
  std::vector<std::size_t> idx(size);
  std::iota(idx.begin(), idx.end(), 0);
  if (n == size) return idx;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string attack_display_name(const AttackConfig& config) {
  if (!config.name.empty()) return config.name;
  return to_string(config.mode) + " eps=" + config.epsilon_text;
}

namespace {

std::string bitmap(const std::vector<bool>& mask) {
  std::string s(mask.size(), '0');
  for (std::size_t i = 0; i < mask.size(); ++i) s[i] = mask[i] ? '1' : '0';
  return s;
}

std::vector<bool> parse_bitmap(const std::string& s) {
  std::vector<bool> mask(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') throw DomainError("malformed correctness bitmap");
    mask[i] = s[i] == '1';
  }
  return mask;
}

json record_json(const AccuracyRecord& r) {
  return {{"correct", r.correct}, {"accuracy", r.accuracy}, {"bitmap", bitmap(r.mask)}};
}

AccuracyRecord record_from(const json& j) {
  return {j.at("correct").get<std::size_t>(), j.at("accuracy").get<double>(),
          parse_bitmap(j.at("bitmap").get<std::string>())};
}

void check_record(const AccuracyRecord& r, std::size_t n, const std::string& what) {
  if (!(r.accuracy >= 0.0 && r.accuracy <= 100.0)) throw DomainError(what + " accuracy outside [0,100]");
  if (r.mask.size() != n) throw DomainError(what + " bitmap length differs from n_evaluated");
  const auto ones = static_cast<std::size_t>(std::count(r.mask.begin(), r.mask.end(), true));
  if (ones != r.correct) throw DomainError(what + " correct count disagrees with its bitmap");
  if (std::abs(r.accuracy - 100.0 * static_cast<double>(r.correct) / static_cast<double>(n)) > 1e-9) {
    throw DomainError(what + " accuracy disagrees with its correct count");
  }
}

AccuracyRecord make_record(std::vector<bool> mask) {
  AccuracyRecord r;
  r.correct = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  r.accuracy = mask.empty() ? 0.0 : 100.0 * static_cast<double>(r.correct) / static_cast<double>(mask.size());
  r.mask = std::move(mask);
  return r;
}

std::string format_percent(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string subset_checksum(const ImageBatch& x) {
  std::string bytes(reinterpret_cast<const char*>(x.data.data()), sizeof(double) * static_cast<std::size_t>(x.data.size()));
  if (x.labels) {
    bytes.append(reinterpret_cast<const char*>(x.labels->data()), sizeof(std::int64_t) * x.labels->size());
  }
  return sha256_hex(bytes);
}

}  // namespace

void EvalReport::validate() const {
  if (schema_version != kReportSchemaVersion) {
    throw DomainError("unsupported report schema version " + std::to_string(schema_version));
  }
  if (n_evaluated == 0) throw DomainError("report evaluates no samples");
  if (subset.size() != n_evaluated) throw DomainError("subset length differs from n_evaluated");
  check_record(natural, n_evaluated, "natural");
  for (const auto& r : robust) {
    if (r.attack.is_null()) throw DomainError("robust entry '" + r.name + "' lacks its attack config");
    check_record(r.result, n_evaluated, "robust '" + r.name + "'");
  }
  if (!config.is_object()) throw DomainError("report lacks its config echo");
  for (const char* key : {"purifier", "classifier", "caption", "attacks", "dataset"}) {
    if (!config.contains(key) || config.at(key).is_null()) {
      throw DomainError(std::string("report config echo lacks '") + key + "'");
    }
  }
  if (config.at("attacks").size() != robust.size()) throw DomainError("attack echo does not match robust columns");
  if (!(wall_clock_seconds >= 0.0)) throw DomainError("negative wall-clock time");
}

json EvalReport::to_json() const {
  json robust_json = json::array();
  for (const auto& r : robust) {
    json entry = record_json(r.result);
    entry["name"] = r.name;
    entry["attack"] = r.attack;
    entry["target"] = r.target;
    robust_json.push_back(entry);
  }
  return {{"schema_version", schema_version},
          {"label", label},
          {"n_evaluated", n_evaluated},
          {"subset_seed", subset_seed},
          {"seed", seed},
          {"subset", subset},
          {"natural", record_json(natural)},
          {"robust", robust_json},
          {"caption_uses_ground_truth", caption_uses_ground_truth},
          {"config", config},
          {"checksums", checksums},
          {"wall_clock_seconds", wall_clock_seconds}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  try {
    r.schema_version = j.at("schema_version").get<int>();
    r.label = j.at("label").get<std::string>();
    r.n_evaluated = j.at("n_evaluated").get<std::size_t>();
    r.subset_seed = j.at("subset_seed").get<std::uint64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.subset = j.at("subset").get<std::vector<std::size_t>>();
    r.natural = record_from(j.at("natural"));
    for (const auto& e : j.at("robust")) {
      r.robust.push_back({e.at("name").get<std::string>(), e.at("attack"), e.at("target").get<std::string>(),
                          record_from(e)});
    }
    r.caption_uses_ground_truth = j.at("caption_uses_ground_truth").get<bool>();
    r.config = j.at("config");
    r.checksums = j.at("checksums").get<std::map<std::string, std::string>>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  } catch (const json::exception& e) {
    throw DomainError(std::string("malformed report: ") + e.what());
  }
  r.validate();
  return r;
}

bool EvalReport::same_results(const EvalReport& other) const {
  json a = to_json();
  json b = other.to_json();
  a.erase("wall_clock_seconds");
  b.erase("wall_clock_seconds");
  return a == b;
}

EvalReport evaluate(const Classifier& f, const Purifier* purifier, const std::vector<AttackConfig>& attacks,
                    const Dataset& dataset, const EvalOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (options.batch_size == 0) throw ConfigError("harness.batch_size must be positive");
  if (!(dataset.images.shape == f.input_shape())) {
    throw ShapeError("dataset shape " + dataset.images.shape.str() + " does not match classifier input " +
                     f.input_shape().str());
  }
  for (const auto& a : attacks) {
    a.validate();
    if (a.mode != AttackMode::kPreprocessorBlind && purifier == nullptr) {
      throw ConfigError("attack mode " + to_string(a.mode) + " needs a purifier");
    }
  }
  dataset.images.validate(f.num_classes());

  EvalReport report;
  report.label = options.label;
  report.subset_seed = options.subset_seed;
  report.seed = options.seed;
  report.subset = sample_fixed_subset(dataset.size(), options.subset_size, options.subset_seed);
  report.n_evaluated = report.subset.size();
  const ImageBatch x = dataset.images.select(report.subset);
  const Labels& y = *x.labels;

  const std::uint64_t purify_base = derive_seed(options.seed, "purify");
  auto classify_batch = [&](const ImageBatch& batch, std::size_t b) {
    if (purifier == nullptr) return predict(f, batch);
    return predict(f, purifier->purify(batch, derive_seed(purify_base, b)));
  };

  std::vector<bool> natural(report.n_evaluated);
  std::vector<std::vector<bool>> robust(attacks.size(), std::vector<bool>(report.n_evaluated));
  std::vector<std::string> targets(attacks.size());
  std::size_t b = 0;
  for (std::size_t begin = 0; begin < report.n_evaluated; begin += options.batch_size, ++b) {
    const std::size_t end = std::min(report.n_evaluated, begin + options.batch_size);
    const ImageBatch batch = x.slice(begin, end);
    const Labels pred = classify_batch(batch, b);
    for (std::size_t i = begin; i < end; ++i) natural[i] = pred[i - begin] == y[i];
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      AttackConfig cfg = attacks[a];
      cfg.seed = derive_seed(attacks[a].seed, b);
      const AttackResult adv = run_attack(cfg, f, purifier, batch);
      targets[a] = adv.target;
      const Labels adv_pred = classify_batch(adv.x_adv, b);
      for (std::size_t i = begin; i < end; ++i) robust[a][i] = adv_pred[i - begin] == y[i];
    }
  }

  report.natural = make_record(std::move(natural));
  json attack_echo = json::array();
  for (std::size_t a = 0; a < attacks.size(); ++a) {
    attack_echo.push_back(attacks[a].to_json());
    report.robust.push_back(
        {attack_display_name(attacks[a]), attacks[a].to_json(), targets[a], make_record(std::move(robust[a]))});
  }
  const SampleShape s = f.input_shape();
  report.config = {
      {"purifier", purifier ? purifier->describe() : json{{"type", "none"}}},
      {"classifier",
       {{"kind", f.kind()}, {"input_shape", {s.channels, s.height, s.width}}, {"num_classes", f.num_classes()}}},
      {"caption", purifier ? purifier->caption_provider().describe() : json{{"provider", "none"}}},
      {"attacks", attack_echo},
      {"dataset",
       {{"source", dataset.source}, {"split", dataset.split}, {"size", dataset.size()},
        {"class_names", dataset.class_names}}},
      {"harness",
       {{"subset_size", options.subset_size}, {"subset_seed", options.subset_seed}, {"seed", options.seed},
        {"batch_size", options.batch_size}}}};
  if (!options.run_config.is_null()) report.config["run"] = options.run_config;
  report.caption_uses_ground_truth = purifier != nullptr && purifier->caption_provider().uses_ground_truth();
  report.checksums = options.checksums;
  report.checksums["subset"] = subset_checksum(x);
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.validate();
  return report;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "table") return ReportFormat::kTable;
  if (name == "json") return ReportFormat::kJson;
  throw ConfigError("unknown report format '" + name + "' (expected table or json)");
}

std::string render_report(const EvalReport& report, ReportFormat format) {
  report.validate();
  if (format == ReportFormat::kJson) return report.to_json().dump(2) + "\n";
  std::vector<std::string> header{"Natural"};
  std::vector<std::string> row{format_percent(report.natural.accuracy)};
  for (const auto& r : report.robust) {
    header.push_back(report.robust.size() == 1 ? "Robust" : "Robust (" + r.name + ")");
    row.push_back(format_percent(r.result.accuracy));
  }
  std::ostringstream out;
  out << report.label << "  n=" << report.n_evaluated;
  if (report.caption_uses_ground_truth) out << "  [captions use ground-truth labels]";
  out << "\n";
  auto line = [&](const std::vector<std::string>& cells) {
    out << "|";
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::size_t w = std::max(header[i].size(), row[i].size());
      out << " " << cells[i] << std::string(w - cells[i].size(), ' ') << " |";
    }
    out << "\n";
  };
  line(header);
  out << "|";
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << std::string(std::max(header[i].size(), row[i].size()) + 2, '-') << "|";
  }
  out << "\n";
  line(row);
  return out.str();
}

void save_report(const std::filesystem::path& path, const EvalReport& report) {
  report.validate();
  std::ofstream out(path);
  out << report.to_json().dump(2) << "\n";
  if (!out) throw IoError("cannot write report " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("report " + path.string() + " is not JSON: " + e.what());
  }
  return EvalReport::from_json(j);
}

}  // namespace lgap
