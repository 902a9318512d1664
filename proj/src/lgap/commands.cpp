#include "lgap/commands.hpp"

#include "lgap/attacks.hpp"
#include "lgap/checksum.hpp"
#include "lgap/codec.hpp"
#include "lgap/error.hpp"
#include "lgap/finetune.hpp"
#include "lgap/harness.hpp"
#include "lgap/random.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>

namespace lgap {

namespace fs = std::filesystem;
using nlohmann::json;

VarianceSchedule build_schedule(const RunConfig& config) {
  const auto T = static_cast<std::size_t>(config.integer("schedule.T"));
  if (config.string("schedule.type") == "cosine") return make_cosine_schedule(T);
  return make_linear_schedule(T, config.number("schedule.beta_start"), config.number("schedule.beta_end"));
}

std::shared_ptr<const LatentCodec> build_codec(const RunConfig& config) {
  const std::string type = config.string("codec.type");
  if (type == "identity") return std::make_shared<IdentityCodec>();
  const fs::path path = config.model_path("codec.model_id");
  if (path.empty()) throw ConfigError("codec.type=pretrained needs codec.model_id");
  auto inner = std::make_shared<const LinearCodec>(LinearCodec::load(path));
  return std::make_shared<ResizingCodec>(std::move(inner), parse_resize_policy(config.string("codec.resize")));
}

std::shared_ptr<const CaptionProvider> build_caption_provider(const RunConfig& config,
                                                              const std::vector<std::string>& class_names) {
  const std::string provider = config.string("caption.provider");
  if (provider == "constant") return std::make_shared<ConstantCaptionProvider>(config.string("caption.text"));
  if (provider == "label_template") {
    return std::make_shared<LabelTemplateCaptionProvider>(config.string("caption.template"), class_names);
  }
  return std::make_shared<ExternalCaptionProvider>(config.string("caption.command"));
}

std::shared_ptr<const TextEncoder> build_text_encoder(const RunConfig& config) {
  return std::make_shared<HashTextEncoder>(static_cast<std::size_t>(config.integer("caption.max_tokens")),
                                           static_cast<std::size_t>(config.integer("caption.embed_dim")));
}

std::shared_ptr<const Denoiser> build_denoiser(const RunConfig& config) {
  const std::string type = config.string("denoiser.type");
  if (type == "stub") {
    return std::make_shared<IdentityDenoiser>(
        ConditionContract{static_cast<std::size_t>(config.integer("caption.max_tokens")),
                          static_cast<std::size_t>(config.integer("caption.embed_dim"))});
  }
  if (type == "pretrained") {
    throw AdapterError("no pretrained latent diffusion adapter is available in this build; "
                       "use denoiser.type=toy with a checkpoint from train-toy");
  }
  const fs::path path = config.model_path("denoiser.checkpoint");
  if (path.empty()) throw ConfigError("denoiser.type=toy needs denoiser.checkpoint");
  std::unique_ptr<ToyDenoiser> model = ToyDenoiser::load(path);
  if (!(model->schedule() == build_schedule(config))) {
    throw ConfigError("the schedule.* settings differ from the schedule " + path.string() + " was trained with");
  }
  const auto sampler_steps = static_cast<std::size_t>(config.integer("diffusion.sampler_steps"));
  if (sampler_steps != 0 && sampler_steps != model->schedule().steps()) {
    throw ConfigError("the toy denoiser samples on every schedule step; diffusion.sampler_steps must be 0 or T");
  }
  model->set_guidance_scale(config.number("diffusion.guidance_scale"));
  return std::shared_ptr<const Denoiser>(std::move(model));
}

std::unique_ptr<Purifier> build_purifier(const RunConfig& config, const std::vector<std::string>& class_names) {
  return std::make_unique<Purifier>(build_schedule(config), build_codec(config),
                                    build_caption_provider(config, class_names), build_text_encoder(config),
                                    build_denoiser(config), config.number("diffusion.t_frac"));
}

std::unique_ptr<Classifier> build_classifier(const RunConfig& config) {
  const fs::path path = config.model_path("classifier.checkpoint");
  if (path.empty()) throw ConfigError("classifier.checkpoint is not set");
  if (!fs::exists(path)) throw IoError("classifier checkpoint not found: " + path.string());
  return load_classifier(path);
}

namespace {

void note(std::ostream* log, const std::string& message) {
  if (log) *log << "[lgap] " << message << std::endl;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + path.string());
}

// Output directory written under "<target>.partial" and renamed on commit.
class Staging {
 public:
  explicit Staging(const std::string& target) {
    if (target.empty()) throw ConfigError("no output directory configured");
    target_ = fs::absolute(target).lexically_normal();
    if (target_.filename().empty()) target_ = target_.parent_path();
    if (fs::exists(target_) &&
        !(fs::is_directory(target_) && (fs::is_empty(target_) || fs::exists(target_ / "manifest.json")))) {
      throw IoError("refusing to replace " + target_.string() + ": not an lgap output directory");
    }
    staging_ = target_;
    staging_ += ".partial";
    fs::remove_all(staging_);
    fs::create_directories(staging_);
  }
  Staging(const Staging&) = delete;
  Staging& operator=(const Staging&) = delete;
  ~Staging() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& dir() const { return staging_; }
  const fs::path& target() const { return target_; }

  void commit(const RunConfig& config, const std::string& command, json manifest) {
    write_json(staging_ / "config.resolved.json", config.resolved());
    const fs::path manifest_path = staging_ / "manifest.json";
    if (fs::exists(manifest_path)) {
      std::ifstream in(manifest_path);
      json existing = json::parse(in);
      existing.update(manifest);
      manifest = existing;
    }
    json artifacts = json::object();
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(staging_)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) artifacts[fs::relative(f, staging_).generic_string()] = sha256_file(f);
    manifest["tool"] = "lgap";
    manifest["version"] = kVersion;
    manifest["command"] = command;
    manifest["seed"] = config.seed_value("seed");
    manifest["config_file"] = "config.resolved.json";
    manifest["artifacts"] = artifacts;
    write_json(manifest_path, manifest);
    if (fs::exists(target_)) fs::remove_all(target_);
    fs::rename(staging_, target_);
    committed_ = true;
  }

 private:
  fs::path target_;
  fs::path staging_;
  bool committed_ = false;
};

json file_input(const fs::path& path) {
  json j{{"path", path.string()}};
  if (fs::is_regular_file(path)) j["sha256"] = sha256_file(path);
  return j;
}

json dataset_input(const Dataset& d) {
  json j{{"source", d.source}, {"format", d.format}, {"size", d.size()}};
  const fs::path p(d.source);
  if (d.format == "tensor") {
    j["sha256"] = sha256_file(fs::is_directory(p) ? p / "images.safetensors" : p);
  }
  return j;
}

std::size_t resolve_subset_size(const RunConfig& config, const Dataset& d) {
  const auto n = static_cast<std::size_t>(config.integer("harness.subset_size"));
  return n == 0 ? d.size() : n;
}

std::string dataset_source(const RunConfig& config, const std::string& key) {
  const std::string s = config.string(key);
  if (s.empty()) throw ConfigError(key + " is not set");
  return s;
}

FinetuneConfig finetune_config(const RunConfig& config) {
  FinetuneConfig f;
  f.epochs = static_cast<std::size_t>(config.integer("finetune.epochs"));
  f.learning_rate = config.number("finetune.learning_rate");
  f.optimizer = parse_optimizer(config.string("finetune.optimizer"));
  f.batch_size = static_cast<std::size_t>(config.integer("finetune.batch_size"));
  f.seed = config.seed_value("finetune.seed");
  f.augment = config.boolean("finetune.augment");
  f.validate();
  return f;
}

json rerun_line(const std::string& command, const std::string& extra = "") {
  return "lgap " + command + " --config config.resolved.json" + extra;
}

}  // namespace

CommandResult cmd_purify(const RunConfig& config, const std::string& input, const std::string& output,
                         std::ostream* log) {
  if (input.empty()) throw ConfigError("purify needs an input path");
  if (input.rfind("toy://", 0) != 0 && !fs::exists(input)) throw IoError("input does not exist: " + input);
  Staging out(output);
  Dataset data = load_dataset(input, config.string("harness.format"), false);
  auto purifier = build_purifier(config, data.class_names);
  note(log, "purifying " + std::to_string(data.size()) + " images (" + std::to_string(purifier->diffusion_steps()) +
                " diffusion steps)");
  const auto seed = config.seed_value("seed");
  const auto batch = static_cast<std::size_t>(config.integer("harness.batch_size"));
  Dataset purified = data;
  purified.images = purify_in_batches(*purifier, data.images, seed, batch);
  purified.source = "purified:" + data.source;

  json manifest{{"purifier", purifier->describe()},
                {"input", dataset_input(data)},
                {"sample_count", purified.size()},
                {"batch_size", batch},
                {"arguments", {{"input", input}, {"output", output}}},
                {"rerun", rerun_line("purify", " '" + input + "' '" + output + "'")}};
  if (data.format == "images") {
    save_image_directory(out.dir(), purified);
    manifest["format"] = "images";
  } else {
    manifest["format"] = "tensor";
    save_tensor_dataset(out.dir(), purified, json::object());
  }
  out.commit(config, "purify", manifest);
  return {out.target(), {{"samples", purified.size()}, {"output", out.target().string()}}, ""};
}

CommandResult cmd_build_dataset(const RunConfig& config, std::ostream* log) {
  Staging out(config.string("output_dir"));
  std::string source = config.string("harness.train_dataset");
  std::string format = config.string("harness.train_format");
  if (source.empty()) {
    source = dataset_source(config, "harness.dataset");
    format = config.string("harness.format");
  }
  const Dataset data = load_dataset(source, format);
  auto purifier = build_purifier(config, data.class_names);
  const auto seed = config.seed_value("seed");
  const auto batch = static_cast<std::size_t>(config.integer("harness.batch_size"));
  note(log, "building purified dataset from " + std::to_string(data.size()) + " samples");
  const Dataset purified = build_purified_dataset(data, *purifier, seed, batch);
  const auto before = label_counts(*data.images.labels, data.class_names.size());
  const auto after = label_counts(*purified.images.labels, purified.class_names.size());
  json manifest{{"purifier", purifier->describe()},
                {"seed", seed},
                {"batch_size", batch},
                {"input", dataset_input(data)},
                {"label_counts", after},
                {"label_counts_input", before},
                {"rerun", rerun_line("build-dataset")}};
  const std::string checksum = save_tensor_dataset(out.dir(), purified, manifest);
  out.commit(config, "build-dataset", json::object());
  return {out.target(), {{"samples", purified.size()}, {"checksum", checksum}}, ""};
}

CommandResult cmd_finetune(const RunConfig& config, std::ostream* log) {
  const FinetuneConfig ft = finetune_config(config);
  const fs::path classifier_path = config.model_path("classifier.checkpoint");
  auto classifier = build_classifier(config);
  const Dataset data = load_dataset(dataset_source(config, "finetune.dataset"), "auto");
  Staging out(config.string("output_dir"));
  note(log, "fine-tuning on " + std::to_string(data.size()) + " samples for " + std::to_string(ft.epochs) +
                " epochs");
  const double acc_before = accuracy(*classifier, data.images);
  FinetuneResult result;
  try {
    result = finetune_classifier(*classifier, data.images, ft);
  } catch (const FinetuneDivergence& e) {
    fs::path snapshot = out.target();
    snapshot += ".last-good.safetensors";
    e.last_good()->save(snapshot);
    throw DivergenceError(std::string(e.what()) + "; last good parameters saved to " + snapshot.string());
  }
  const double acc_after = accuracy(*result.classifier, data.images);
  result.classifier->save(out.dir() / "classifier.safetensors");
  json metrics{{"loss_history", result.loss_history},
               {"train_accuracy_before", acc_before},
               {"train_accuracy_after", acc_after},
               {"finetune", ft.to_json()}};
  write_json(out.dir() / "finetune.json", metrics);
  out.commit(config, "finetune",
             {{"inputs", {{"classifier", file_input(classifier_path)}, {"dataset", dataset_input(data)}}},
              {"finetune", ft.to_json()},
              {"rerun", rerun_line("finetune")}});
  return {out.target(), metrics, ""};
}

CommandResult cmd_attack(const RunConfig& config, std::ostream* log) {
  const auto attacks = config.attacks();
  if (attacks.size() != 1) throw ConfigError("attack needs exactly one attack declared (attack.mode)");
  const AttackConfig& attack = attacks.front();
  auto classifier = build_classifier(config);
  const Dataset data = load_dataset(dataset_source(config, "harness.dataset"), config.string("harness.format"));
  std::unique_ptr<Purifier> purifier;
  if (attack.mode != AttackMode::kPreprocessorBlind) purifier = build_purifier(config, data.class_names);
  const auto subset = sample_fixed_subset(data.size(), resolve_subset_size(config, data),
                                          config.seed_value("harness.subset_seed"));
  Staging out(config.string("output_dir"));
  Dataset clean = data.select(subset);
  const auto batch = static_cast<std::size_t>(config.integer("harness.batch_size"));
  note(log, "attacking " + std::to_string(clean.size()) + " samples with " + attack_display_name(attack));

  Matrix adv(clean.images.data.rows(), clean.images.data.cols());
  std::vector<bool> success(clean.size());
  json batches = json::array();
  std::string target;
  double max_perturbation = 0.0;
  std::size_t b = 0;
  for (std::size_t begin = 0; begin < clean.size(); begin += batch, ++b) {
    const std::size_t end = std::min(clean.size(), begin + batch);
    AttackConfig cfg = attack;
    cfg.seed = derive_seed(attack.seed, b);
    const AttackResult r = run_attack(cfg, *classifier, purifier.get(), clean.images.slice(begin, end));
    adv.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin)) = r.x_adv.data;
    for (std::size_t i = begin; i < end; ++i) success[i] = r.success[i - begin];
    target = r.target;
    max_perturbation = std::max(max_perturbation, r.max_perturbation);
    batches.push_back({{"seed", cfg.seed}, {"loss_trajectory", r.loss_trajectory}, {"step_seeds", r.step_seeds}});
  }
  check_containment(clean.images.data, adv, attack.epsilon);
  Dataset adversarial = clean;
  adversarial.images = ImageBatch(clean.images.shape, std::move(adv), clean.images.labels);
  adversarial.source = "adversarial:" + data.source;
  save_tensor_dataset(out.dir() / "adversarial", adversarial, json::object());
  const auto successes = static_cast<std::size_t>(std::count(success.begin(), success.end(), true));
  std::string bitmap(success.size(), '0');
  for (std::size_t i = 0; i < success.size(); ++i) bitmap[i] = success[i] ? '1' : '0';
  json summary{{"attack", attack.to_json()},
               {"target", target},
               {"samples", clean.size()},
               {"success_count", successes},
               {"success_rate", 100.0 * static_cast<double>(successes) / static_cast<double>(clean.size())},
               {"max_perturbation", max_perturbation}};
  json record = summary;
  record["success_bitmap"] = bitmap;
  record["subset"] = subset;
  record["batches"] = batches;
  write_json(out.dir() / "attack.json", record);
  out.commit(config, "attack",
             {{"inputs",
               {{"classifier", file_input(config.model_path("classifier.checkpoint"))},
                {"dataset", dataset_input(data)}}},
              {"rerun", rerun_line("attack")}});
  return {out.target(), summary, ""};
}

CommandResult cmd_evaluate(const RunConfig& config, std::ostream* log) {
  const auto attacks = config.attacks();
  auto classifier = build_classifier(config);
  const Dataset data = load_dataset(dataset_source(config, "harness.dataset"), config.string("harness.format"));
  std::unique_ptr<Purifier> purifier;
  if (config.boolean("harness.purify")) purifier = build_purifier(config, data.class_names);
  const ReportFormat format = parse_report_format(config.string("harness.report_format"));
  Staging out(config.string("output_dir"));

  EvalOptions options;
  options.subset_size = resolve_subset_size(config, data);
  options.subset_seed = config.seed_value("harness.subset_seed");
  options.seed = config.seed_value("seed");
  options.batch_size = static_cast<std::size_t>(config.integer("harness.batch_size"));
  options.label = config.string("harness.label");
  options.run_config = config.resolved();
  const fs::path classifier_path = config.model_path("classifier.checkpoint");
  options.checksums["classifier"] = sha256_file(classifier_path);
  if (purifier && config.string("denoiser.type") == "toy") {
    options.checksums["denoiser"] = sha256_file(config.model_path("denoiser.checkpoint"));
  }
  if (purifier && config.string("codec.type") == "pretrained") {
    options.checksums["codec"] = sha256_file(config.model_path("codec.model_id"));
  }
  note(log, "evaluating " + std::to_string(options.subset_size) + " samples, " + std::to_string(attacks.size()) +
                " attack(s), purifier " + (purifier ? "on" : "off"));
  const EvalReport report = evaluate(*classifier, purifier.get(), attacks, data, options);
  save_report(out.dir() / "report.json", report);
  const std::string table = render_report(report, ReportFormat::kTable);
  {
    std::ofstream txt(out.dir() / "report.txt");
    txt << table;
  }
  out.commit(config, "evaluate",
             {{"inputs", {{"classifier", file_input(classifier_path)}, {"dataset", dataset_input(data)}}},
              {"rerun", rerun_line("evaluate")}});
  return {out.target(), report.to_json(), format == ReportFormat::kJson ? report.to_json().dump(2) + "\n" : table};
}

CommandResult cmd_train_toy(const RunConfig& config, std::ostream* log) {
  const Dataset data =
      load_dataset(dataset_source(config, "harness.train_dataset"), config.string("harness.train_format"));
  const VarianceSchedule schedule = build_schedule(config);
  const auto codec = build_codec(config);
  const auto captions = build_caption_provider(config, data.class_names);
  const auto encoder = build_text_encoder(config);
  const auto seed = config.seed_value("seed");
  Staging out(config.string("output_dir"));

  ToyTrainingOptions opt;
  opt.epochs = static_cast<std::size_t>(config.integer("denoiser.epochs"));
  opt.batch_size = static_cast<std::size_t>(config.integer("denoiser.batch_size"));
  opt.hidden = static_cast<std::size_t>(config.integer("denoiser.hidden"));
  opt.time_features = static_cast<std::size_t>(config.integer("denoiser.time_features"));
  opt.learning_rate = config.number("denoiser.learning_rate");
  opt.cond_dropout = config.number("denoiser.cond_dropout");
  opt.seed = derive_seed(seed, "denoiser");
  note(log, "training toy denoiser on " + std::to_string(data.size()) + " samples for " +
                std::to_string(opt.epochs) + " epochs");
  const ToyTrainingResult trained = train_toy_denoiser(data.images, *codec, *captions, *encoder, schedule, opt);
  trained.model->save(out.dir() / "denoiser.safetensors");

  const auto hidden = static_cast<std::size_t>(config.integer("classifier.hidden"));
  MlpClassifier base(data.images.shape, hidden == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{hidden},
                     data.class_names.size());
  base.initialize(derive_seed(seed, "classifier"));
  const SampleShape s = data.images.shape;
  std::vector<double> mean(s.channels), stdev(s.channels);
  const auto plane = static_cast<Eigen::Index>(s.height * s.width);
  for (std::size_t c = 0; c < s.channels; ++c) {
    const auto block = data.images.data.middleCols(static_cast<Eigen::Index>(c) * plane, plane);
    mean[c] = block.mean();
    stdev[c] = std::sqrt(std::max((block.array() - mean[c]).square().mean(), 1e-12));
  }
  base.set_normalization(mean, stdev);
  FinetuneConfig ft;
  ft.epochs = static_cast<std::size_t>(config.integer("classifier.epochs"));
  ft.learning_rate = config.number("classifier.learning_rate");
  ft.batch_size = static_cast<std::size_t>(config.integer("classifier.batch_size"));
  ft.seed = derive_seed(seed, "classifier-train");
  note(log, "training classifier for " + std::to_string(ft.epochs) + " epochs");
  const FinetuneResult clf = finetune_classifier(base, data.images, ft);
  clf.classifier->save(out.dir() / "classifier.safetensors");

  json metrics{{"denoiser",
                {{"train_loss", trained.train_loss},
                 {"heldout_loss", trained.heldout_loss},
                 {"initial_heldout_loss", trained.initial_heldout_loss},
                 {"train_size", trained.train_size},
                 {"heldout_size", trained.heldout_size}}},
               {"classifier",
                {{"loss_history", clf.loss_history}, {"train_accuracy", accuracy(*clf.classifier, data.images)}}}};
  write_json(out.dir() / "training.json", metrics);
  out.commit(config, "train-toy", {{"inputs", {{"dataset", dataset_input(data)}}}, {"rerun", rerun_line("train-toy")}});
  return {out.target(), metrics, ""};
}

CommandResult cmd_fit_codec(const RunConfig& config, std::size_t latent_dim, std::ostream* log) {
  const Dataset data =
      load_dataset(dataset_source(config, "harness.train_dataset"), config.string("harness.train_format"));
  if (data.size() < 2) throw DomainError("fitting a codec needs at least two samples");
  Staging out(config.string("output_dir"));
  const std::size_t held = std::max<std::size_t>(1, data.size() / 10);
  const ImageBatch train = data.images.slice(0, data.size() - held);
  const ImageBatch heldout = data.images.slice(data.size() - held, data.size());
  note(log, "fitting a " + std::to_string(latent_dim) + "-component codec");
  const LinearCodec codec = fit_linear_codec(train, latent_dim, heldout);
  codec.save(out.dir() / "codec.safetensors");
  json summary{{"latent_dim", latent_dim}, {"calibration_rmse", codec.calibration_rmse()}};
  out.commit(config, "fit-codec",
             {{"inputs", {{"dataset", dataset_input(data)}}},
              {"codec", summary},
              {"rerun", rerun_line("fit-codec", " --latent-dim " + std::to_string(latent_dim))}});
  return {out.target(), summary, ""};
}

}  // namespace lgap
