#pragma once

#include "lgap/classifier.hpp"
#include "lgap/config.hpp"
#include "lgap/datasets.hpp"
#include "lgap/diffusion.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>

namespace lgap {

inline constexpr const char* kVersion = "0.1.0";

// Components resolved from a RunConfig.
VarianceSchedule build_schedule(const RunConfig& config);
std::shared_ptr<const LatentCodec> build_codec(const RunConfig& config);
std::shared_ptr<const CaptionProvider> build_caption_provider(const RunConfig& config,
                                                              const std::vector<std::string>& class_names);
std::shared_ptr<const TextEncoder> build_text_encoder(const RunConfig& config);
std::shared_ptr<const Denoiser> build_denoiser(const RunConfig& config);
std::unique_ptr<Purifier> build_purifier(const RunConfig& config, const std::vector<std::string>& class_names);
std::unique_ptr<Classifier> build_classifier(const RunConfig& config);

// Every command writes into a staging directory next to the output and only
// renames it into place once everything succeeded. The output holds
// config.resolved.json and manifest.json.
struct CommandResult {
  std::filesystem::path output_dir;
  nlohmann::json summary;
  std::string text;  // human-readable result, may be empty
};

CommandResult cmd_purify(const RunConfig& config, const std::string& input, const std::string& output,
                         std::ostream* log = nullptr);
CommandResult cmd_build_dataset(const RunConfig& config, std::ostream* log = nullptr);
CommandResult cmd_finetune(const RunConfig& config, std::ostream* log = nullptr);
CommandResult cmd_attack(const RunConfig& config, std::ostream* log = nullptr);
CommandResult cmd_evaluate(const RunConfig& config, std::ostream* log = nullptr);
CommandResult cmd_train_toy(const RunConfig& config, std::ostream* log = nullptr);
// Fits the linear codec usable as codec.type=pretrained.
CommandResult cmd_fit_codec(const RunConfig& config, std::size_t latent_dim, std::ostream* log = nullptr);

}  // namespace lgap
