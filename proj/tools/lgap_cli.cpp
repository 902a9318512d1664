#include "lgap/lgap.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

namespace {

int exit_code(lgap_status status) {
  if (status == LGAP_OK) return 0;
  return status == LGAP_ERR_CONFIG ? 2 : 1;
}

int report_failure(lgap_status status) {
  std::cerr << "lgap: " << lgap_status_name(status) << ": " << lgap_last_error() << "\n";
  return exit_code(status);
}

void print_result(char* result) {
  if (!result) return;
  const auto j = nlohmann::json::parse(result);
  lgap_string_free(result);
  const std::string text = j.value("text", "");
  if (!text.empty()) {
    std::cout << text;
  } else {
    std::cout << j.at("summary").dump(2) << "\n";
  }
  std::cerr << "output: " << j.at("output_dir").get<std::string>() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-guided adversarial purification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(lgap_version()));

  std::string config_path;
  std::vector<std::string> overrides;
  std::string output_dir;
  bool verbose = false;
  app.add_option("-c,--config", config_path, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("-s,--set", overrides, "override a config key (key=value); repeatable");
  app.add_option("-o,--output-dir", output_dir, "shorthand for --set output_dir=DIR");
  app.add_flag("-v,--verbose", verbose, "progress on stderr");

  std::string input, output;
  auto* purify = app.add_subcommand("purify", "purify a batch of images");
  purify->add_option("input", input, "image directory, tensor dataset, CIFAR batch or toy:// source")->required();
  purify->add_option("output", output, "output directory")->required();
  auto* build = app.add_subcommand("build-dataset", "materialise the purified training set");
  auto* finetune = app.add_subcommand("finetune", "fine-tune a classifier on a purified dataset");
  auto* attack = app.add_subcommand("attack", "generate adversarial examples");
  auto* evaluate = app.add_subcommand("evaluate", "natural and robust accuracy report");
  auto* train = app.add_subcommand("train-toy", "train the toy denoiser and classifier");
  std::size_t latent_dim = 16;
  auto* fit = app.add_subcommand("fit-codec", "fit the linear latent codec");
  fit->add_option("--latent-dim", latent_dim, "number of latent components")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  lgap_set_verbose(verbose ? 1 : 0);
  lgap_config* config = nullptr;
  lgap_status status = config_path.empty() ? lgap_config_new(&config) : lgap_config_load(config_path.c_str(), &config);
  if (status != LGAP_OK) return report_failure(status);
  if (!output_dir.empty()) overrides.push_back("output_dir=" + output_dir);
  for (const auto& o : overrides) {
    status = lgap_config_set(config, o.c_str());
    if (status != LGAP_OK) {
      lgap_config_free(config);
      return report_failure(status);
    }
  }

  char* result = nullptr;
  if (*purify) status = lgap_cmd_purify(config, input.c_str(), output.c_str(), &result);
  else if (*build) status = lgap_cmd_build_dataset(config, &result);
  else if (*finetune) status = lgap_cmd_finetune(config, &result);
  else if (*attack) status = lgap_cmd_attack(config, &result);
  else if (*evaluate) status = lgap_cmd_evaluate(config, &result);
  else if (*train) status = lgap_cmd_train_toy(config, &result);
  else if (*fit) status = lgap_cmd_fit_codec(config, latent_dim, &result);
  lgap_config_free(config);
  if (status != LGAP_OK) return report_failure(status);
  print_result(result);
  return 0;
}
