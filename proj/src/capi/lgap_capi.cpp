#include "lgap/lgap.h"

#include "lgap/commands.hpp"
#include "lgap/config.hpp"
#include "lgap/datasets.hpp"
#include "lgap/error.hpp"
#include "lgap/harness.hpp"

#include <cstring>
#include <iostream>
#include <memory>
#include <new>
#include <string>

struct lgap_config {
  lgap::RunConfig value;
};
struct lgap_images {
  lgap::Dataset value;
};
struct lgap_purifier {
  std::unique_ptr<lgap::Purifier> value;
};
struct lgap_classifier {
  std::unique_ptr<lgap::Classifier> value;
};
struct lgap_report {
  lgap::EvalReport value;
};

namespace {

thread_local std::string g_last_error;
bool g_verbose = false;

lgap_status fail(lgap_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <typename F>
lgap_status guard(F&& f) {
  try {
    g_last_error.clear();
    f();
    return LGAP_OK;
  } catch (const lgap::Error& e) {
    return fail(static_cast<lgap_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(LGAP_ERR_CONFIG, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(LGAP_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return fail(LGAP_ERR_RUNTIME, "out of memory");
  } catch (const std::exception& e) {
    return fail(LGAP_ERR_RUNTIME, e.what());
  } catch (...) {
    return fail(LGAP_ERR_RUNTIME, "unknown failure");
  }
}

char* copy_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw lgap::Error(lgap::ErrorCode::kInvalidArgument, std::string(what) + " is NULL");
}

std::ostream* log_stream() { return g_verbose ? &std::cerr : nullptr; }

void emit(const lgap::CommandResult& r, char** result) {
  if (!result) return;
  nlohmann::json j{{"output_dir", r.output_dir.string()}, {"summary", r.summary}, {"text", r.text}};
  *result = copy_string(j.dump());
}

}  // namespace

extern "C" {

const char* lgap_version(void) { return lgap::kVersion; }

const char* lgap_status_name(lgap_status status) {
  switch (status) {
    case LGAP_OK: return "ok";
    case LGAP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case LGAP_ERR_CONFIG: return "config error";
    case LGAP_ERR_DOMAIN: return "domain error";
    case LGAP_ERR_SHAPE: return "shape error";
    case LGAP_ERR_IO: return "i/o error";
    case LGAP_ERR_ADAPTER: return "adapter error";
    case LGAP_ERR_DIVERGENCE: return "divergence";
    case LGAP_ERR_RUNTIME: return "runtime error";
  }
  return "unknown status";
}

const char* lgap_last_error(void) { return g_last_error.c_str(); }
void lgap_set_verbose(int verbose) { g_verbose = verbose != 0; }
void lgap_string_free(char* s) { std::free(s); }

lgap_status lgap_config_new(lgap_config** out) {
  return guard([&] {
    require(out, "out");
    *out = new lgap_config{lgap::RunConfig()};
  });
}

lgap_status lgap_config_load(const char* path, lgap_config** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new lgap_config{lgap::RunConfig::load(path)};
  });
}

lgap_status lgap_config_from_json(const char* json, lgap_config** out) {
  return guard([&] {
    require(json, "json");
    require(out, "out");
    const auto doc = nlohmann::json::parse(json, nullptr, false);
    if (doc.is_discarded()) throw lgap::ConfigError("config is not valid JSON");
    *out = new lgap_config{lgap::RunConfig::from_json(doc)};
  });
}

lgap_status lgap_config_set(lgap_config* config, const char* assignment) {
  return guard([&] {
    require(config, "config");
    require(assignment, "assignment");
    lgap::RunConfig copy = config->value;
    copy.set(assignment);
    config->value = std::move(copy);
  });
}

lgap_status lgap_config_resolved_json(const lgap_config* config, char** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    *out = copy_string(config->value.resolved().dump(2));
  });
}

void lgap_config_free(lgap_config* config) { delete config; }

lgap_status lgap_images_new(size_t n, size_t c, size_t h, size_t w, const double* data, const int64_t* labels,
                            lgap_images** out) {
  return guard([&] {
    require(out, "out");
    if (n > 0) require(data, "data");
    const lgap::SampleShape shape{c, h, w};
    lgap::Matrix m = Eigen::Map<const lgap::Matrix>(data, static_cast<Eigen::Index>(n),
                                                    static_cast<Eigen::Index>(shape.size()));
    std::optional<lgap::Labels> y;
    if (labels) y = lgap::Labels(labels, labels + n);
    lgap::Dataset d;
    d.images = lgap::ImageBatch(shape, std::move(m), std::move(y));
    d.images.validate();
    if (d.images.labels) {
      std::int64_t max_label = -1;
      for (auto v : *d.images.labels) max_label = std::max(max_label, v);
      for (std::int64_t i = 0; i <= max_label; ++i) d.class_names.push_back(std::to_string(i));
    }
    d.source = "memory";
    *out = new lgap_images{std::move(d)};
  });
}

lgap_status lgap_images_load(const char* source, const char* format, lgap_images** out) {
  return guard([&] {
    require(source, "source");
    require(out, "out");
    *out = new lgap_images{lgap::load_dataset(source, format ? format : "auto", false)};
  });
}

lgap_status lgap_images_shape(const lgap_images* images, size_t* n, size_t* c, size_t* h, size_t* w) {
  return guard([&] {
    require(images, "images");
    const auto& s = images->value.images.shape;
    if (n) *n = images->value.size();
    if (c) *c = s.channels;
    if (h) *h = s.height;
    if (w) *w = s.width;
  });
}

lgap_status lgap_images_data(const lgap_images* images, const double** data) {
  return guard([&] {
    require(images, "images");
    require(data, "data");
    *data = images->value.images.data.data();
  });
}

lgap_status lgap_images_labels(const lgap_images* images, const int64_t** labels) {
  return guard([&] {
    require(images, "images");
    require(labels, "labels");
    const auto& y = images->value.images.labels;
    *labels = y ? y->data() : nullptr;
  });
}

void lgap_images_free(lgap_images* images) { delete images; }

lgap_status lgap_purifier_create(const lgap_config* config, const lgap_images* classes, lgap_purifier** out) {
  return guard([&] {
    require(config, "config");
    require(out, "out");
    const std::vector<std::string> names = classes ? classes->value.class_names : std::vector<std::string>{};
    *out = new lgap_purifier{lgap::build_purifier(config->value, names)};
  });
}

lgap_status lgap_purifier_run(const lgap_purifier* purifier, const lgap_images* input, uint64_t seed,
                              lgap_images** out) {
  return guard([&] {
    require(purifier, "purifier");
    require(input, "input");
    require(out, "out");
    lgap::Dataset d = input->value;
    d.images = purifier->value->purify(input->value.images, seed);
    *out = new lgap_images{std::move(d)};
  });
}

lgap_status lgap_purifier_describe(const lgap_purifier* purifier, char** out) {
  return guard([&] {
    require(purifier, "purifier");
    require(out, "out");
    *out = copy_string(purifier->value->describe().dump(2));
  });
}

void lgap_purifier_free(lgap_purifier* purifier) { delete purifier; }

lgap_status lgap_classifier_load(const char* path, lgap_classifier** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new lgap_classifier{lgap::load_classifier(path)};
  });
}

lgap_status lgap_classifier_num_classes(const lgap_classifier* classifier, size_t* out) {
  return guard([&] {
    require(classifier, "classifier");
    require(out, "out");
    *out = classifier->value->num_classes();
  });
}

lgap_status lgap_classifier_predict(const lgap_classifier* classifier, const lgap_images* images,
                                    int64_t* predictions) {
  return guard([&] {
    require(classifier, "classifier");
    require(images, "images");
    require(predictions, "predictions");
    const auto pred = lgap::predict(*classifier->value, images->value.images);
    std::copy(pred.begin(), pred.end(), predictions);
  });
}

void lgap_classifier_free(lgap_classifier* classifier) { delete classifier; }

lgap_status lgap_report_load(const char* path, lgap_report** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    *out = new lgap_report{lgap::load_report(path)};
  });
}

lgap_status lgap_report_render(const lgap_report* report, const char* format, char** out) {
  return guard([&] {
    require(report, "report");
    require(out, "out");
    *out = copy_string(lgap::render_report(report->value, lgap::parse_report_format(format ? format : "table")));
  });
}

lgap_status lgap_report_natural_accuracy(const lgap_report* report, double* out) {
  return guard([&] {
    require(report, "report");
    require(out, "out");
    *out = report->value.natural.accuracy;
  });
}

lgap_status lgap_report_robust_count(const lgap_report* report, size_t* out) {
  return guard([&] {
    require(report, "report");
    require(out, "out");
    *out = report->value.robust.size();
  });
}

lgap_status lgap_report_robust_accuracy(const lgap_report* report, size_t index, double* out) {
  return guard([&] {
    require(report, "report");
    require(out, "out");
    if (index >= report->value.robust.size()) {
      throw lgap::Error(lgap::ErrorCode::kInvalidArgument, "robust index out of range");
    }
    *out = report->value.robust[index].result.accuracy;
  });
}

void lgap_report_free(lgap_report* report) { delete report; }

lgap_status lgap_cmd_purify(const lgap_config* config, const char* input, const char* output, char** result) {
  return guard([&] {
    require(config, "config");
    require(input, "input");
    require(output, "output");
    emit(lgap::cmd_purify(config->value, input, output, log_stream()), result);
  });
}

lgap_status lgap_cmd_build_dataset(const lgap_config* config, char** result) {
  return guard([&] {
    require(config, "config");
    emit(lgap::cmd_build_dataset(config->value, log_stream()), result);
  });
}

lgap_status lgap_cmd_finetune(const lgap_config* config, char** result) {
  return guard([&] {
    require(config, "config");
    emit(lgap::cmd_finetune(config->value, log_stream()), result);
  });
}

lgap_status lgap_cmd_attack(const lgap_config* config, char** result) {
  return guard([&] {
    require(config, "config");
    emit(lgap::cmd_attack(config->value, log_stream()), result);
  });
}

lgap_status lgap_cmd_evaluate(const lgap_config* config, char** result) {
  return guard([&] {
    require(config, "config");
    emit(lgap::cmd_evaluate(config->value, log_stream()), result);
  });
}

lgap_status lgap_cmd_train_toy(const lgap_config* config, char** result) {
  return guard([&] {
    require(config, "config");
    emit(lgap::cmd_train_toy(config->value, log_stream()), result);
  });
}

lgap_status lgap_cmd_fit_codec(const lgap_config* config, size_t latent_dim, char** result) {
  return guard([&] {
    require(config, "config");
    emit(lgap::cmd_fit_codec(config->value, latent_dim, log_stream()), result);
  });
}

}  // extern "C"
