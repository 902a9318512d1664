#ifndef LGAP_LGAP_H
#define LGAP_LGAP_H

#include <stddef.h>
#include <stdint.h>

#if defined(LGAP_BUILDING_LIBRARY)
#define LGAP_API __attribute__((visibility("default")))
#else
#define LGAP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum lgap_status {
  LGAP_OK = 0,
  LGAP_ERR_INVALID_ARGUMENT = 1,
  LGAP_ERR_CONFIG = 2,
  LGAP_ERR_DOMAIN = 3,
  LGAP_ERR_SHAPE = 4,
  LGAP_ERR_IO = 5,
  LGAP_ERR_ADAPTER = 6,
  LGAP_ERR_DIVERGENCE = 7,
  LGAP_ERR_RUNTIME = 8
} lgap_status;

LGAP_API const char* lgap_version(void);
LGAP_API const char* lgap_status_name(lgap_status status);
/* Message of the last failing call on this thread; "" when none. */
LGAP_API const char* lgap_last_error(void);
/* Progress lines on stderr from the lgap_cmd_* functions. */
LGAP_API void lgap_set_verbose(int verbose);
LGAP_API void lgap_string_free(char* s);

/* Run configuration */
typedef struct lgap_config lgap_config;

LGAP_API lgap_status lgap_config_new(lgap_config** out);
LGAP_API lgap_status lgap_config_load(const char* path, lgap_config** out);
LGAP_API lgap_status lgap_config_from_json(const char* json, lgap_config** out);
/* "key=value"; the value is read as JSON when possible, else as a string. */
LGAP_API lgap_status lgap_config_set(lgap_config* config, const char* assignment);
LGAP_API lgap_status lgap_config_resolved_json(const lgap_config* config, char** out);
LGAP_API void lgap_config_free(lgap_config* config);

/* Image batches, values in [0,1], row-major (N, C, H, W). */
typedef struct lgap_images lgap_images;

LGAP_API lgap_status lgap_images_new(size_t n, size_t c, size_t h, size_t w, const double* data,
                                     const int64_t* labels, lgap_images** out);
/* format: auto, toy, tensor, images, cifar10, cifar100 */
LGAP_API lgap_status lgap_images_load(const char* source, const char* format, lgap_images** out);
LGAP_API lgap_status lgap_images_shape(const lgap_images* images, size_t* n, size_t* c, size_t* h, size_t* w);
/* Pointers stay valid until the handle is freed. *labels is NULL when unlabelled. */
LGAP_API lgap_status lgap_images_data(const lgap_images* images, const double** data);
LGAP_API lgap_status lgap_images_labels(const lgap_images* images, const int64_t** labels);
LGAP_API void lgap_images_free(lgap_images* images);

/* Purifier built from a config; class names come from `classes` when given. */
typedef struct lgap_purifier lgap_purifier;

LGAP_API lgap_status lgap_purifier_create(const lgap_config* config, const lgap_images* classes,
                                          lgap_purifier** out);
LGAP_API lgap_status lgap_purifier_run(const lgap_purifier* purifier, const lgap_images* input, uint64_t seed,
                                       lgap_images** out);
LGAP_API lgap_status lgap_purifier_describe(const lgap_purifier* purifier, char** out);
LGAP_API void lgap_purifier_free(lgap_purifier* purifier);

typedef struct lgap_classifier lgap_classifier;

LGAP_API lgap_status lgap_classifier_load(const char* path, lgap_classifier** out);
LGAP_API lgap_status lgap_classifier_num_classes(const lgap_classifier* classifier, size_t* out);
/* predictions must hold N entries. */
LGAP_API lgap_status lgap_classifier_predict(const lgap_classifier* classifier, const lgap_images* images,
                                             int64_t* predictions);
LGAP_API void lgap_classifier_free(lgap_classifier* classifier);

/* Evaluation reports */
typedef struct lgap_report lgap_report;

LGAP_API lgap_status lgap_report_load(const char* path, lgap_report** out);
/* format: "table" or "json" */
LGAP_API lgap_status lgap_report_render(const lgap_report* report, const char* format, char** out);
LGAP_API lgap_status lgap_report_natural_accuracy(const lgap_report* report, double* out);
LGAP_API lgap_status lgap_report_robust_count(const lgap_report* report, size_t* out);
LGAP_API lgap_status lgap_report_robust_accuracy(const lgap_report* report, size_t index, double* out);
LGAP_API void lgap_report_free(lgap_report* report);

/* Commands. On success *result (optional) receives a JSON object
   {"output_dir": ..., "summary": ..., "text": ...}. */
LGAP_API lgap_status lgap_cmd_purify(const lgap_config* config, const char* input, const char* output,
                                     char** result);
LGAP_API lgap_status lgap_cmd_build_dataset(const lgap_config* config, char** result);
LGAP_API lgap_status lgap_cmd_finetune(const lgap_config* config, char** result);
LGAP_API lgap_status lgap_cmd_attack(const lgap_config* config, char** result);
LGAP_API lgap_status lgap_cmd_evaluate(const lgap_config* config, char** result);
LGAP_API lgap_status lgap_cmd_train_toy(const lgap_config* config, char** result);
LGAP_API lgap_status lgap_cmd_fit_codec(const lgap_config* config, size_t latent_dim, char** result);

#ifdef __cplusplus
}
#endif

#endif
