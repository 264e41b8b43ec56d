#ifndef KPAT_KPAT_H
#define KPAT_KPAT_H

/* C interface to the kpat library. Every call returns a kpat_status; on
 * failure kpat_last_error() describes it (thread-local, valid until the next
 * failing call on the same thread). Strings returned through char** are
 * owned by the caller and released with kpat_string_free. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KPAT_API __declspec(dllexport)
#else
#define KPAT_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  KPAT_OK = 0,
  KPAT_ERR_INTERNAL = 1,
  KPAT_ERR_VALIDATION = 2,
  KPAT_ERR_DIVERGENCE = 3,
  KPAT_ERR_IO = 4
} kpat_status;

typedef struct kpat_pattern_set kpat_pattern_set;
typedef struct kpat_network kpat_network;
typedef struct kpat_fkw kpat_fkw;
typedef struct kpat_feature kpat_feature;
typedef struct kpat_manifest kpat_manifest;

typedef struct {
  size_t in_channels;
  size_t out_channels;
  size_t kernel_h;
  size_t kernel_w;
  size_t stride;
  size_t input_h;
  size_t input_w;
} kpat_layer_shape;

KPAT_API const char* kpat_last_error(void);
KPAT_API const char* kpat_version(void);
KPAT_API void kpat_string_free(char* s);

/* Pattern sets */
KPAT_API kpat_status kpat_pattern_set_all(kpat_pattern_set** out);
KPAT_API kpat_status kpat_pattern_set_from_network(const kpat_network* net, size_t k, kpat_pattern_set** out);
KPAT_API kpat_status kpat_pattern_set_from_json(const char* json, kpat_pattern_set** out);
KPAT_API kpat_status kpat_pattern_set_to_json(const kpat_pattern_set* set, char** out);
KPAT_API size_t kpat_pattern_set_size(const kpat_pattern_set* set);
KPAT_API void kpat_pattern_set_free(kpat_pattern_set* set);

/* Networks on the two-blob toy task */
KPAT_API kpat_status kpat_network_toy(uint64_t seed, kpat_network** out);
/* Dense training; accuracy (may be NULL) is measured on a held-out set. */
KPAT_API kpat_status kpat_network_train_toy(kpat_network* net, uint64_t seed, size_t epochs, double learning_rate,
                                            double* accuracy);
KPAT_API kpat_status kpat_network_accuracy(const kpat_network* net, uint64_t seed, double* accuracy);
KPAT_API kpat_status kpat_network_load(const char* path, kpat_network** out);
KPAT_API kpat_status kpat_network_save(const kpat_network* net, const char* path);
KPAT_API size_t kpat_network_conv_count(const kpat_network* net);
KPAT_API kpat_status kpat_network_layer_shape(const kpat_network* net, size_t layer, kpat_layer_shape* out);
/* A test image of the toy task as a feature map. */
KPAT_API kpat_status kpat_network_sample_input(const kpat_network* net, uint64_t seed, kpat_feature** out);
KPAT_API void kpat_network_free(kpat_network* net);

typedef struct {
  double connectivity_rate;
  double first_layer_rate;
  size_t admm_iterations;
  size_t epochs_per_iteration;
  size_t finetune_epochs;
  size_t batch_size;
  double learning_rate;
  double rho;
  uint64_t seed;
  int freeze_patterns;
} kpat_prune_options;

KPAT_API void kpat_prune_options_default(kpat_prune_options* opt);
/* ADMM pruning on the toy training set. assignments_json and trace_csv may be NULL. */
KPAT_API kpat_status kpat_prune(const kpat_network* net, const kpat_pattern_set* set, const kpat_prune_options* opt,
                                kpat_network** pruned, double* accuracy, char** assignments_json, char** trace_csv);
/* Returns KPAT_ERR_VALIDATION listing every violation when the network is
 * not feasible for the set and rates. */
KPAT_API kpat_status kpat_network_check_feasible(const kpat_network* net, const kpat_pattern_set* set,
                                                 double connectivity_rate, double first_layer_rate);

/* Reorder and FKW */
KPAT_API kpat_status kpat_reorder_layer(const kpat_network* net, size_t layer, const kpat_pattern_set* set,
                                        char** sparse_json);
KPAT_API kpat_status kpat_fkw_from_sparse_json(const char* sparse_json, kpat_fkw** out);
KPAT_API kpat_status kpat_fkw_from_network(const kpat_network* net, size_t layer, const kpat_pattern_set* set,
                                           kpat_fkw** out);
KPAT_API kpat_status kpat_fkw_load(const char* path, kpat_fkw** out);
KPAT_API kpat_status kpat_fkw_save(const kpat_fkw* model, const char* path);
KPAT_API kpat_status kpat_fkw_to_json(const kpat_fkw* model, char** out);
KPAT_API kpat_status kpat_fkw_to_sparse_json(const kpat_fkw* model, char** out);
/* Dense weights (original channel order) as a PTK0 weight file. */
KPAT_API kpat_status kpat_fkw_save_dense(const kpat_fkw* model, const char* path);
KPAT_API kpat_status kpat_fkw_shape(const kpat_fkw* model, kpat_layer_shape* out);
KPAT_API size_t kpat_fkw_kernel_count(const kpat_fkw* model);
KPAT_API kpat_status kpat_fkw_pattern_ids(const kpat_fkw* model, char** ids_json);
KPAT_API kpat_status kpat_fkw_structure_bytes(const kpat_fkw* model, size_t* fkw_bytes, size_t* csr_bytes);
KPAT_API void kpat_fkw_free(kpat_fkw* model);

/* Feature maps */
KPAT_API kpat_status kpat_feature_random(size_t channels, size_t height, size_t width, uint64_t seed,
                                         kpat_feature** out);
KPAT_API kpat_status kpat_feature_load(const char* path, kpat_feature** out);
KPAT_API kpat_status kpat_feature_save(const kpat_feature* map, const char* path);
KPAT_API void kpat_feature_dims(const kpat_feature* map, size_t* channels, size_t* height, size_t* width);
KPAT_API kpat_status kpat_feature_max_rel_error(const kpat_feature* a, const kpat_feature* b, double* out);
KPAT_API void kpat_feature_free(kpat_feature* map);

/* Execution. config_json NULL means the default configuration. stats_json
 * may be NULL. */
KPAT_API kpat_status kpat_run(const kpat_fkw* model, const kpat_feature* input, const char* config_json,
                              size_t threads, int relu, kpat_feature** out, char** stats_json);
/* Dense reference on the decoded weights. */
KPAT_API kpat_status kpat_run_dense(const kpat_fkw* model, const kpat_feature* input, int relu, kpat_feature** out);
KPAT_API kpat_status kpat_default_config(const kpat_fkw* model, char** config_json);
KPAT_API kpat_status kpat_tune(const kpat_fkw* model, const kpat_feature* input, size_t budget, uint64_t seed,
                               char** best_config_json, char** history_csv);

/* Layerwise manifest. On KPAT_ERR_VALIDATION violations_json (if non-NULL)
 * receives [{"path":...,"message":...}]. */
KPAT_API kpat_status kpat_manifest_parse(const char* text, kpat_manifest** out, char** violations_json);
KPAT_API kpat_status kpat_manifest_new(const kpat_pattern_set* set, kpat_manifest** out);
KPAT_API kpat_status kpat_manifest_add_layer(kpat_manifest* m, const char* name, const char* fkw_file,
                                             const kpat_fkw* model, const char* config_json, int relu);
KPAT_API kpat_status kpat_manifest_emit(const kpat_manifest* m, char** out);
KPAT_API size_t kpat_manifest_layer_count(const kpat_manifest* m);
KPAT_API kpat_status kpat_manifest_layer(const kpat_manifest* m, size_t i, char** name, char** fkw_file,
                                         char** config_json);
KPAT_API kpat_status kpat_manifest_set_config(kpat_manifest* m, size_t i, const char* config_json);
/* Runs every layer in order; fkw files resolve against base_dir. */
KPAT_API kpat_status kpat_manifest_run(const kpat_manifest* m, const char* base_dir, const kpat_feature* input,
                                       size_t threads, kpat_feature** out, char** stats_json);
KPAT_API kpat_status kpat_manifest_run_dense(const kpat_manifest* m, const char* base_dir,
                                             const kpat_feature* input, kpat_feature** out);
KPAT_API void kpat_manifest_free(kpat_manifest* m);

/* Benchmark. options_json keys: in_channels, out_channels, input_h, input_w,
 * stride, k, rate, seed, repeats, tune_budget, threads, pattern_counts. */
KPAT_API kpat_status kpat_bench(const char* options_json, char** report_json, char** report_markdown);

#ifdef __cplusplus
}
#endif

#endif
