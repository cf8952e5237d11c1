/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef EPIALIGN_H
#define EPIALIGN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of every fallible call.
typedef enum EaStatus {
  EA_STATUS_OK = 0,
  EA_STATUS_NULL_POINTER = 1,
  EA_STATUS_INVALID_ARGUMENT = 2,
  EA_STATUS_IO = 3,
  EA_STATUS_FORMAT = 4,
  // The value asked for does not exist, e.g. a correlation with zero variance.
  EA_STATUS_UNDEFINED = 5,
  EA_STATUS_PANIC = 6,
} EaStatus;

// Opaque dataset handle.
typedef struct EaDataset EaDataset;

// Opaque handle to a finished training run.
typedef struct EaTrainResult EaTrainResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ea_version(void);

// Message for the most recent failure on this thread; empty after a success.
// Valid until the next call into the library on the same thread.
const char *ea_last_error_message(void);

// Loads a dataset from its manifest file.
enum EaStatus ea_dataset_load(const char *manifest_path, struct EaDataset **out);

// Generates a synthetic dataset.
enum EaStatus ea_dataset_synthetic(size_t num_samples,
                                   size_t num_classes,
                                   size_t embedding_dim,
                                   uint32_t annotations_per_sample,
                                   double ambiguity,
                                   double noise_scale,
                                   uint64_t seed,
                                   struct EaDataset **out);

// Writes manifest, embeddings and annotations into `dir`.
enum EaStatus ea_dataset_write(const struct EaDataset *dataset, const char *dir);

void ea_dataset_free(struct EaDataset *dataset);

// Number of samples; 0 for a null handle.
size_t ea_dataset_len(const struct EaDataset *dataset);

size_t ea_dataset_num_classes(const struct EaDataset *dataset);

size_t ea_dataset_embedding_dim(const struct EaDataset *dataset);

// KL(p || q) in nats for two probability vectors of length `len`.
enum EaStatus ea_kl_divergence(const double *p, const double *q, size_t len, double *out);

// Shannon entropy in nats, or divided by ln(len) when `normalized`.
enum EaStatus ea_entropy(const double *p, size_t len, bool normalized, double *out);

// Pearson correlation; `EA_STATUS_UNDEFINED` when either input is constant.
enum EaStatus ea_pearson(const double *x, const double *y, size_t len, double *out);

// Two-sided paired t-test of `a` against `b`.
enum EaStatus ea_paired_t_test(const double *a,
                               const double *b,
                               size_t len,
                               double *out_t,
                               double *out_p);

// Trains one head. `config_json` is a flat JSON object of training
// options and may be null for defaults. The split is drawn from the
// config's `split_ratios` and `seed`.
enum EaStatus ea_train(const struct EaDataset *dataset,
                       const char *config_json,
                       struct EaTrainResult **out);

void ea_train_result_free(struct EaTrainResult *result);

// 1-based epoch whose parameters were kept; 0 for a null handle.
size_t ea_train_result_best_epoch(const struct EaTrainResult *result);

// Test-split mean KL, accuracy and entropy correlation. Any out-pointer may
// be null. `EA_STATUS_UNDEFINED` if the test split is empty, or if the
// correlation is undefined, in which case the other two are still written.
enum EaStatus ea_train_result_test_metrics(const struct EaTrainResult *result,
                                           double *out_mean_kl,
                                           double *out_accuracy,
                                           double *out_entropy_correlation);

// JSON report of the run (everything but the parameters). Free with
// `ea_string_free`.
enum EaStatus ea_train_result_to_json(const struct EaTrainResult *result, char **out);

void ea_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPIALIGN_H */
