#ifndef STEMIL_H
#define STEMIL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum StemilStatus {
  STEMIL_STATUS_OK = 0,
  STEMIL_STATUS_NULL_POINTER = 1,
  STEMIL_STATUS_INVALID_ARGUMENT = 2,
  STEMIL_STATUS_PARSE = 3,
  STEMIL_STATUS_IO = 4,
  STEMIL_STATUS_DIMENSION = 5,
  STEMIL_STATUS_CONFIG = 6,
  STEMIL_STATUS_DIVERGED = 7,
  STEMIL_STATUS_CHECKPOINT = 8,
  STEMIL_STATUS_NON_FINITE = 9,
  STEMIL_STATUS_GRADCHECK_FAILED = 10,
  STEMIL_STATUS_PANIC = 11,
} StemilStatus;

/**
 * Loaded bag dataset.
 */
typedef struct StemilDataset StemilDataset;

/**
 * Trained model, savable as a checkpoint.
 */
typedef struct StemilModel StemilModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the next call.
 */
const char *stemil_last_error_message(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum StemilStatus stemil_dataset_load_csv(const char *path, struct StemilDataset **out);

/**
 * Planted-box synthetic data with bag sizes 3 to 8 and half the bags positive.
 *
 * # Safety
 * `out` must be writable.
 */
enum StemilStatus stemil_dataset_synth(size_t bags,
                                       size_t features,
                                       uint64_t seed,
                                       struct StemilDataset **out);

/**
 * # Safety
 * `dataset` must come from this library; `out` must be writable.
 */
enum StemilStatus stemil_dataset_num_bags(const struct StemilDataset *dataset, size_t *out);

/**
 * # Safety
 * `dataset` must come from this library; `out` must be writable.
 */
enum StemilStatus stemil_dataset_feature_count(const struct StemilDataset *dataset, size_t *out);

/**
 * # Safety
 * `dataset` must be null or an unfreed handle from this library.
 */
void stemil_dataset_free(struct StemilDataset *dataset);

/**
 * Train on the whole dataset. `config_json` may be null for the defaults.
 *
 * # Safety
 * `dataset` must come from this library; `config_json` null or NUL-terminated; `out` writable.
 */
enum StemilStatus stemil_train(const struct StemilDataset *dataset,
                               const char *config_json,
                               struct StemilModel **out);

/**
 * # Safety
 * `model` must come from this library; `path` NUL-terminated.
 */
enum StemilStatus stemil_model_save(const struct StemilModel *model, const char *path);

/**
 * # Safety
 * `path` NUL-terminated; `out` writable.
 */
enum StemilStatus stemil_model_load(const char *path, struct StemilModel **out);

/**
 * # Safety
 * `model` must come from this library; `out` writable.
 */
enum StemilStatus stemil_model_feature_count(const struct StemilModel *model, size_t *out);

/**
 * Positive-class probability of one bag given as `n_instances x n_features`
 * row-major raw (unstandardized) values.
 *
 * # Safety
 * `instances` must point to `n_instances * n_features` doubles; `out_probability` writable.
 */
enum StemilStatus stemil_model_predict_bag(const struct StemilModel *model,
                                           const double *instances,
                                           size_t n_instances,
                                           size_t n_features,
                                           double *out_probability);

/**
 * Fill `out_probabilities[i]` for every bag `i` in dataset order; `len` must equal the bag count.
 *
 * # Safety
 * Handles must come from this library; `out_probabilities` must hold `len` doubles.
 */
enum StemilStatus stemil_model_predict_dataset(const struct StemilModel *model,
                                               const struct StemilDataset *dataset,
                                               double *out_probabilities,
                                               size_t len);

/**
 * # Safety
 * `model` must be null or an unfreed handle from this library.
 */
void stemil_model_free(struct StemilModel *model);

/**
 * Cross-validate and return the metrics report as JSON; free it with [`stemil_string_free`].
 *
 * # Safety
 * `dataset` must come from this library; `config_json` null or NUL-terminated; `out_json` writable.
 */
enum StemilStatus stemil_cross_validate(const struct StemilDataset *dataset,
                                        const char *config_json,
                                        char **out_json);

/**
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void stemil_string_free(char *s);

/**
 * Finite-difference gradient check on a small random model. Writes the largest
 * relative error and returns `STEMIL_STATUS_GRADCHECK_FAILED` above `tolerance`.
 *
 * # Safety
 * `out_max_rel_error` must be writable.
 */
enum StemilStatus stemil_gradcheck(uint64_t seed, double tolerance, double *out_max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STEMIL_H */
