#ifndef SCALEMIX_H
#define SCALEMIX_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum SmmStatus {
  SMM_STATUS_OK = 0,
  SMM_STATUS_NULL_POINTER = 1,
  SMM_STATUS_INVALID_ARGUMENT = 2,
  SMM_STATUS_IO = 3,
  SMM_STATUS_PARSE = 4,
  SMM_STATUS_DIMENSION_MISMATCH = 5,
  SMM_STATUS_NUMERIC = 6,
  /**
   * Training finished at the iteration cap. The handle is still valid.
   */
  SMM_STATUS_NOT_CONVERGED = 7,
  SMM_STATUS_BUFFER_TOO_SMALL = 8,
  SMM_STATUS_PANIC = 9,
} SmmStatus;

/**
 * A trained classifier. Create with `smm_classifier_train`,
 * `smm_classifier_load` or `smm_classifier_from_json`; release with
 * `smm_classifier_free`.
 */
typedef struct SmmClassifier SmmClassifier;

/**
 * Training settings passed by value.
 */
typedef struct SmmTrainOptions {
  double nu;
  size_t k_init;
  double alpha0;
  size_t max_iters;
  uint64_t seed;
} SmmTrainOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * successful one. Valid until the next call on the same thread.
 */
const char *smm_last_error_message(void);

/**
 * Defaults used by the command-line tool: ν = 5, one initial component,
 * α₀ = 0.001, 500 iterations, seed 0.
 */
struct SmmTrainOptions smm_train_options_default(void);

/**
 * Trains on `rows` row-major feature vectors of length `dim` with one
 * label per row. Returns `NotConverged` (with `*out` set) when some class
 * stopped at the iteration cap.
 *
 * # Safety
 * `features` must hold `rows * dim` values and `labels` `rows` values.
 */
enum SmmStatus smm_classifier_train(const double *features,
                                    const uint32_t *labels,
                                    size_t rows,
                                    size_t dim,
                                    struct SmmTrainOptions options,
                                    struct SmmClassifier **out);

/**
 * # Safety
 * `path` must be a nul-terminated string and `out` writable.
 */
enum SmmStatus smm_classifier_load(const char *path, struct SmmClassifier **out);

/**
 * # Safety
 * `json` must be a nul-terminated string and `out` writable.
 */
enum SmmStatus smm_classifier_from_json(const char *json, struct SmmClassifier **out);

/**
 * # Safety
 * `h` must come from this library and `path` be nul-terminated.
 */
enum SmmStatus smm_classifier_save(const struct SmmClassifier *h, const char *path);

/**
 * The model document; release it with `smm_string_free`.
 *
 * # Safety
 * `h` must come from this library and `out` be writable.
 */
enum SmmStatus smm_classifier_to_json(const struct SmmClassifier *h, char **out);

/**
 * # Safety
 * `h` must come from this library.
 */
size_t smm_classifier_dim(const struct SmmClassifier *h);

/**
 * # Safety
 * `h` must come from this library.
 */
size_t smm_classifier_num_classes(const struct SmmClassifier *h);

/**
 * Writes the class ids in model order (the order of the posterior
 * entries). `len` must be at least the number of classes.
 *
 * # Safety
 * `out` must have room for `len` values.
 */
enum SmmStatus smm_classifier_class_ids(const struct SmmClassifier *h, uint32_t *out, size_t len);

/**
 * Normalized class log-posteriors of one vector, in class-id order.
 *
 * # Safety
 * `x` must hold `dim` values and `out` have room for `len` values.
 */
enum SmmStatus smm_classifier_log_posterior(const struct SmmClassifier *h,
                                            const double *x,
                                            size_t dim,
                                            double *out,
                                            size_t len);

/**
 * Class id of the most probable class; ties go to the lowest id.
 *
 * # Safety
 * `x` must hold `dim` values and `label` be writable.
 */
enum SmmStatus smm_classifier_classify(const struct SmmClassifier *h,
                                       const double *x,
                                       size_t dim,
                                       uint32_t *label);

/**
 * Labels for `rows` row-major vectors of length `dim`.
 *
 * # Safety
 * `x` must hold `rows * dim` values and `labels` `rows` values.
 */
enum SmmStatus smm_classifier_classify_batch(const struct SmmClassifier *h,
                                             const double *x,
                                             size_t rows,
                                             size_t dim,
                                             uint32_t *labels);

/**
 * Releases a handle. Null is ignored.
 *
 * # Safety
 * `h` must come from this library and not be used afterwards.
 */
void smm_classifier_free(struct SmmClassifier *h);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void smm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCALEMIX_H */
