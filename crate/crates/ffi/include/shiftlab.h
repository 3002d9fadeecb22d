#ifndef SHIFTLAB_H
#define SHIFTLAB_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  SHIFTLAB_STATUS_OK = 0,
  SHIFTLAB_STATUS_NULL_POINTER = 1,
  SHIFTLAB_STATUS_INVALID_UTF8 = 2,
  SHIFTLAB_STATUS_INVALID_ARGUMENT = 3,
  SHIFTLAB_STATUS_IO = 4,
  SHIFTLAB_STATUS_CHECKPOINT = 5,
  SHIFTLAB_STATUS_DATA = 6,
  SHIFTLAB_STATUS_COMPUTATION = 7,
  SHIFTLAB_STATUS_BUFFER_TOO_SMALL = 8,
  SHIFTLAB_STATUS_PANIC = 9,
} ShiftlabStatus;

typedef enum {
  SHIFTLAB_MODEL_KIND_GDAN = 0,
  SHIFTLAB_MODEL_KIND_CGDAN = 1,
} ShiftlabModelKind;

/**
 * Opaque fitted model.
 */
typedef struct ShiftlabModel ShiftlabModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *shiftlab_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *shiftlab_version(void);

/**
 * Loads and verifies a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
ShiftlabStatus shiftlab_model_load(const char *path, ShiftlabModel **out);

/**
 * Runs a full training pipeline from a run config file. The fitted
 * model is returned as well as written to the config's output directory.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string and `out` a valid pointer.
 */
ShiftlabStatus shiftlab_train(const char *config_path, ShiftlabModel **out);

/**
 * Writes the model as a checkpoint file.
 *
 * # Safety
 * `model` must come from this library and `path` be NUL-terminated.
 */
ShiftlabStatus shiftlab_model_save(const ShiftlabModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void shiftlab_model_free(ShiftlabModel *model);

/**
 * # Safety
 * `model` must come from this library; `out` must be valid.
 */
ShiftlabStatus shiftlab_model_kind(const ShiftlabModel *model, ShiftlabModelKind *out);

/**
 * Number of feature columns generated rows carry.
 *
 * # Safety
 * `model` must come from this library; `out` must be valid.
 */
ShiftlabStatus shiftlab_model_feature_count(const ShiftlabModel *model, size_t *out);

/**
 * Hex SHA-256 of the model body, as recorded in metric reports.
 *
 * # Safety
 * `buf` must hold `len` bytes; `needed` may be null.
 */
ShiftlabStatus shiftlab_model_hash(const ShiftlabModel *model,
                                   char *buf,
                                   size_t len,
                                   size_t *needed);

/**
 * Samples `n` labeled rows for a fitted domain. `x_out` receives
 * `n * feature_count` values row-major, `y_out` the `n` labels.
 *
 * # Safety
 * `domain` must be NUL-terminated; output buffers must have the sizes
 * above.
 */
ShiftlabStatus shiftlab_model_generate(const ShiftlabModel *model,
                                       const char *domain,
                                       size_t n,
                                       uint64_t seed,
                                       double *x_out,
                                       double *y_out);

/**
 * Squared MMD (V-statistic) between two row-major samples with the
 * default median-heuristic RBF mixture fitted on `p`.
 *
 * # Safety
 * `p` holds `np * dim` values and `q` holds `nq * dim` values.
 */
ShiftlabStatus shiftlab_mmd2(const double *p,
                             size_t np,
                             const double *q,
                             size_t nq,
                             size_t dim,
                             double *out);

/**
 * Structure discovery on labeled rows. `x` is `n * dim` row-major, `y`
 * holds labels and `domains` optional integer domain codes (null for a
 * single domain). The graph is written as JSON into `buf`.
 *
 * # Safety
 * Buffers must have the sizes above; `needed` may be null.
 */
ShiftlabStatus shiftlab_discover_json(const double *x,
                                      const double *y,
                                      const uint32_t *domains,
                                      size_t n,
                                      size_t dim,
                                      double alpha,
                                      char *buf,
                                      size_t len,
                                      size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SHIFTLAB_H */
