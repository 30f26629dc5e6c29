#ifndef EPSR_H
#define EPSR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EpsrStatus {
  EPSR_STATUS_OK = 0,
  EPSR_STATUS_NULL_POINTER = 1,
  EPSR_STATUS_INVALID_ARGUMENT = 2,
  EPSR_STATUS_CONFIG = 3,
  EPSR_STATUS_SHAPE = 4,
  EPSR_STATUS_IO = 5,
  EPSR_STATUS_CHECKPOINT = 6,
  EPSR_STATUS_SCORING = 7,
  EPSR_STATUS_STATISTICS = 8,
  EPSR_STATUS_RESOURCE = 9,
  EPSR_STATUS_INTERNAL = 10,
  EPSR_STATUS_PANIC = 11,
} EpsrStatus;

/**
 * Opaque model handle.
 */
typedef struct EpsrModel EpsrModel;

typedef struct EpsrBudget {
  uint64_t params;
  double gmacs;
  uint64_t param_limit;
  double gmac_limit;
  bool passed;
} EpsrBudget;

typedef struct EpsrClassStats {
  double mean;
  double median;
  double std;
} EpsrClassStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *epsr_last_error_message(void);

/**
 * Toolkit version as a static NUL-terminated string.
 */
const char *epsr_version(void);

/**
 * Builds a registered architecture (`safmn_l`, `tiny_esrgan`, `efdn`,
 * `efdn_fused`, `realesrgan_baseline`) with seeded random weights.
 *
 * # Safety
 * `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EpsrStatus epsr_model_build(const char *name, uint64_t seed, struct EpsrModel **out);

/**
 * Loads a checkpoint written by the toolkit.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum EpsrStatus epsr_model_load(const char *path, struct EpsrModel **out);

/**
 * Saves the model as a checkpoint.
 *
 * # Safety
 * `model` must come from this library; `path` must be NUL-terminated.
 */
enum EpsrStatus epsr_model_save(const struct EpsrModel *model, const char *path);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void epsr_model_free(struct EpsrModel *model);

/**
 * Parameter count and GMACs at 3×540×960 against the challenge limits.
 *
 * # Safety
 * `model` must come from this library and `out` must be valid.
 */
enum EpsrStatus epsr_model_audit(const struct EpsrModel *model, struct EpsrBudget *out);

/**
 * Upscaling factor of the model.
 *
 * # Safety
 * `model` must come from this library and `out` must be valid.
 */
enum EpsrStatus epsr_model_scale(const struct EpsrModel *model, size_t *out);

/**
 * Super-resolves one image. `output` must hold
 * `(scale*height) * (scale*width) * 3` values. A `tile` of 0 processes
 * the whole image at once.
 *
 * # Safety
 * `input` must point to `height * width * 3` floats and `output` to
 * `output_len` writable floats.
 */
enum EpsrStatus epsr_model_infer(const struct EpsrModel *model,
                                 const float *input,
                                 size_t height,
                                 size_t width,
                                 size_t tile,
                                 size_t overlap,
                                 float *output,
                                 size_t output_len);

/**
 * Challenge Score of `(PI, CLIPIQA, MANIQA)` against a baseline triple.
 *
 * # Safety
 * `metrics` and `baseline` must each point to three doubles; `out` must
 * be valid.
 */
enum EpsrStatus epsr_aggregate_score(const double *metrics, const double *baseline, double *out);

/**
 * Mean, median and sample standard deviation of `len >= 2` values.
 *
 * # Safety
 * `values` must point to `len` doubles and `out` must be valid.
 */
enum EpsrStatus epsr_class_stats(const double *values, size_t len, struct EpsrClassStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EPSR_H */
