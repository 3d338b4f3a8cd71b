/* C interface to the structdiff diffusion library. */

#ifndef STRUCTDIFF_H
#define STRUCTDIFF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every API call.
 */
typedef enum SdStatus {
  SD_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SD_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  SD_STATUS_INVALID_UTF8 = 2,
  /**
   * A JSON config failed to parse.
   */
  SD_STATUS_BAD_JSON = 3,
  /**
   * A config parsed but described something invalid.
   */
  SD_STATUS_INVALID_CONFIG = 4,
  /**
   * A numeric failure: non-finite values or a degenerate covariance.
   */
  SD_STATUS_NUMERIC = 5,
  /**
   * Filesystem failure.
   */
  SD_STATUS_IO = 6,
  /**
   * A file existed but its contents were malformed.
   */
  SD_STATUS_BAD_DATA = 7,
  /**
   * An output buffer had the wrong length.
   */
  SD_STATUS_BUFFER_SIZE = 8,
  /**
   * An internal invariant failed; the message has details.
   */
  SD_STATUS_INTERNAL = 9,
} SdStatus;

/**
 * Opaque handle: a trained denoiser with its EMA weights, optimizer state,
 * and the noise schedule it was trained under.
 */
typedef struct SdModel SdModel;

/**
 * Four-metric evaluation report for a generated set against a real set.
 */
typedef struct SdPrdcReport {
  double precision;
  double recall;
  double density;
  double coverage;
  size_t k;
  size_t n_real;
  size_t n_gen;
} SdPrdcReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message for this thread, as a NUL-terminated string. Empty
 * until the first failure. The pointer stays valid until the next failing
 * call on the same thread.
 *
 * # Safety
 * The returned pointer must not be freed or written through.
 */
const char *sd_last_error_message(void);

/**
 * Trains a model from a JSON training config (dataset, schedule,
 * regularizer, optimization settings) and returns an owned handle through
 * `out_model`.
 *
 * # Safety
 * `config_json` must be a valid NUL-terminated string; `out_model` must be
 * valid for writes. The returned handle must be freed with
 * [`sd_model_free`].
 */
enum SdStatus sd_train(const char *config_json, struct SdModel **out_model);

/**
 * Releases a model handle. Null is tolerated.
 *
 * # Safety
 * `model` must be null or a pointer previously returned through an
 * `out_model` parameter, not yet freed.
 */
void sd_model_free(struct SdModel *model);

/**
 * Writes the model's checkpoint (weights, EMA shadows, optimizer moments)
 * to `path`.
 *
 * # Safety
 * `model` must be a live handle; `path` a valid NUL-terminated string.
 */
enum SdStatus sd_model_save(const struct SdModel *model, const char *path);

/**
 * Loads a checkpoint saved by [`sd_model_save`]. The training config must
 * be re-supplied (checkpoints store no hyperparameters) and its
 * architecture must match the stored tensors.
 *
 * # Safety
 * `config_json` and `checkpoint_path` must be valid NUL-terminated
 * strings; `out_model` must be valid for writes. The returned handle must
 * be freed with [`sd_model_free`].
 */
enum SdStatus sd_model_load(const char *config_json,
                            const char *checkpoint_path,
                            struct SdModel **out_model);

/**
 * Number of optimizer steps the model has taken.
 *
 * # Safety
 * `model` must be a live handle; `out_step` valid for writes.
 */
enum SdStatus sd_model_step(const struct SdModel *model, uint64_t *out_step);

/**
 * Draws samples by reverse diffusion into `out_points` (row-major n x 2;
 * `out_len` must equal exactly `n_samples * 2`). The sampler config is
 * JSON: `{"n_samples": ..., "sigma_mode": "posterior"|"beta", "seed": ...,
 * "use_ema": ...}`; all fields optional.
 *
 * # Safety
 * `model` must be a live handle, `sampler_json` a valid NUL-terminated
 * string, and `out_points` valid for `out_len` writes.
 */
enum SdStatus sd_sample(const struct SdModel *model,
                        const char *sampler_json,
                        double *out_points,
                        size_t out_len);

/**
 * Generates a synthetic dataset into `out_points` (row-major n x 2;
 * `out_len` must equal exactly `n_samples * 2`). The dataset config is
 * JSON: `{"dataset": "swiss_roll", "n_samples": ..., "noise_level": ...,
 * "seed": ...}`.
 *
 * # Safety
 * `dataset_json` must be a valid NUL-terminated string and `out_points`
 * valid for `out_len` writes.
 */
enum SdStatus sd_generate_dataset(const char *dataset_json, double *out_points, size_t out_len);

/**
 * Precision/recall/density/coverage of `generated` against `real`. Both
 * buffers are row-major n x 2 doubles.
 *
 * # Safety
 * `real` must be valid for `n_real * 2` reads, `generated` for
 * `n_gen * 2` reads, and `out_report` for one write.
 */
enum SdStatus sd_prdc(const double *real,
                      size_t n_real,
                      const double *generated,
                      size_t n_gen,
                      size_t k,
                      struct SdPrdcReport *out_report);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRUCTDIFF_H */
