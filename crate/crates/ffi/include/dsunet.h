#ifndef DSUNET_H
#define DSUNET_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum DsuStatus {
  DSU_STATUS_OK = 0,
  DSU_STATUS_NULL_POINTER = 1,
  DSU_STATUS_INVALID_ARGUMENT = 2,
  DSU_STATUS_IO = 3,
  DSU_STATUS_FORMAT = 4,
  DSU_STATUS_SHAPE = 5,
  DSU_STATUS_CONFIG = 6,
  DSU_STATUS_NON_FINITE = 7,
  DSU_STATUS_PANIC = 8,
} DsuStatus;

/*
 Trained network plus the frozen encoders it was built against.
 */
typedef struct DsuModel DsuModel;

/*
 Per-image scores. `f_defined` is 0 when the ground truth is empty; the F fields are then NaN.
 */
typedef struct DsuMetrics {
  double s;
  double f_adaptive;
  double f_mean;
  double e_adaptive;
  double e_mean;
  double mae;
  int32_t f_defined;
} DsuMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *dsu_version(void);

/*
 Message of the last failed call on this thread, or NULL. Valid until the next failing call.
 */
const char *dsu_last_error_message(void);

/*
 Fresh model from `key = value` config text (NULL for defaults), initialised from `seed`.

 # Safety
 `config_text` must be NULL or a NUL-terminated string; `out` must be writable.
 */
enum DsuStatus dsu_model_new(const char *config_text, uint64_t seed, struct DsuModel **out);

/*
 Loads a checkpoint file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DsuStatus dsu_model_load(const char *path, struct DsuModel **out);

/*
 Writes the model as a checkpoint file.

 # Safety
 `model` must come from this library; `path` must be a NUL-terminated string.
 */
enum DsuStatus dsu_model_save(const struct DsuModel *model, const char *path);

/*
 Releases a model. NULL is ignored.

 # Safety
 `model` must be NULL or a handle not yet freed.
 */
void dsu_model_free(struct DsuModel *model);

/*
 Side lengths of the square main and auxiliary views.

 # Safety
 All pointers must be valid.
 */
enum DsuStatus dsu_model_input_sizes(const struct DsuModel *model,
                                     size_t *main_size,
                                     size_t *aux_size);

/*
 Total and trainable element counts of the network and both encoders.

 # Safety
 All pointers must be valid.
 */
enum DsuStatus dsu_model_param_counts(const struct DsuModel *model,
                                      uint64_t *total,
                                      uint64_t *trainable);

/*
 Foreground probability `sigmoid(D3)` for one scene.

 `main` is planar RGB `3×M×M`, `aux` planar RGB `3×A×A`, values in `[0, 1]`;
 `out` receives `M×M` probabilities. Lengths are element counts.

 # Safety
 Buffers must hold at least the stated number of elements.
 */
enum DsuStatus dsu_model_predict(const struct DsuModel *model,
                                 const float *main,
                                 size_t main_len,
                                 const float *aux,
                                 size_t aux_len,
                                 float *out,
                                 size_t out_len);

/*
 All per-image metrics of a `width×height` prediction against a binary ground truth.

 # Safety
 `pred` and `gt` must hold `width·height` values; `out` must be writable.
 */
enum DsuStatus dsu_metrics_compute(const double *pred,
                                   const double *gt,
                                   size_t width,
                                   size_t height,
                                   double beta2,
                                   struct DsuMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSUNET_H */
