#ifndef PUFM_H
#define PUFM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum PufmStatus {
  PUFM_STATUS_OK = 0,
  PUFM_STATUS_INVALID_ARGUMENT = 1,
  PUFM_STATUS_NUMERIC = 2,
  PUFM_STATUS_IO = 3,
  PUFM_STATUS_PARSE = 4,
  PUFM_STATUS_UNSUPPORTED = 5,
  PUFM_STATUS_NULL_POINTER = 6,
  PUFM_STATUS_PANIC = 7,
} PufmStatus;

/**
 * A point cloud.
 */
typedef struct PufmCloud PufmCloud;

/**
 * A trained velocity model with its optional loss profile.
 */
typedef struct PufmModel PufmModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a success.
 * The string stays valid until the next call into this library on the same
 * thread.
 */
const char *pufm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pufm_version(void);

/**
 * Creates a cloud from `n` interleaved `x y z` triples.
 *
 * # Safety
 * `xyz` must point to `3 * n` doubles; `out` must be writable.
 */
enum PufmStatus pufm_cloud_new(const double *xyz, size_t n, struct PufmCloud **out_cloud);

/**
 * Destroys a cloud; NULL is ignored.
 *
 * # Safety
 * `cloud` must come from this library and not be used afterwards.
 */
void pufm_cloud_free(struct PufmCloud *cloud);

/**
 * # Safety
 * `cloud` must be a live handle; `out_len` must be writable.
 */
enum PufmStatus pufm_cloud_len(const struct PufmCloud *cloud, size_t *out_len);

/**
 * Copies the `3 * len` coordinates into `xyz_out`, which holds `capacity` doubles.
 *
 * # Safety
 * `cloud` must be a live handle; `xyz_out` must hold `capacity` doubles.
 */
enum PufmStatus pufm_cloud_copy_points(const struct PufmCloud *cloud,
                                       double *xyz_out,
                                       size_t capacity);

/**
 * Reads `.ply` (ASCII) or XYZ text.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_cloud` must be writable.
 */
enum PufmStatus pufm_cloud_read(const char *path_in, struct PufmCloud **out_cloud);

/**
 * Writes `.ply` for that extension and XYZ text otherwise.
 *
 * # Safety
 * `cloud` must be a live handle; `path` must be a NUL-terminated string.
 */
enum PufmStatus pufm_cloud_write(const struct PufmCloud *cloud, const char *path_out);

/**
 * Symmetric mean squared nearest-neighbour distance.
 *
 * # Safety
 * `a` and `b` must be live handles; `out_value` must be writable.
 */
enum PufmStatus pufm_chamfer(const struct PufmCloud *a,
                             const struct PufmCloud *b,
                             double *out_value);

/**
 * Symmetric worst-case nearest-neighbour distance.
 *
 * # Safety
 * `a` and `b` must be live handles; `out_value` must be writable.
 */
enum PufmStatus pufm_hausdorff(const struct PufmCloud *a,
                               const struct PufmCloud *b,
                               double *out_value);

/**
 * Jensen-Shannon divergence of voxel histograms at `resolution` cells per axis.
 *
 * # Safety
 * `a` and `b` must be live handles; `out_value` must be writable.
 */
enum PufmStatus pufm_jsd(const struct PufmCloud *a,
                         const struct PufmCloud *b,
                         size_t resolution,
                         double *out_value);

/**
 * Approximate minimum-cost assignment of `source` onto `target` under squared
 * distance. `phi_out[i]` receives the target index of source point `i`;
 * `capacity` is the length of `phi_out`. `out_cost` may be NULL.
 *
 * # Safety
 * Handles must be live; `phi_out` must hold `capacity` entries.
 */
enum PufmStatus pufm_auction_match(const struct PufmCloud *source,
                                   const struct PufmCloud *target,
                                   double epsilon_final,
                                   size_t *phi_out,
                                   size_t capacity,
                                   double *out_cost);

/**
 * Loads a checkpoint written by the `pufm` tool.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_model` must be writable.
 */
enum PufmStatus pufm_model_load(const char *path_in, struct PufmModel **out_model);

/**
 * Destroys a model; NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void pufm_model_free(struct PufmModel *model);

/**
 * Nonzero when the model carries a loss profile, so `use_ats` is available.
 *
 * # Safety
 * `model` must be a live handle; `out_flag` must be writable.
 */
enum PufmStatus pufm_model_has_profile(const struct PufmModel *model, int *out_flag);

/**
 * Upsamples `sparse` by `rate` with `steps` Euler steps, using the default
 * configuration otherwise. `use_ats` and `postprocess` are booleans.
 *
 * # Safety
 * Handles must be live; `out_cloud` must be writable.
 */
enum PufmStatus pufm_upsample(const struct PufmModel *model,
                              const struct PufmCloud *sparse,
                              size_t rate,
                              size_t steps,
                              int use_ats,
                              int postprocess,
                              struct PufmCloud **out_cloud);

/**
 * Adaptive time schedule from `count` losses on a uniform grid over [0, 1].
 * Writes `steps + 1` times into `times_out`, which holds `capacity` doubles.
 *
 * # Safety
 * `losses` must hold `count` doubles and `times_out` `capacity` doubles.
 */
enum PufmStatus pufm_schedule_from_losses(const double *losses,
                                          size_t count,
                                          size_t steps,
                                          double beta,
                                          double psi,
                                          double *times_out,
                                          size_t capacity);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* PUFM_H */
