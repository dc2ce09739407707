#ifndef AVLOC_H
#define AVLOC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AvlocStatus {
  AVLOC_STATUS_OK = 0,
  AVLOC_STATUS_NULL_POINTER = 1,
  AVLOC_STATUS_INVALID_ARGUMENT = 2,
  AVLOC_STATUS_SHAPE = 3,
  AVLOC_STATUS_IO = 4,
  AVLOC_STATUS_FORMAT = 5,
  AVLOC_STATUS_NUMERIC = 6,
  // The gradient check ran and found a mismatch.
  AVLOC_STATUS_CHECK_FAILED = 7,
  AVLOC_STATUS_PANIC = 8,
} AvlocStatus;

// A loaded checkpoint with its encoder and log-mel front end.
typedef struct AvlocModel AvlocModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *avloc_last_error(void);

// Library version as a static nul-terminated string.
const char *avloc_version(void);

// Loads a checkpoint directory written by `avloc train`.
//
// # Safety
// `checkpoint_dir` must be a nul-terminated UTF-8 path and `out` a valid
// pointer. On success `*out` owns a model to be released with
// `avloc_model_free()`; on failure it is set to null.
enum AvlocStatus avloc_model_load(const char *checkpoint_dir, struct AvlocModel **out);

// Releases a model; null is ignored.
//
// # Safety
// `model` must come from `avloc_model_load()` and not be used afterwards.
void avloc_model_free(struct AvlocModel *model);

// Expected image height, width and channel count, and the patch grid.
//
// # Safety
// All pointers must be valid.
enum AvlocStatus avloc_model_shape(const struct AvlocModel *model,
                                   size_t *height,
                                   size_t *width,
                                   size_t *channels,
                                   size_t *grid_rows,
                                   size_t *grid_cols);

// Threshold the model was trained with.
//
// # Safety
// `model` and `out` must be valid.
enum AvlocStatus avloc_model_delta_v(const struct AvlocModel *model, double *out);

// Normalized, upsampled heatmap (`height × width`, row-major, values in
// `[0, 1]`) for an image in `[H, W, C]` layout and a mono waveform.
// `*degenerate` is set to 1 when the response map was constant.
//
// # Safety
// `image` holds `image_len` doubles, `audio` holds `audio_len` doubles and
// `heatmap` has room for `heatmap_len` doubles. `degenerate` may be null.
enum AvlocStatus avloc_localize(const struct AvlocModel *model,
                                const double *image,
                                size_t image_len,
                                const double *audio,
                                size_t audio_len,
                                double sample_rate,
                                double *heatmap,
                                size_t heatmap_len,
                                int32_t *degenerate);

// cIoU of a `rows × cols` prediction against the consensus map of
// `n_boxes` boxes given as `(x0, y0, x1, y1)` quadruples (half-open).
//
// # Safety
// `pred` holds `rows * cols` doubles and `boxes` holds `4 * n_boxes` values.
enum AvlocStatus avloc_ciou(const double *pred,
                            size_t rows,
                            size_t cols,
                            const size_t *boxes,
                            size_t n_boxes,
                            size_t consensus,
                            double tau_pix,
                            double *out);

// Runs the gradient self-check on `seeds` seeds starting at `seed`.
// Returns `CheckFailed` when any component exceeds the
// tolerance; `*max_rel_error` receives the worst error either way.
//
// # Safety
// `max_rel_error` may be null.
enum AvlocStatus avloc_gradcheck(uint64_t seed, size_t seeds, double *max_rel_error);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AVLOC_H */
