/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#ifndef FREA_H
#define FREA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result codes.
 */
typedef enum FreaStatus {
  FREA_STATUS_OK = 0,
  FREA_STATUS_NULL_POINTER = 1,
  FREA_STATUS_INVALID_ARGUMENT = 2,
  FREA_STATUS_SHAPE = 3,
  FREA_STATUS_FORMAT = 4,
  FREA_STATUS_IO = 5,
  FREA_STATUS_CONFIG = 6,
  FREA_STATUS_EMPTY_MASK = 7,
  FREA_STATUS_NON_FINITE = 8,
  FREA_STATUS_PANIC = 9,
} FreaStatus;

/*
 Opaque model handle.
 */
typedef struct FreaModel FreaModel;

/*
 Per-image quality metrics in intensity units.
 */
typedef struct FreaMetrics {
  double mae;
  double psnr;
  double ssim;
} FreaMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL after a success.
 The pointer stays valid until the next call into this library on the
 same thread.
 */
const char *frea_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *frea_version(void);

/*
 Loads a checkpoint file into a new handle, ready for inference.

 # Safety
 `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum FreaStatus frea_model_load(const char *path, struct FreaModel **out);

/*
 Decodes an in-memory checkpoint into a new handle.

 # Safety
 `data` must point to `len` readable bytes and `out` be writable.
 */
enum FreaStatus frea_model_from_bytes(const uint8_t *data, size_t len, struct FreaModel **out);

/*
 Builds an untrained 64×64 model with the narrow layer widths.

 # Safety
 `out` must be a writable pointer.
 */
enum FreaStatus frea_model_new_desk(uint64_t seed, struct FreaModel **out);

/*
 Writes the model to a checkpoint file.

 # Safety
 `model` must be a live handle and `path` a NUL-terminated string.
 */
enum FreaStatus frea_model_save(const struct FreaModel *model, const char *path);

/*
 Releases a handle. NULL is ignored.

 # Safety
 `model` must come from this library and not be used afterwards.
 */
void frea_model_free(struct FreaModel *model);

/*
 Side length of the square images the model takes, or 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t frea_model_input_size(const struct FreaModel *model);

/*
 Number of trainable scalars, or 0 for NULL.

 # Safety
 `model` must be NULL or a live handle.
 */
size_t frea_model_param_count(const struct FreaModel *model);

/*
 Synthesizes a PET image from an MR image of `size × size` pixels with
 intensities in `[0, q]`. The result is written to `out` in the same units.

 # Safety
 `mr` and `out` must each hold `size * size` doubles; `model` must be live.
 */
enum FreaStatus frea_model_predict(struct FreaModel *model,
                                   const double *mr,
                                   size_t size,
                                   double q,
                                   double *out);

/*
 Splits an image into its Gaussian low band and the residual high band.

 # Safety
 `image`, `low` and `high` must each hold `height * width` doubles.
 */
enum FreaStatus frea_freq_split(const double *image,
                                size_t height,
                                size_t width,
                                double sigma,
                                size_t kernel_size,
                                double *low,
                                double *high);

/*
 MAE over the body mask of `real`, PSNR and SSIM between two images.

 # Safety
 `real` and `syn` must each hold `height * width` doubles; `out` must be writable.
 */
enum FreaStatus frea_metrics(const double *real,
                             const double *syn,
                             size_t height,
                             size_t width,
                             double mask_threshold,
                             struct FreaMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FREA_H */
