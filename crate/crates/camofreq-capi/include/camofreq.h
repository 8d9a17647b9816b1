/* C interface to the camofreq frequency-domain segmentation toolkit. */

#pragma once

/* Generated from the Rust sources by cbindgen via build.rs; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of a camofreq call. Zero is success; anything else is a failure
// whose message can be fetched with `camofreq_last_error`.
typedef enum CamofreqStatus {
  // The call succeeded.
  CAMOFREQ_STATUS_OK = 0,
  // A pointer was NULL, a buffer too small, or a string not UTF-8.
  CAMOFREQ_STATUS_ARGUMENT = 1,
  // Tensor or mask shapes do not line up.
  CAMOFREQ_STATUS_DIMENSION = 2,
  // A numeric argument is outside its documented domain.
  CAMOFREQ_STATUS_CONTRACT = 3,
  // A configuration value is invalid or inconsistent.
  CAMOFREQ_STATUS_CONFIG = 4,
  // A numeric invariant failed (non-finite value, residue too large).
  CAMOFREQ_STATUS_NUMERICAL = 5,
  // A file's contents are not in the expected format.
  CAMOFREQ_STATUS_FORMAT = 6,
  // Input data is structurally valid but semantically unusable.
  CAMOFREQ_STATUS_VALIDATION = 7,
  // Text input could not be parsed.
  CAMOFREQ_STATUS_PARSE = 8,
  // Training aborted (e.g. the loss became non-finite).
  CAMOFREQ_STATUS_TRAINING = 9,
  // An operating-system I/O error.
  CAMOFREQ_STATUS_IO = 10,
  // An internal panic was caught at the boundary.
  CAMOFREQ_STATUS_PANIC = 11,
} CamofreqStatus;

// An owned image or feature map: float64, height × width × channels,
// row-major with the channel index fastest.
typedef struct CamofreqImage CamofreqImage;

// An owned set of named model parameters.
typedef struct CamofreqParams CamofreqParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string. Never NULL; do not
// free.
const char *camofreq_version(void);

// Copy the most recent failure message on the calling thread into `buf`
// (NUL-terminated, truncated to fit) and return the byte length the full
// message needs including its NUL. With a NULL `buf` or zero `cap`,
// nothing is copied and only the needed length is returned. The message is
// empty until the first failure.
//
// # Safety
// When `buf` is non-NULL it must be valid for writes of `cap` bytes.
size_t camofreq_last_error(char *buf, size_t cap);

// Create an image from caller-provided pixel data (row-major, channel
// fastest). All of `height`, `width` and `channels` must be at least 1.
//
// # Safety
// `data` must be valid for reads of `height * width * channels` doubles.
// `out` must be valid for writes.
enum CamofreqStatus camofreq_image_new(size_t height,
                                       size_t width,
                                       size_t channels,
                                       const double *data,
                                       struct CamofreqImage **out);

// Report an image's dimensions. Each of the three out-pointers may be NULL
// if that dimension is not wanted.
//
// # Safety
// `image` must be a live handle from this library. Non-NULL out-pointers
// must be valid for writes.
enum CamofreqStatus camofreq_image_dims(const struct CamofreqImage *image,
                                        size_t *height,
                                        size_t *width,
                                        size_t *channels);

// Copy an image's pixel data (row-major, channel fastest) into `out`,
// which holds `cap` doubles. Fails with `CAMOFREQ_STATUS_ARGUMENT` when
// `cap` is smaller than height × width × channels.
//
// # Safety
// `image` must be a live handle from this library. `out` must be valid for
// writes of `cap` doubles.
enum CamofreqStatus camofreq_image_data(const struct CamofreqImage *image, double *out, size_t cap);

// Release an image handle. NULL is a no-op.
//
// # Safety
// `image` must be NULL or a live handle from this library; it must not be
// used after this call.
void camofreq_image_free(struct CamofreqImage *image);

// Load a PNG file as an H×W×3 image with values in [0, 1]. Grayscale and
// alpha-carrying PNGs are converted to RGB.
//
// # Safety
// `path` must be a NUL-terminated string valid for reads. `out` must be
// valid for writes.
enum CamofreqStatus camofreq_image_read_png(const char *path, struct CamofreqImage **out);

// Write a 1- or 3-channel image to a PNG file, clamping values to [0, 1]
// and quantizing to 8 bits with round-half-even.
//
// # Safety
// `image` must be a live handle from this library. `path` must be a
// NUL-terminated string valid for reads.
enum CamofreqStatus camofreq_image_write_png(const struct CamofreqImage *image, const char *path);

// Apply channel-balance correction with blend weight `lambda` in [0, 1].
// `params` may be NULL, in which case a freshly zero-initialised gate is
// used (a neutral correction, as the gate has learned nothing); otherwise
// the handle must hold gate parameters registered under the `cbom` prefix
// for the image's channel count. `lambda` = 0 returns a bit-exact copy of
// the input.
//
// # Safety
// `image` must be a live handle from this library; `params` must be NULL
// or a live handle. `out` must be valid for writes.
enum CamofreqStatus camofreq_channel_balance(const struct CamofreqImage *image,
                                             const struct CamofreqParams *params,
                                             double lambda,
                                             struct CamofreqImage **out);

// Zero the K largest-amplitude frequency cells per channel (conjugate
// partners follow their mates, so up to K+1 cells can go per channel) and
// return the filtered image. `protect_dc` keeps each channel's mean out of
// the ranking. K = 0 removes nothing and returns a bit-exact copy of the
// input without touching the frequency domain. When `cells_removed` is
// non-NULL it receives the total number of zeroed cells across all
// channels.
//
// # Safety
// `image` must be a live handle from this library. `out` must be valid for
// writes; `cells_removed` must be NULL or valid for writes.
enum CamofreqStatus camofreq_spectrum_filter(const struct CamofreqImage *image,
                                             size_t k,
                                             bool protect_dc,
                                             size_t *cells_removed,
                                             struct CamofreqImage **out);

// Single-level orthonormal Haar decomposition. Odd spatial dims are
// edge-padded to even first, so each output band is ⌈H/2⌉ × ⌈W/2⌉ × C.
// All four out-pointers are required and on success each receives a fresh
// handle.
//
// # Safety
// `image` must be a live handle from this library. `ll`, `lh`, `hl` and
// `hh` must all be valid for writes.
enum CamofreqStatus camofreq_wavelet_bands(const struct CamofreqImage *image,
                                           struct CamofreqImage **ll,
                                           struct CamofreqImage **lh,
                                           struct CamofreqImage **hl,
                                           struct CamofreqImage **hh);

// Load model parameters from a file written by `camofreq_params_write` (or
// the `camofreq train` command).
//
// # Safety
// `path` must be a NUL-terminated string valid for reads. `out` must be
// valid for writes.
enum CamofreqStatus camofreq_params_read(const char *path, struct CamofreqParams **out);

// Write model parameters to a file. The format round-trips bit-exactly.
//
// # Safety
// `params` must be a live handle from this library. `path` must be a
// NUL-terminated string valid for reads.
enum CamofreqStatus camofreq_params_write(const struct CamofreqParams *params, const char *path);

// Release a parameter handle. NULL is a no-op.
//
// # Safety
// `params` must be NULL or a live handle from this library; it must not be
// used after this call.
void camofreq_params_free(struct CamofreqParams *params);

// Train a model on generated camouflage scenes and return its parameters.
//
// `config_json` may be NULL for the default configuration; otherwise it
// must hold the same JSON accepted by the `camofreq` CLI's `--config`
// files. `n_samples` scenes are generated from the configuration's seed at
// its input size, with foreground/background contrast in [0, 1], boundary
// blur `blur_sigma` ≥ 0, and between `min_instances` and `max_instances`
// objects per scene. When `final_loss` is non-NULL it receives the last
// step's loss (NaN when the configuration asks for zero steps).
//
// # Safety
// `config_json` must be NULL or a NUL-terminated string valid for reads.
// `final_loss` must be NULL or valid for writes. `out` must be valid for
// writes.
enum CamofreqStatus camofreq_train(const char *config_json,
                                   size_t n_samples,
                                   double contrast,
                                   double blur_sigma,
                                   size_t min_instances,
                                   size_t max_instances,
                                   double *final_loss,
                                   struct CamofreqParams **out);

// Segment an image with a trained model. The image must match the
// configuration's input size (H×W×3). Pixels whose predicted probability
// exceeds `threshold` and survive instance extraction form the output
// mask, returned as an H×W×1 image of 0.0/1.0 values. When `n_instances`
// is non-NULL it receives the number of detected instances.
//
// # Safety
// `image` and `params` must be live handles from this library.
// `config_json` must be NULL or a NUL-terminated string valid for reads.
// `n_instances` must be NULL or valid for writes. `mask_out` must be valid
// for writes.
enum CamofreqStatus camofreq_segment(const struct CamofreqImage *image,
                                     const struct CamofreqParams *params,
                                     const char *config_json,
                                     double threshold,
                                     size_t *n_instances,
                                     struct CamofreqImage **mask_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
