/* Generated by cbindgen. Do not edit. */

#ifndef RECSEG_H
#define RECSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum RecsegMaskKind {
  RECSEG_MASK_KIND_UNIFORM_RANDOM = 0,
  RECSEG_MASK_KIND_VARIABLE_DENSITY = 1,
  RECSEG_MASK_KIND_SPIRAL = 2,
} RecsegMaskKind;

typedef enum RecsegPhantomKind {
  /**
   * `count` random bubbles on a background, intensities 0 and 1.
   */
  RECSEG_PHANTOM_KIND_BUBBLES = 0,
  /**
   * One centred disk of radius 0.25, intensities 0 and 1.
   */
  RECSEG_PHANTOM_KIND_TWO_REGION = 1,
  /**
   * Four-class ellipse stack, intensities 0, 0.3, 0.6 and 1.
   */
  RECSEG_PHANTOM_KIND_SHEPP_LOGAN_LIKE = 2,
} RecsegPhantomKind;

/**
 * Result code of every fallible call.
 */
typedef enum RecsegStatus {
  RECSEG_STATUS_OK = 0,
  RECSEG_STATUS_NULL_POINTER = 1,
  RECSEG_STATUS_INVALID_ARGUMENT = 2,
  RECSEG_STATUS_SHAPE_MISMATCH = 3,
  RECSEG_STATUS_INVALID_CONFIG = 4,
  RECSEG_STATUS_SOLVER_DIVERGED = 5,
  RECSEG_STATUS_IO = 6,
  RECSEG_STATUS_PARSE = 7,
  RECSEG_STATUS_PANIC = 8,
} RecsegStatus;

/**
 * Real image.
 */
typedef struct RecsegImage RecsegImage;

/**
 * Sampled k-space coefficients with their mask and noise level.
 */
typedef struct RecsegKspace RecsegKspace;

/**
 * Hard label map.
 */
typedef struct RecsegLabels RecsegLabels;

typedef struct RecsegMask RecsegMask;

/**
 * Solver settings. Obtain defaults from [`recseg_config_default`].
 */
typedef struct RecsegConfig {
  double alpha;
  double beta;
  double delta;
  /**
   * Outer stop on the label step; `<= 0` picks `1e-3 sqrt(n l)`.
   */
  double tol_v;
  uint32_t max_outer;
  uint32_t inner_iters;
  double inner_tol;
  double epsilon_aug;
  double mu;
  bool update_means;
  bool weighted_steps;
} RecsegConfig;

typedef struct RecsegMetrics {
  double rre;
  double psnr_unsquared;
  double psnr_standard;
  double rse;
} RecsegMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call on the same thread.
 */
const char *recseg_last_error(void);

struct RecsegConfig recseg_config_default(void);

/**
 * Copies `n1 * n2` values into a new image.
 *
 * # Safety
 * `values` must point to `n1 * n2` doubles.
 */
enum RecsegStatus recseg_image_new(uint32_t n1,
                                   uint32_t n2,
                                   const double *values,
                                   struct RecsegImage **image);

/**
 * # Safety
 * `image` must be a live handle; `n1`, `n2` may be null.
 */
enum RecsegStatus recseg_image_dims(const struct RecsegImage *image, uint32_t *n1, uint32_t *n2);

/**
 * Copies the pixel values into `values`, which holds `len` doubles.
 *
 * # Safety
 * `values` must be writable for `len` doubles.
 */
enum RecsegStatus recseg_image_values(const struct RecsegImage *image, double *values, size_t len);

/**
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void recseg_image_free(struct RecsegImage *image);

/**
 * Copies the labels (`n1 * n2` entries) into `labels`.
 *
 * # Safety
 * `labels` must be writable for `len` entries.
 */
enum RecsegStatus recseg_labels_values(const struct RecsegLabels *seg,
                                       uint32_t *labels,
                                       size_t len,
                                       uint32_t *classes);

/**
 * # Safety
 * `seg` must be null or a handle not yet freed.
 */
void recseg_labels_free(struct RecsegLabels *seg);

/**
 * Builds a phantom; `means` receives up to `means_len` class intensities and
 * `classes` the class count.
 *
 * # Safety
 * Output pointers must be valid; `means` must be writable for `means_len`.
 */
enum RecsegStatus recseg_phantom_new(enum RecsegPhantomKind kind,
                                     uint32_t n1,
                                     uint32_t n2,
                                     uint32_t count,
                                     uint64_t seed,
                                     struct RecsegImage **image,
                                     struct RecsegLabels **labels,
                                     double *means,
                                     size_t means_len,
                                     uint32_t *classes);

/**
 * # Safety
 * `mask` must be a valid output pointer.
 */
enum RecsegStatus recseg_mask_new(enum RecsegMaskKind kind,
                                  uint32_t n1,
                                  uint32_t n2,
                                  double rate,
                                  uint64_t seed,
                                  bool symmetric,
                                  struct RecsegMask **mask);

/**
 * Number of sampled bins, or 0 for a null handle.
 *
 * # Safety
 * `mask` must be null or a live handle.
 */
size_t recseg_mask_count(const struct RecsegMask *mask);

/**
 * # Safety
 * `mask` must be null or a handle not yet freed.
 */
void recseg_mask_free(struct RecsegMask *mask);

/**
 * `f = A u + noise` with per-component standard deviation `sigma`.
 *
 * # Safety
 * Handles must be live; `kspace` must be a valid output pointer.
 */
enum RecsegStatus recseg_simulate_kspace(const struct RecsegImage *image,
                                         const struct RecsegMask *mask,
                                         double sigma,
                                         uint64_t seed,
                                         struct RecsegKspace **kspace);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `kspace` a valid output pointer.
 */
enum RecsegStatus recseg_kspace_read(const char *path, struct RecsegKspace **kspace);

/**
 * # Safety
 * `kspace` must be live; `path` NUL-terminated.
 */
enum RecsegStatus recseg_kspace_write(const struct RecsegKspace *kspace, const char *path);

/**
 * # Safety
 * `kspace` must be null or a handle not yet freed.
 */
void recseg_kspace_free(struct RecsegKspace *kspace);

/**
 * # Safety
 * `kspace` must be live; `image` a valid output pointer.
 */
enum RecsegStatus recseg_zero_fill(const struct RecsegKspace *kspace, struct RecsegImage **image);

/**
 * Single TV-regularised solve with weight `config->alpha`.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RecsegStatus recseg_tv_reconstruct(const struct RecsegKspace *kspace,
                                        const struct RecsegConfig *config,
                                        struct RecsegImage **image);

/**
 * Bregman-TV iteration with the discrepancy stop; `outer_iters` may be null.
 *
 * # Safety
 * Pointers must be valid.
 */
enum RecsegStatus recseg_bregman_reconstruct(const struct RecsegKspace *kspace,
                                             const struct RecsegConfig *config,
                                             struct RecsegImage **image,
                                             uint32_t *outer_iters);

/**
 * Segments `image` into `classes` regions with intensities `means`.
 *
 * # Safety
 * `means` must hold `classes` doubles; other pointers valid.
 */
enum RecsegStatus recseg_segment(const struct RecsegImage *image,
                                 const double *means,
                                 size_t classes,
                                 const struct RecsegConfig *config,
                                 struct RecsegLabels **labels);

/**
 * Joint reconstruction and segmentation; `outer_iters` may be null.
 *
 * # Safety
 * `means` must hold `classes` doubles; other pointers valid.
 */
enum RecsegStatus recseg_joint_solve(const struct RecsegKspace *kspace,
                                     const double *means,
                                     size_t classes,
                                     const struct RecsegConfig *config,
                                     struct RecsegImage **image,
                                     struct RecsegLabels **labels,
                                     uint32_t *outer_iters);

/**
 * # Safety
 * Handles must be live; `metrics` writable.
 */
enum RecsegStatus recseg_metrics(const struct RecsegImage *image,
                                 const struct RecsegImage *image_gt,
                                 const struct RecsegLabels *labels,
                                 const struct RecsegLabels *labels_gt,
                                 struct RecsegMetrics *metrics);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECSEG_H */
