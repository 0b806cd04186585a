#ifndef SILENTGRAD_H
#define SILENTGRAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SgStatus {
  SG_STATUS_OK = 0,
  SG_STATUS_NULL_POINTER = 1,
  SG_STATUS_DIMENSION_MISMATCH = 2,
  SG_STATUS_INVALID_PARAMETER = 3,
  SG_STATUS_NON_FINITE = 4,
  SG_STATUS_DEGENERATE = 5,
  SG_STATUS_CONFIG = 6,
  SG_STATUS_DIVERGED = 7,
  SG_STATUS_IO = 8,
  SG_STATUS_INTERNAL = 9,
} SgStatus;

/**
 * A linear decoder: `W_mu` and, for learnable precision, `W_alpha`.
 */
typedef struct SgDecoder SgDecoder;

/**
 * A factorized Gaussian or Bernoulli latent distribution.
 */
typedef struct SgLatent SgLatent;

/**
 * A training run and its dataset.
 */
typedef struct SgTrainer SgTrainer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message on this thread into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t sg_last_error(char *buf, size_t len);

/**
 * Decoder with fixed output variance. `wmu` is `k x (d+1)` row-major, the
 * last column being the bias.
 *
 * # Safety
 * `wmu` must point to `k * cols` values; `out` must be writable.
 */
enum SgStatus sg_decoder_new_fixed(const double *wmu,
                                   size_t k,
                                   size_t cols,
                                   struct SgDecoder **out);

/**
 * Decoder with learnable per-dimension precision; `walpha` has the shape of
 * `wmu`.
 *
 * # Safety
 * `wmu` and `walpha` must point to `k * cols` values; `out` must be writable.
 */
enum SgStatus sg_decoder_new_learnable(const double *wmu,
                                       const double *walpha,
                                       size_t k,
                                       size_t cols,
                                       struct SgDecoder **out);

/**
 * # Safety
 * `dec` must be null or a pointer from `sg_decoder_new_*` not yet freed.
 */
void sg_decoder_free(struct SgDecoder *dec);

/**
 * # Safety
 * `mean` and `var` must point to `d` values; `out` must be writable.
 */
enum SgStatus sg_latent_new_gaussian(const double *mean,
                                     const double *var,
                                     size_t d,
                                     struct SgLatent **out);

/**
 * # Safety
 * `p` must point to `d` values; `out` must be writable.
 */
enum SgStatus sg_latent_new_bernoulli(const double *p, size_t d, struct SgLatent **out);

/**
 * # Safety
 * `lat` must be null or a pointer from `sg_latent_new_*` not yet freed.
 */
void sg_latent_free(struct SgLatent *lat);

/**
 * Number of latent dimensions, or 0 for a null handle.
 *
 * # Safety
 * `lat` must be null or a live latent handle.
 */
size_t sg_latent_dim(const struct SgLatent *lat);

/**
 * Central moments of order 2, 3 and 4; each optional output holds `d`
 * values.
 *
 * # Safety
 * `lat` must be a live latent handle; non-null outputs must hold `d` values.
 */
enum SgStatus sg_latent_central_moments(const struct SgLatent *lat,
                                        double *m2,
                                        double *m3,
                                        double *m4);

/**
 * Expected reconstruction log-likelihood under a fixed output variance.
 * `grad_stats` receives `2d` values (means then variances) for a Gaussian
 * latent and `d` probabilities for a Bernoulli one; `grad_wmu` receives
 * `k * (d+1)` values. All outputs are optional.
 *
 * # Safety
 * Handles must be live; `x` must hold `k` values; outputs must be sized as
 * described.
 */
enum SgStatus sg_expected_recon_fixed(const struct SgDecoder *dec,
                                      const struct SgLatent *lat,
                                      const double *x,
                                      size_t k,
                                      double sigma2,
                                      double *value,
                                      double *grad_stats,
                                      double *grad_wmu);

/**
 * Expected reconstruction objective with learnable precision; as
 * [`sg_expected_recon_fixed`] plus `grad_walpha` (`k * (d+1)` values).
 *
 * # Safety
 * As for [`sg_expected_recon_fixed`].
 */
enum SgStatus sg_expected_recon_learnable(const struct SgDecoder *dec,
                                          const struct SgLatent *lat,
                                          const double *x,
                                          size_t k,
                                          double *value,
                                          double *grad_stats,
                                          double *grad_wmu,
                                          double *grad_walpha);

/**
 * Bits per dimension of 8-bit data from a per-item log-likelihood of the
 * dequantized item.
 */
double sg_bpd(double loglik_per_item, size_t k);

/**
 * Builds a trainer from configuration text in `key = value` form.
 *
 * # Safety
 * `config` must be a NUL-terminated string; `out` must be writable.
 */
enum SgStatus sg_trainer_new(const char *config, struct SgTrainer **out);

/**
 * Runs one epoch; `loss` (optional) receives the evaluated negative ELBO.
 *
 * # Safety
 * `t` must be a live trainer handle.
 */
enum SgStatus sg_trainer_epoch(struct SgTrainer *t, double *loss);

/**
 * Checksum of the encoder parameters, or 0 for a null handle.
 *
 * # Safety
 * `t` must be null or a live trainer handle.
 */
uint64_t sg_trainer_encoder_checksum(const struct SgTrainer *t);

/**
 * # Safety
 * `t` must be null or a pointer from `sg_trainer_new` not yet freed.
 */
void sg_trainer_free(struct SgTrainer *t);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SILENTGRAD_H */
