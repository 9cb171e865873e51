#ifndef EDUSPACE_H
#define EDUSPACE_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_NULL_POINTER = 1,
  ES_STATUS_INVALID_ARGUMENT = 2,
  ES_STATUS_DATA = 3,
  ES_STATUS_MODEL = 4,
  ES_STATUS_BUFFER_TOO_SMALL = 5,
  ES_STATUS_PANIC = 6,
} EsStatus;

/**
 * Fitted k-means model.
 */
typedef struct EsKMeans EsKMeans;

/**
 * Fitted logit model.
 */
typedef struct EsLogit EsLogit;

/**
 * Fitted two-component PCA space.
 */
typedef struct EsSpace EsSpace;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. The pointer is
 * valid until the next call into this library from the same thread.
 */
const char *es_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *es_version(void);

/**
 * Run k-means on a row-major `n x d` matrix.
 *
 * # Safety
 * `data` must point to `n * d` doubles; `out` must be a valid pointer.
 */
enum EsStatus es_kmeans_fit(const double *data,
                            size_t n,
                            size_t d,
                            size_t k,
                            uint64_t seed,
                            size_t restarts,
                            struct EsKMeans **out);

/**
 * # Safety
 * `h` and `out` must be valid pointers.
 */
enum EsStatus es_kmeans_objective(const struct EsKMeans *h, double *out);

/**
 * Cluster index of every point; `len` must be at least `n`.
 *
 * # Safety
 * `h` must be valid and `out` must hold `len` values.
 */
enum EsStatus es_kmeans_assignments(const struct EsKMeans *h, uint32_t *out, size_t len);

/**
 * Row-major `k x d` centroids; `len` must be at least `k * d`.
 *
 * # Safety
 * `h` must be valid and `out` must hold `len` values.
 */
enum EsStatus es_kmeans_centroids(const struct EsKMeans *h, double *out, size_t len);

/**
 * # Safety
 * `h` must come from [`es_kmeans_fit`] or be NULL.
 */
void es_kmeans_free(struct EsKMeans *h);

/**
 * Fit the space on a row-major `n x 6` feature matrix.
 *
 * # Safety
 * `data` must point to `n * d` doubles; `out` must be a valid pointer.
 */
enum EsStatus es_space_fit(const double *data, size_t n, size_t d, struct EsSpace **out);

/**
 * Project `n` rows; writes `n x 2` coordinates row-major.
 *
 * # Safety
 * `h` must be valid, `data` must hold `n * 6` doubles and `out` `len`.
 */
enum EsStatus es_space_project(const struct EsSpace *h,
                               const double *data,
                               size_t n,
                               double *out,
                               size_t len);

/**
 * Explained variance ratio of PC1 and PC2.
 *
 * # Safety
 * `h` must be valid and `out` must hold two doubles.
 */
enum EsStatus es_space_variance_ratio(const struct EsSpace *h, double *out);

/**
 * # Safety
 * `h` must come from [`es_space_fit`] or be NULL.
 */
void es_space_free(struct EsSpace *h);

/**
 * Fit a logit by maximum likelihood. `x` is row-major `n x p` and should
 * contain an intercept column if one is wanted; `y` holds 0/1 values.
 *
 * # Safety
 * `x` must hold `n * p` doubles, `y` `n` doubles; `out` must be valid.
 */
enum EsStatus es_logit_fit(const double *x,
                           size_t n,
                           size_t p,
                           const double *y,
                           struct EsLogit **out);

/**
 * # Safety
 * `h` must be valid and `out` must hold `len` doubles.
 */
enum EsStatus es_logit_coefficients(const struct EsLogit *h, double *out, size_t len);

/**
 * # Safety
 * `h` must be valid and `out` must hold `len` doubles.
 */
enum EsStatus es_logit_std_errors(const struct EsLogit *h, double *out, size_t len);

/**
 * # Safety
 * `h` must be valid and `out` must hold `len` doubles.
 */
enum EsStatus es_logit_p_values(const struct EsLogit *h, double *out, size_t len);

/**
 * Log-likelihood and McFadden pseudo-R2.
 *
 * # Safety
 * All pointers must be valid.
 */
enum EsStatus es_logit_fit_stats(const struct EsLogit *h,
                                 double *log_likelihood,
                                 double *pseudo_r2);

/**
 * # Safety
 * `h` must come from [`es_logit_fit`] or be NULL.
 */
void es_logit_free(struct EsLogit *h);

/**
 * Adjusted Rand index of two labelings of `n` items.
 *
 * # Safety
 * `a` and `b` must hold `n` values; `out` must be valid.
 */
enum EsStatus es_ari(const uint32_t *a, const uint32_t *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EDUSPACE_H */
