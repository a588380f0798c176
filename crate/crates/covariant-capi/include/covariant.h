#ifndef COVARIANT_H
#define COVARIANT_H

/* Generated by cbindgen from covariant-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Update estimator for a fitting session.
 */
typedef enum {
  /**
   * Explicit metric pseudoinverse applied to the gradient integral.
   */
  COV_ESTIMATOR_PINV = 0,
  /**
   * Direct least-squares estimation of the update.
   */
  COV_ESTIMATOR_W_STAR = 1,
  /**
   * O(n) stochastic tracking of the direct estimate (approximate).
   */
  COV_ESTIMATOR_TWO_TIMESCALE = 2,
} CovEstimator;

/**
 * Where sampled metrics draw their inputs from.
 */
typedef enum {
  /**
   * x ~ the model at the current iterate.
   */
  COV_FISHER_SOURCE_MODEL = 0,
  /**
   * x uniform on [μ − 5σ, μ + 5σ] at the current iterate.
   */
  COV_FISHER_SOURCE_UNIFORM = 1,
} CovFisherSource;

/**
 * Metric construction for a fitting session.
 */
typedef enum {
  /**
   * Exact Gaussian Fisher matrix in (μ, σᵏ) coordinates.
   */
  COV_METRIC_CLOSED_FORM_FISHER = 0,
  /**
   * Monte-Carlo estimate from `fisher_samples` draws per step.
   */
  COV_METRIC_SAMPLED_FISHER = 1,
  /**
   * Measure-weighted score Gram matrix over the dataset.
   */
  COV_METRIC_MEASURE_GRAM = 2,
} CovMetric;

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum {
  COV_STATUS_OK = 0,
  COV_STATUS_NULL_POINTER = 1,
  COV_STATUS_INVALID_ARGUMENT = 2,
  COV_STATUS_DIVERGED = 3,
  COV_STATUS_INTERNAL = 4,
} CovStatus;

/**
 * An opaque naturalized fitting session over the (μ, σᵏ) family.
 */
typedef struct CovGaussianFit CovGaussianFit;

/**
 * Root analysis of the second-order covariance constraints.
 */
typedef struct {
  /**
   * Roots admitted by the exponential-reparameterization branch.
   */
  double b_branch[2];
  /**
   * Roots admitted by the double-exponential branch.
   */
  double c_branch[2];
  /**
   * The only simultaneous root (the trivial update).
   */
  double intersection;
  /**
   * Clusters found by the dense scan; must be 1.
   */
  uint64_t scan_clusters;
  bool pass;
} CovTheorem3Roots;

/**
 * Configuration of a fitting session.
 */
typedef struct {
  /**
   * Power of the standard deviation stored as the second parameter.
   */
  uint32_t k;
  /**
   * Treat f as the density instead of the log-density.
   */
  bool use_density;
  CovMetric metric;
  CovEstimator estimator;
  CovFisherSource fisher_source;
  /**
   * Step size (weight α/n on each dataset atom).
   */
  double alpha;
  /**
   * Samples per step for the sampled metric.
   */
  uint64_t fisher_samples;
  /**
   * Secondary step size for the two-timescale estimator.
   */
  double secondary_alpha;
  /**
   * Seed for metric-estimation randomness.
   */
  uint64_t run_seed;
  double start_mu;
  double start_var;
} CovFitConfig;

/**
 * Snapshot of a fitting session.
 */
typedef struct {
  uint64_t iteration;
  double mu;
  double sigma_sq;
  double loglik_per_sample;
  bool diverged;
} CovFitState;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cov_version(void);

/**
 * Human-readable name of a status code (static storage).
 */
const char *cov_status_name(CovStatus status);

/**
 * Writes the 2×2 Fisher information matrix of the (μ, σᵏ) Gaussian family
 * into `out` (row-major, 4 entries).
 *
 * # Safety
 * `out` must point to at least 4 writable doubles.
 */
CovStatus cov_fisher_gaussian(double mu, double sigma_k, uint32_t k, double *out);

/**
 * Runs the second-order root analysis at base point `beta`.
 *
 * # Safety
 * `out` must point to a writable `CovTheorem3Roots`.
 */
CovStatus cov_theorem3_verify(double beta, CovTheorem3Roots *out);

/**
 * Creates a fitting session over caller-provided scalar samples. Returns
 * null if the configuration or data are invalid.
 *
 * # Safety
 * `config` must point to a valid `CovFitConfig` and `xs` to `len` readable
 * doubles. The returned handle must be released with
 * [`cov_gaussian_fit_free`].
 */
CovGaussianFit *cov_gaussian_fit_new(const CovFitConfig *config, const double *xs, uintptr_t len);

/**
 * Creates a fitting session over `n` freshly generated N(true_mu, true_var)
 * samples drawn deterministically from `data_seed`.
 *
 * # Safety
 * `config` must point to a valid `CovFitConfig`; the returned handle must
 * be released with [`cov_gaussian_fit_free`].
 */
CovGaussianFit *cov_gaussian_fit_new_sampled(const CovFitConfig *config,
                                             uintptr_t n,
                                             double true_mu,
                                             double true_var,
                                             uint64_t data_seed);

/**
 * Advances the session by up to `n_steps` iterations. Returns `Diverged`
 * if the run halted early; the iterate stays at the last valid point.
 *
 * # Safety
 * `handle` must be a live pointer from one of the constructors.
 */
CovStatus cov_gaussian_fit_step(CovGaussianFit *handle, uint64_t n_steps);

/**
 * Writes the current state of the session into `out`.
 *
 * # Safety
 * `handle` must be live and `out` writable.
 */
CovStatus cov_gaussian_fit_state(const CovGaussianFit *handle, CovFitState *out);

/**
 * Releases a session handle. Null is accepted and ignored.
 *
 * # Safety
 * `handle` must be null or a pointer from one of the constructors, not yet
 * freed.
 */
void cov_gaussian_fit_free(CovGaussianFit *handle);

/**
 * Maximum per-step first-order covariance residual between the powers
 * `k_a` and `k_b` over `iterations` naturalized steps with the closed-form
 * Fisher metric, written to `out`.
 *
 * # Safety
 * `out` must point to a writable double.
 */
CovStatus cov_covariance_residual(uint32_t k_a,
                                  uint32_t k_b,
                                  uint64_t iterations,
                                  double alpha,
                                  uint64_t n_data,
                                  uint64_t data_seed,
                                  uint64_t run_seed,
                                  double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* COVARIANT_H */
