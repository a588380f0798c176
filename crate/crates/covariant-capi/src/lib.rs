//! C ABI over the covariant crate.
//!
//! The surface is deliberately small: version and status strings, the
//! closed-form Gaussian Fisher matrix, the second-order root analysis, a
//! per-step covariance residual probe, and an opaque naturalized-fit session
//! over the (μ, σᵏ) family. Handles are created and destroyed by this
//! library only; every function is panic-safe and reports failures through
//! `CovStatus` codes.

// Negated float comparisons are deliberate NaN guards.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use covariant::covariance::theorem3_verify;
use covariant::experiments::{
    fig2_covariance_residuals, ExperimentConfig, Fig2Metric, FisherSource, FunctionMode,
    GaussianFitSession, UpdateEstimator, Variant,
};
use covariant::metric::fisher_gaussian_closed_form;
use covariant::rules::GaussianData;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Diverged = 3,
    Internal = 4,
}

/// Metric construction for a fitting session.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovMetric {
    /// Exact Gaussian Fisher matrix in (μ, σᵏ) coordinates.
    ClosedFormFisher = 0,
    /// Monte-Carlo estimate from `fisher_samples` draws per step.
    SampledFisher = 1,
    /// Measure-weighted score Gram matrix over the dataset.
    MeasureGram = 2,
}

/// Update estimator for a fitting session.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovEstimator {
    /// Explicit metric pseudoinverse applied to the gradient integral.
    Pinv = 0,
    /// Direct least-squares estimation of the update.
    WStar = 1,
    /// O(n) stochastic tracking of the direct estimate (approximate).
    TwoTimescale = 2,
}

/// Where sampled metrics draw their inputs from.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovFisherSource {
    /// x ~ the model at the current iterate.
    Model = 0,
    /// x uniform on [μ − 5σ, μ + 5σ] at the current iterate.
    Uniform = 1,
}

/// Configuration of a fitting session.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CovFitConfig {
    /// Power of the standard deviation stored as the second parameter.
    pub k: u32,
    /// Treat f as the density instead of the log-density.
    pub use_density: bool,
    pub metric: CovMetric,
    pub estimator: CovEstimator,
    pub fisher_source: CovFisherSource,
    /// Step size (weight α/n on each dataset atom).
    pub alpha: f64,
    /// Samples per step for the sampled metric.
    pub fisher_samples: u64,
    /// Secondary step size for the two-timescale estimator.
    pub secondary_alpha: f64,
    /// Seed for metric-estimation randomness.
    pub run_seed: u64,
    pub start_mu: f64,
    pub start_var: f64,
}

/// Snapshot of a fitting session.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CovFitState {
    pub iteration: u64,
    pub mu: f64,
    pub sigma_sq: f64,
    pub loglik_per_sample: f64,
    pub diverged: bool,
}

/// Root analysis of the second-order covariance constraints.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CovTheorem3Roots {
    /// Roots admitted by the exponential-reparameterization branch.
    pub b_branch: [f64; 2],
    /// Roots admitted by the double-exponential branch.
    pub c_branch: [f64; 2],
    /// The only simultaneous root (the trivial update).
    pub intersection: f64,
    /// Clusters found by the dense scan; must be 1.
    pub scan_clusters: u64,
    pub pass: bool,
}

/// An opaque naturalized fitting session over the (μ, σᵏ) family.
pub struct CovGaussianFit {
    session: GaussianFitSession,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cov_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Human-readable name of a status code (static storage).
#[no_mangle]
pub extern "C" fn cov_status_name(status: CovStatus) -> *const c_char {
    let name: &'static str = match status {
        CovStatus::Ok => "ok\0",
        CovStatus::NullPointer => "null pointer\0",
        CovStatus::InvalidArgument => "invalid argument\0",
        CovStatus::Diverged => "diverged\0",
        CovStatus::Internal => "internal error\0",
    };
    name.as_ptr() as *const c_char
}

/// Writes the 2×2 Fisher information matrix of the (μ, σᵏ) Gaussian family
/// into `out` (row-major, 4 entries).
///
/// # Safety
/// `out` must point to at least 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cov_fisher_gaussian(
    mu: f64,
    sigma_k: f64,
    k: u32,
    out: *mut f64,
) -> CovStatus {
    if out.is_null() {
        return CovStatus::NullPointer;
    }
    let result = catch_unwind(|| fisher_gaussian_closed_form(mu, sigma_k, k));
    match result {
        Ok(Ok(metric)) => {
            let m = metric.entries();
            for i in 0..2 {
                for j in 0..2 {
                    *out.add(i * 2 + j) = m[(i, j)];
                }
            }
            CovStatus::Ok
        }
        Ok(Err(_)) => CovStatus::InvalidArgument,
        Err(_) => CovStatus::Internal,
    }
}

/// Runs the second-order root analysis at base point `beta`.
///
/// # Safety
/// `out` must point to a writable `CovTheorem3Roots`.
#[no_mangle]
pub unsafe extern "C" fn cov_theorem3_verify(beta: f64, out: *mut CovTheorem3Roots) -> CovStatus {
    if out.is_null() {
        return CovStatus::NullPointer;
    }
    match catch_unwind(|| theorem3_verify(beta)) {
        Ok(Ok(report)) => {
            *out = CovTheorem3Roots {
                b_branch: [report.b_branch_roots[0], report.b_branch_roots[1]],
                c_branch: [report.c_branch_roots[0], report.c_branch_roots[1]],
                intersection: report.intersection[0],
                scan_clusters: report.scan_roots.len() as u64,
                pass: report.pass,
            };
            CovStatus::Ok
        }
        Ok(Err(_)) => CovStatus::InvalidArgument,
        Err(_) => CovStatus::Internal,
    }
}

fn experiment_config(config: &CovFitConfig, n_data: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_variant(Variant::Fig2a);
    cfg.n_data = n_data;
    cfg.k_list = vec![config.k];
    cfg.alpha = config.alpha;
    cfg.run_seed = config.run_seed;
    cfg.start_mu = config.start_mu;
    cfg.start_var = config.start_var;
    cfg.fisher_samples = config.fisher_samples as usize;
    cfg.fisher_source = match config.fisher_source {
        CovFisherSource::Model => FisherSource::Model,
        CovFisherSource::Uniform => FisherSource::Uniform,
    };
    cfg.function_mode = if config.use_density {
        FunctionMode::Density
    } else {
        FunctionMode::LogDensity
    };
    cfg.metric = match config.metric {
        CovMetric::ClosedFormFisher => Fig2Metric::ClosedFormFisher,
        CovMetric::SampledFisher => Fig2Metric::SampledFisher,
        CovMetric::MeasureGram => Fig2Metric::MeasureGram,
    };
    cfg.estimator = match config.estimator {
        CovEstimator::Pinv => UpdateEstimator::ExplicitPinv,
        CovEstimator::WStar => UpdateEstimator::DirectWStar,
        CovEstimator::TwoTimescale => UpdateEstimator::TwoTimescale {
            secondary_alpha: config.secondary_alpha,
        },
    };
    cfg
}

/// Creates a fitting session over caller-provided scalar samples. Returns
/// null if the configuration or data are invalid.
///
/// # Safety
/// `config` must point to a valid `CovFitConfig` and `xs` to `len` readable
/// doubles. The returned handle must be released with
/// [`cov_gaussian_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn cov_gaussian_fit_new(
    config: *const CovFitConfig,
    xs: *const f64,
    len: usize,
) -> *mut CovGaussianFit {
    if config.is_null() || xs.is_null() || len == 0 {
        return std::ptr::null_mut();
    }
    let config = *config;
    let samples = std::slice::from_raw_parts(xs, len).to_vec();
    let built = catch_unwind(AssertUnwindSafe(move || {
        let data = Arc::new(GaussianData::from_samples(samples)?);
        let cfg = experiment_config(&config, len);
        GaussianFitSession::new(&cfg, config.k, data)
    }));
    match built {
        Ok(Ok(session)) => Box::into_raw(Box::new(CovGaussianFit { session })),
        _ => std::ptr::null_mut(),
    }
}

/// Creates a fitting session over `n` freshly generated N(true_mu, true_var)
/// samples drawn deterministically from `data_seed`.
///
/// # Safety
/// `config` must point to a valid `CovFitConfig`; the returned handle must
/// be released with [`cov_gaussian_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn cov_gaussian_fit_new_sampled(
    config: *const CovFitConfig,
    n: usize,
    true_mu: f64,
    true_var: f64,
    data_seed: u64,
) -> *mut CovGaussianFit {
    if config.is_null() || n == 0 || !(true_var > 0.0) {
        return std::ptr::null_mut();
    }
    let config = *config;
    let built = catch_unwind(AssertUnwindSafe(move || {
        let data = Arc::new(GaussianData::sample_gaussian(
            n,
            true_mu,
            true_var.sqrt(),
            data_seed,
        )?);
        let cfg = experiment_config(&config, n);
        GaussianFitSession::new(&cfg, config.k, data)
    }));
    match built {
        Ok(Ok(session)) => Box::into_raw(Box::new(CovGaussianFit { session })),
        _ => std::ptr::null_mut(),
    }
}

/// Advances the session by up to `n_steps` iterations. Returns `Diverged`
/// if the run halted early; the iterate stays at the last valid point.
///
/// # Safety
/// `handle` must be a live pointer from one of the constructors.
#[no_mangle]
pub unsafe extern "C" fn cov_gaussian_fit_step(
    handle: *mut CovGaussianFit,
    n_steps: u64,
) -> CovStatus {
    let Some(fit) = handle.as_mut() else {
        return CovStatus::NullPointer;
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        for _ in 0..n_steps {
            if !fit.session.step() {
                return false;
            }
        }
        true
    }));
    match outcome {
        Ok(true) => CovStatus::Ok,
        Ok(false) => CovStatus::Diverged,
        Err(_) => CovStatus::Internal,
    }
}

/// Writes the current state of the session into `out`.
///
/// # Safety
/// `handle` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cov_gaussian_fit_state(
    handle: *const CovGaussianFit,
    out: *mut CovFitState,
) -> CovStatus {
    let Some(fit) = handle.as_ref() else {
        return CovStatus::NullPointer;
    };
    if out.is_null() {
        return CovStatus::NullPointer;
    }
    let snapshot = catch_unwind(AssertUnwindSafe(|| CovFitState {
        iteration: fit.session.iteration() as u64,
        mu: fit.session.mu(),
        sigma_sq: fit.session.sigma_sq(),
        loglik_per_sample: fit.session.loglik_per_sample(),
        diverged: fit.session.diverged(),
    }));
    match snapshot {
        Ok(state) => {
            *out = state;
            CovStatus::Ok
        }
        Err(_) => CovStatus::Internal,
    }
}

/// Releases a session handle. Null is accepted and ignored.
///
/// # Safety
/// `handle` must be null or a pointer from one of the constructors, not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn cov_gaussian_fit_free(handle: *mut CovGaussianFit) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Maximum per-step first-order covariance residual between the powers
/// `k_a` and `k_b` over `iterations` naturalized steps with the closed-form
/// Fisher metric, written to `out`.
///
/// # Safety
/// `out` must point to a writable double.
#[no_mangle]
pub unsafe extern "C" fn cov_covariance_residual(
    k_a: u32,
    k_b: u32,
    iterations: u64,
    alpha: f64,
    n_data: u64,
    data_seed: u64,
    run_seed: u64,
    out: *mut f64,
) -> CovStatus {
    if out.is_null() {
        return CovStatus::NullPointer;
    }
    let result = catch_unwind(move || {
        let mut cfg = ExperimentConfig::for_variant(Variant::Fig2a);
        cfg.metric = Fig2Metric::ClosedFormFisher;
        cfg.k_list = vec![k_a, k_b];
        cfg.iterations = iterations as usize;
        cfg.alpha = alpha;
        cfg.n_data = n_data as usize;
        cfg.data_seed = data_seed;
        cfg.run_seed = run_seed;
        fig2_covariance_residuals(&cfg, 8)
    });
    match result {
        Ok(Ok(residual)) => {
            *out = residual;
            CovStatus::Ok
        }
        Ok(Err(_)) => CovStatus::InvalidArgument,
        Err(_) => CovStatus::Internal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_is_nul_terminated() {
        let ptr = cov_version();
        let s = unsafe { std::ffi::CStr::from_ptr(ptr) };
        assert_eq!(s.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
