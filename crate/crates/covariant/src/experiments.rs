//! Reproducible Gaussian reparameterization experiments.
//!
//! `figure1` runs plain batch gradient ascent on the data log-likelihood for
//! each power k of the (μ, σᵏ) parameterization and records how differently
//! the equally-expressive representations behave. `figure2` repeats the run
//! with naturalized updates under several metric estimators; with matched
//! seeds the per-k trajectories collapse onto each other up to the
//! first-order approximation error.
//!
//! Both emit per-k CSV tables plus a key=value metadata sidecar that records
//! the full resolved configuration, so every output file is self-describing
//! and reruns are byte-identical.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::calculus::MetricMatrix;
use crate::rng::{self, StreamLabel};
use crate::rules::{
    gaussian_log_pdf, gaussian_loglik_gd_step, gaussian_score, sigma_power_from_sq,
    sigma_sq_from_power, GaussianData,
};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;

/// Which experiment to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Fig1,
    Fig2a,
    Fig2b,
    Fig2c,
    Fig2d,
    Fig2e,
    Fig2f,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Fig1 => "fig1",
            Variant::Fig2a => "fig2a",
            Variant::Fig2b => "fig2b",
            Variant::Fig2c => "fig2c",
            Variant::Fig2d => "fig2d",
            Variant::Fig2e => "fig2e",
            Variant::Fig2f => "fig2f",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fig1" | "1" => Ok(Variant::Fig1),
            "fig2a" | "a" => Ok(Variant::Fig2a),
            "fig2b" | "b" => Ok(Variant::Fig2b),
            "fig2c" | "c" => Ok(Variant::Fig2c),
            "fig2d" | "d" => Ok(Variant::Fig2d),
            "fig2e" | "e" => Ok(Variant::Fig2e),
            "fig2f" | "f" => Ok(Variant::Fig2f),
            other => Err(Error::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

/// Where Fisher-style metric samples come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FisherSource {
    Model,
    Uniform,
}

/// Which f the naturalization machinery sees.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionMode {
    LogDensity,
    Density,
}

/// Metric construction for the naturalized runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fig2Metric {
    /// Monte-Carlo outer products of ∇f over `fisher_samples` draws.
    SampledFisher,
    /// The exact Gaussian Fisher matrix in (μ, σᵏ) coordinates.
    ClosedFormFisher,
    /// The measure-weighted score Gram matrix over the dataset (the form
    /// under which direct estimation reproduces the explicit update).
    MeasureGram,
}

/// Update estimator for the naturalized runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UpdateEstimator {
    ExplicitPinv,
    /// Direct least-squares estimation of the update (compatible function
    /// approximation), never forming the metric.
    DirectWStar,
    /// Track the unit-step direct estimate with one O(n) stochastic-gradient
    /// update per step; the parameter iterate moves by α times the tracked
    /// estimate so it stays on the slower timescale. This only approximates
    /// the covariant update, and the tracker is itself an ordinary Euclidean
    /// SGD on the compatible-approximation objective, so its convergence
    /// degrades on poorly scaled parameterizations (large k).
    TwoTimescale { secondary_alpha: f64 },
}

/// Full configuration of one experiment run. All fields have documented
/// defaults per variant; seeds are fixed constants so the zero-flag
/// invocation is fully reproducible.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub data_seed: u64,
    pub run_seed: u64,
    pub n_data: usize,
    pub true_mu: f64,
    pub true_var: f64,
    pub start_mu: f64,
    pub start_var: f64,
    pub k_list: Vec<u32>,
    pub iterations: usize,
    pub alpha: f64,
    pub fisher_samples: usize,
    pub fisher_source: FisherSource,
    pub function_mode: FunctionMode,
    pub metric: Fig2Metric,
    pub estimator: UpdateEstimator,
    /// Record every `subsample`-th iteration (plus first and last).
    pub subsample: usize,
    pub full_resolution: bool,
}

pub const DEFAULT_DATA_SEED: u64 = 101;
pub const DEFAULT_RUN_SEED: u64 = 202;

impl ExperimentConfig {
    /// The documented defaults for a variant. Figure-1 defaults follow the
    /// 100,000-sample N(3,9) dataset, N(2,4) start, α = .001/n and 200,000
    /// iterations; figure-2 step sizes are per-variant constants chosen to
    /// keep every k stable and are recorded in the emitted metadata.
    pub fn for_variant(variant: Variant) -> Self {
        let n_data = 100_000usize;
        let base = ExperimentConfig {
            variant,
            data_seed: DEFAULT_DATA_SEED,
            run_seed: DEFAULT_RUN_SEED,
            n_data,
            true_mu: 3.0,
            true_var: 9.0,
            start_mu: 2.0,
            start_var: 4.0,
            k_list: vec![1, 2, 3, 4],
            iterations: 5_000,
            alpha: 0.05,
            fisher_samples: 1_000,
            fisher_source: FisherSource::Model,
            function_mode: FunctionMode::LogDensity,
            metric: Fig2Metric::SampledFisher,
            estimator: UpdateEstimator::ExplicitPinv,
            subsample: 100,
            full_resolution: false,
        };
        // The density-mode metric Σ pdf²·s sᵀ is two orders of magnitude
        // smaller than the Fisher matrix at these variances, so its
        // pseudoinverse amplifies the step; the density variants need
        // proportionally smaller α to stay stable for every k.
        match variant {
            Variant::Fig1 => ExperimentConfig {
                iterations: 200_000,
                alpha: 0.001 / n_data as f64,
                ..base
            },
            Variant::Fig2a => base,
            Variant::Fig2b => ExperimentConfig {
                function_mode: FunctionMode::Density,
                alpha: 0.004,
                ..base
            },
            Variant::Fig2c => ExperimentConfig {
                function_mode: FunctionMode::Density,
                fisher_samples: 100,
                alpha: 0.0015,
                ..base
            },
            Variant::Fig2d => ExperimentConfig {
                function_mode: FunctionMode::Density,
                fisher_samples: 5,
                alpha: 0.0004,
                ..base
            },
            Variant::Fig2e => ExperimentConfig {
                function_mode: FunctionMode::Density,
                fisher_source: FisherSource::Uniform,
                alpha: 0.0015,
                ..base
            },
            // Direct estimation: the measure weights cancel inside the
            // least-squares problem, so the recorded α does not affect the
            // trajectory of this variant.
            Variant::Fig2f => ExperimentConfig {
                metric: Fig2Metric::MeasureGram,
                estimator: UpdateEstimator::DirectWStar,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_data == 0 {
            return Err(Error::InvalidArgument("n_data must be ≥ 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be ≥ 1".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidArgument("alpha must be positive".into()));
        }
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(Error::InvalidArgument("k list must contain powers ≥ 1".into()));
        }
        if !(self.true_var > 0.0) || !(self.start_var > 0.0) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        Ok(())
    }

    /// Key=value lines describing the full resolved configuration.
    pub fn metadata_lines(&self) -> Vec<String> {
        let mut lines = vec![
            format!("variant={}", self.variant.name()),
            format!("library_version={}", env!("CARGO_PKG_VERSION")),
            format!("data_seed={}", self.data_seed),
            format!("run_seed={}", self.run_seed),
            format!("n_data={}", self.n_data),
            format!("true_mu={}", self.true_mu),
            format!("true_var={}", self.true_var),
            format!("start_mu={}", self.start_mu),
            format!("start_var={}", self.start_var),
            format!(
                "k_list={}",
                self.k_list.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!("iterations={}", self.iterations),
            format!("alpha={}", self.alpha),
            format!("fisher_samples={}", self.fisher_samples),
            format!(
                "fisher_source={}",
                match self.fisher_source {
                    FisherSource::Model => "model",
                    FisherSource::Uniform => "uniform",
                }
            ),
            format!(
                "function_mode={}",
                match self.function_mode {
                    FunctionMode::LogDensity => "log-density",
                    FunctionMode::Density => "density",
                }
            ),
            format!(
                "metric={}",
                match self.metric {
                    Fig2Metric::SampledFisher => "sampled-fisher",
                    Fig2Metric::ClosedFormFisher => "closed-form-fisher",
                    Fig2Metric::MeasureGram => "measure-gram",
                }
            ),
            match self.estimator {
                UpdateEstimator::ExplicitPinv => "estimator=pinv".to_string(),
                UpdateEstimator::DirectWStar => "estimator=wstar".to_string(),
                UpdateEstimator::TwoTimescale { .. } => "estimator=two-timescale".to_string(),
            },
            format!("subsample={}", self.subsample),
            format!("full_resolution={}", self.full_resolution),
        ];
        if let UpdateEstimator::TwoTimescale { secondary_alpha } = self.estimator {
            lines.push(format!("secondary_alpha={secondary_alpha}"));
        }
        lines
    }
}

/// One recorded point of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub k: u32,
    pub mu: f64,
    pub sigma_sq: f64,
    pub loglik_per_sample: f64,
    pub diverged: bool,
}

/// A full per-k run.
#[derive(Clone, Debug)]
pub struct KRun {
    pub k: u32,
    pub records: Vec<TrajectoryRecord>,
    pub diverged: bool,
    /// First iteration at which the per-sample log-likelihood gap to the
    /// dataset MLE fell below 0.01 nats.
    pub first_passage: Option<usize>,
    pub final_mu: f64,
    pub final_sigma_sq: f64,
    /// Smallest numerical metric rank seen along the run (naturalized runs).
    pub min_metric_rank: Option<usize>,
}

/// Output of one experiment: per-k runs in `k_list` order, plus the dataset
/// MLE they are measured against.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub runs: Vec<KRun>,
    pub mle_mu: f64,
    pub mle_var: f64,
}

/// The per-sample log-likelihood gap threshold used for first-passage
/// bookkeeping.
pub const GAP_THRESHOLD_NATS: f64 = 0.01;

/// Generates the experiment dataset: `n_data` draws from N(true_mu,
/// true_var) on the data stream of `data_seed`.
pub fn generate_dataset(config: &ExperimentConfig) -> Result<GaussianData> {
    GaussianData::sample_gaussian(
        config.n_data,
        config.true_mu,
        config.true_var.sqrt(),
        config.data_seed,
    )
}

struct Recorder {
    records: Vec<TrajectoryRecord>,
    every: usize,
    k: u32,
}

impl Recorder {
    fn new(config: &ExperimentConfig, k: u32) -> Self {
        Recorder {
            records: Vec::new(),
            every: if config.full_resolution { 1 } else { config.subsample.max(1) },
            k,
        }
    }

    fn push(&mut self, iteration: usize, mu: f64, s: f64, data: &GaussianData, diverged: bool, force: bool) {
        if !force && !iteration.is_multiple_of(self.every) {
            return;
        }
        let sigma_sq = sigma_sq_from_power(s, self.k);
        self.records.push(TrajectoryRecord {
            iteration,
            k: self.k,
            mu,
            sigma_sq,
            loglik_per_sample: data.mean_loglik(mu, sigma_sq),
            diverged,
        });
    }
}

/// Plain gradient ascent for each k: the representation-dependence baseline.
pub fn figure1(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.variant != Variant::Fig1 {
        return Err(Error::InvalidArgument(format!(
            "figure1 called with variant {}",
            config.variant.name()
        )));
    }
    config.validate()?;
    let data = generate_dataset(config)?;
    let (mle_mu, mle_var) = data.mle();
    let best = data.mean_loglik(mle_mu, mle_var);

    let runs = run_per_k(&config.k_list, |k| {
        let mut rec = Recorder::new(config, k);
        let mut mu = config.start_mu;
        let mut s = sigma_power_from_sq(config.start_var, k);
        let mut diverged = false;
        let mut first_passage = None;
        rec.push(0, mu, s, &data, false, true);
        for it in 1..=config.iterations {
            match gaussian_loglik_gd_step((mu, s), &data, config.alpha, k) {
                Ok((m, sk)) if sk > 0.0 && m.is_finite() && sk.is_finite() => {
                    mu = m;
                    s = sk;
                }
                _ => {
                    diverged = true;
                    rec.push(it, mu, s, &data, true, true);
                    break;
                }
            }
            if first_passage.is_none() {
                let gap = best - data.mean_loglik(mu, sigma_sq_from_power(s, k));
                if gap < GAP_THRESHOLD_NATS {
                    first_passage = Some(it);
                }
            }
            rec.push(it, mu, s, &data, false, it == config.iterations);
        }
        KRun {
            k,
            final_mu: mu,
            final_sigma_sq: sigma_sq_from_power(s, k),
            records: rec.records,
            diverged,
            first_passage,
            min_metric_rank: None,
        }
    });

    Ok(RunOutput { config: config.clone(), runs, mle_mu, mle_var })
}

/// Runs one closure per k on scoped threads, assembling results in k order.
fn run_per_k<F>(k_list: &[u32], body: F) -> Vec<KRun>
where
    F: Fn(u32) -> KRun + Sync,
{
    std::thread::scope(|scope| {
        let handles: Vec<_> = k_list
            .iter()
            .map(|&k| scope.spawn({ let body = &body; move || body(k) }))
            .collect();
        handles.into_iter().map(|h| h.join().expect("per-k run")).collect()
    })
}

/// The gradient of the chosen f at x, in (μ, σᵏ) coordinates.
fn f_gradient(mode: FunctionMode, x: f64, mu: f64, s: f64, k: u32) -> (f64, f64) {
    let (u, t) = gaussian_score(x, mu, s, k);
    match mode {
        FunctionMode::LogDensity => (u, t),
        FunctionMode::Density => {
            let pdf = gaussian_log_pdf(x, mu, sigma_sq_from_power(s, k)).exp();
            (pdf * u, pdf * t)
        }
    }
}

/// The value of the chosen f at x.
fn f_value(mode: FunctionMode, x: f64, mu: f64, s: f64, k: u32) -> f64 {
    let lp = gaussian_log_pdf(x, mu, sigma_sq_from_power(s, k));
    match mode {
        FunctionMode::LogDensity => lp,
        FunctionMode::Density => lp.exp(),
    }
}

/// Draws the uniforms shared by every parameterization's metric estimate at
/// one step.
fn draw_step_uniforms(samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..samples).map(|_| rng::uniform_open01(rng)).collect()
}

/// Builds the metric for one step of a figure-2 run. Returns the matrix and
/// its numerical rank.
fn fig2_metric(
    config: &ExperimentConfig,
    data: &GaussianData,
    uniforms: &[f64],
    mu: f64,
    s: f64,
    k: u32,
) -> Result<(MetricMatrix, usize)> {
    let sigma_sq = sigma_sq_from_power(s, k);
    let sigma = sigma_sq.sqrt();
    let matrix = match config.metric {
        Fig2Metric::ClosedFormFisher => {
            let kf = k as f64;
            DMatrix::from_diagonal(&DVector::from_vec(vec![
                1.0 / sigma_sq,
                2.0 / (kf * kf * s * s),
            ]))
        }
        Fig2Metric::SampledFisher => {
            let mut g = DMatrix::zeros(2, 2);
            for &u in uniforms {
                let x = match config.fisher_source {
                    FisherSource::Model => mu + sigma * rng::normal_quantile(u),
                    FisherSource::Uniform => mu - 5.0 * sigma + 10.0 * sigma * u,
                };
                let (a, b) = f_gradient(config.function_mode, x, mu, s, k);
                g[(0, 0)] += a * a;
                g[(0, 1)] += a * b;
                g[(1, 1)] += b * b;
            }
            let inv = 1.0 / uniforms.len() as f64;
            g[(0, 0)] *= inv;
            g[(0, 1)] *= inv;
            g[(1, 1)] *= inv;
            g[(1, 0)] = g[(0, 1)];
            g
        }
        Fig2Metric::MeasureGram => {
            // Measure weights α/n on every data atom; closed form via the
            // cached power sums (log-density mode only).
            if config.function_mode != FunctionMode::LogDensity {
                return Err(Error::InvalidArgument(
                    "the measure-weighted Gram metric is only wired for log-density runs".into(),
                ));
            }
            let w = config.alpha / data.n() as f64;
            let (g11, g12, g22) = data.score_gram(mu, s, k);
            DMatrix::from_row_slice(2, 2, &[w * g11, w * g12, w * g12, w * g22])
        }
    };
    let metric = MetricMatrix::new(matrix)?;
    let rank = metric.info().rank;
    Ok((metric, rank))
}

/// One naturalized update (Δμ, Δσᵏ) for a figure-2 run.
fn fig2_update(
    config: &ExperimentConfig,
    data: &GaussianData,
    uniforms: &[f64],
    mu: f64,
    s: f64,
    k: u32,
) -> Result<((f64, f64), usize)> {
    let n = data.n() as f64;
    let w = config.alpha / n;
    // ∫ ∂f dμ: for the log-likelihood ascent measure this is (α/n) Σ score
    // in both function modes (density mode divides atom weights by the pdf
    // values, which cancels against the density gradients).
    let (su, st) = data.score_sum(mu, s, k);
    let integral = DVector::from_vec(vec![w * su, w * st]);

    match config.estimator {
        UpdateEstimator::ExplicitPinv => {
            let (metric, rank) = fig2_metric(config, data, uniforms, mu, s, k)?;
            let d = metric.pinv_apply(&integral);
            Ok(((d[0], d[1]), rank))
        }
        UpdateEstimator::DirectWStar => {
            // Direct estimation: minimum-norm minimizer of
            // Σⱼ (1 − wᵀ scoreⱼ)², solved through an SVD of the design
            // matrix. Uniform measure weights cancel inside the argmin.
            if config.function_mode != FunctionMode::LogDensity {
                return Err(Error::InvalidArgument(
                    "direct estimation is only wired for log-density runs".into(),
                ));
            }
            let rows = data.n();
            let mut a = DMatrix::zeros(rows, 2);
            for (j, &x) in data.samples().iter().enumerate() {
                let (u_s, t_s) = gaussian_score(x, mu, s, k);
                a[(j, 0)] = u_s;
                a[(j, 1)] = t_s;
            }
            let b = DVector::from_element(rows, 1.0);
            let w_star = crate::calculus::least_squares_min_norm(&a, &b)?;
            Ok(((w_star[0], w_star[1]), 2))
        }
        UpdateEstimator::TwoTimescale { .. } => Err(Error::InvalidArgument(
            "the two-timescale estimator carries state and is handled by the run loop".into(),
        )),
    }
}

/// A single-k naturalized fitting session over a fixed dataset, stepping
/// θ = (μ, σᵏ) under the configured metric and estimator. `figure2` and the
/// C bindings both drive their runs through this type.
pub struct GaussianFitSession {
    config: ExperimentConfig,
    data: std::sync::Arc<GaussianData>,
    k: u32,
    mu: f64,
    s: f64,
    metric_rng: ChaCha8Rng,
    tt_w: (f64, f64),
    iteration: usize,
    diverged: bool,
    min_rank: Option<usize>,
}

impl GaussianFitSession {
    pub fn new(
        config: &ExperimentConfig,
        k: u32,
        data: std::sync::Arc<GaussianData>,
    ) -> Result<Self> {
        config.validate()?;
        if k == 0 {
            return Err(Error::InvalidArgument("power k must be ≥ 1".into()));
        }
        Ok(GaussianFitSession {
            config: config.clone(),
            data,
            k,
            mu: config.start_mu,
            s: sigma_power_from_sq(config.start_var, k),
            metric_rng: rng::stream(config.run_seed, StreamLabel::Metric),
            tt_w: (0.0, 0.0),
            iteration: 0,
            diverged: false,
            min_rank: None,
        })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma_sq(&self) -> f64 {
        sigma_sq_from_power(self.s, self.k)
    }

    pub fn sigma_power(&self) -> f64 {
        self.s
    }

    pub fn loglik_per_sample(&self) -> f64 {
        self.data.mean_loglik(self.mu, self.sigma_sq())
    }

    pub fn min_metric_rank(&self) -> Option<usize> {
        self.min_rank
    }

    pub fn data(&self) -> &GaussianData {
        &self.data
    }

    /// Advances one iteration. Returns false once the run has diverged (the
    /// iterate is frozen at the last valid point and the flag is set).
    pub fn step(&mut self) -> bool {
        if self.diverged {
            return false;
        }
        let uniforms = match (self.config.metric, &self.config.estimator) {
            (Fig2Metric::SampledFisher, UpdateEstimator::ExplicitPinv) => {
                draw_step_uniforms(self.config.fisher_samples, &mut self.metric_rng)
            }
            _ => Vec::new(),
        };
        let step = match self.config.estimator {
            UpdateEstimator::TwoTimescale { secondary_alpha } => {
                // One inner stochastic-gradient touch of the tracked
                // unit-step estimate. The parameter iterate moves by α times
                // the estimate: the slow timescale must stay slower than the
                // tracker or the lag destabilizes the run.
                let u = rng::uniform_open01(&mut self.metric_rng);
                let j = ((u * self.data.n() as f64) as usize).min(self.data.n() - 1);
                let (su, st) = gaussian_score(self.data.samples()[j], self.mu, self.s, self.k);
                let resid = 1.0 - (self.tt_w.0 * su + self.tt_w.1 * st);
                let coef = 2.0 * secondary_alpha * resid;
                self.tt_w.0 += coef * su;
                self.tt_w.1 += coef * st;
                Ok((
                    (
                        self.config.alpha * self.tt_w.0,
                        self.config.alpha * self.tt_w.1,
                    ),
                    2,
                ))
            }
            _ => fig2_update(&self.config, &self.data, &uniforms, self.mu, self.s, self.k),
        };
        match step {
            Ok(((dmu, ds), rank)) => {
                self.min_rank = Some(self.min_rank.map_or(rank, |r| r.min(rank)));
                let m = self.mu + dmu;
                let sk = self.s + ds;
                if !(sk > 0.0) || !m.is_finite() || !sk.is_finite() {
                    self.diverged = true;
                    return false;
                }
                self.mu = m;
                self.s = sk;
                self.iteration += 1;
                true
            }
            Err(_) => {
                self.diverged = true;
                false
            }
        }
    }
}

/// Naturalized gradient ascent for each k under the variant's metric spec.
pub fn figure2(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.variant == Variant::Fig1 {
        return Err(Error::InvalidArgument("figure2 called with variant fig1".into()));
    }
    config.validate()?;
    let data = std::sync::Arc::new(generate_dataset(config)?);
    let (mle_mu, mle_var) = data.mle();
    let best = data.mean_loglik(mle_mu, mle_var);

    let runs = run_per_k(&config.k_list, |k| {
        let mut rec = Recorder::new(config, k);
        let mut session =
            GaussianFitSession::new(config, k, data.clone()).expect("validated config");
        let mut first_passage = None;
        rec.push(0, session.mu, session.s, &data, false, true);
        for it in 1..=config.iterations {
            if !session.step() {
                rec.push(it, session.mu, session.s, &data, true, true);
                break;
            }
            if first_passage.is_none() {
                let gap = best - session.loglik_per_sample();
                if gap < GAP_THRESHOLD_NATS {
                    first_passage = Some(it);
                }
            }
            rec.push(it, session.mu, session.s, &data, false, it == config.iterations);
        }
        KRun {
            k,
            final_mu: session.mu,
            final_sigma_sq: session.sigma_sq(),
            records: rec.records,
            diverged: session.diverged,
            first_passage,
            min_metric_rank: session.min_rank,
        }
    });

    Ok(RunOutput { config: config.clone(), runs, mle_mu, mle_var })
}

/// Per-step first-order covariance residuals along a figure-2 run.
///
/// The first k in `k_list` drives the trajectory; at every step each other
/// parameterization is re-based onto the σ²-matched point, both updates are
/// computed with identical estimation draws, and the residual is the
/// normalized difference of first-order Taylor values of the learned
/// function at `probes` fresh inputs. Returns the maximum residual.
pub fn fig2_covariance_residuals(config: &ExperimentConfig, probes: usize) -> Result<f64> {
    config.validate()?;
    if config.k_list.len() < 2 {
        return Err(Error::InvalidArgument("need at least two k values".into()));
    }
    if matches!(config.estimator, UpdateEstimator::TwoTimescale { .. }) {
        return Err(Error::InvalidArgument(
            "the two-timescale estimator only approximates the covariant update; \
             use pinv or wstar for residual measurements"
                .into(),
        ));
    }
    let data = generate_dataset(config)?;
    let k_ref = config.k_list[0];
    let mut metric_rng = rng::stream(config.run_seed, StreamLabel::Metric);
    let mut probe_rng = rng::stream(config.run_seed, StreamLabel::Probe);
    let mut mu = config.start_mu;
    let mut s_ref = sigma_power_from_sq(config.start_var, k_ref);
    let mut worst = 0.0f64;

    for _ in 1..=config.iterations {
        let uniforms = match config.metric {
            Fig2Metric::SampledFisher => draw_step_uniforms(config.fisher_samples, &mut metric_rng),
            _ => Vec::new(),
        };
        let sigma_sq = sigma_sq_from_power(s_ref, k_ref);
        let ((dmu_ref, ds_ref), _) = fig2_update(config, &data, &uniforms, mu, s_ref, k_ref)?;
        let probe_xs: Vec<f64> = (0..probes)
            .map(|_| rng::gaussian(&mut probe_rng, config.true_mu, config.true_var.sqrt()))
            .collect();

        for &k in &config.k_list[1..] {
            let s_k = sigma_power_from_sq(sigma_sq, k);
            let ((dmu_k, ds_k), _) = fig2_update(config, &data, &uniforms, mu, s_k, k)?;
            for &x in &probe_xs {
                let (u_r, t_r) = f_gradient(config.function_mode, x, mu, s_ref, k_ref);
                let tau_ref = f_value(config.function_mode, x, mu, s_ref, k_ref)
                    + u_r * dmu_ref
                    + t_r * ds_ref;
                let (u_k, t_k) = f_gradient(config.function_mode, x, mu, s_k, k);
                let tau_k =
                    f_value(config.function_mode, x, mu, s_k, k) + u_k * dmu_k + t_k * ds_k;
                worst = worst.max((tau_ref - tau_k).abs() / tau_ref.abs().max(1.0));
            }
        }

        mu += dmu_ref;
        s_ref += ds_ref;
        if !(s_ref > 0.0) || !mu.is_finite() {
            return Err(Error::Diverged("figure-2 reference run".into()));
        }
    }
    Ok(worst)
}

/// Writes per-k CSV curves plus the metadata sidecar; returns the paths
/// written. Schema: variant,k,iteration,mu,sigma_sq,loglik_per_sample,diverged.
pub fn write_output(out_dir: &Path, output: &RunOutput) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let label = output.config.variant.name();
    let mut written = Vec::new();
    for run in &output.runs {
        let path = out_dir.join(format!("{label}_k{}.csv", run.k));
        let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(file, "variant,k,iteration,mu,sigma_sq,loglik_per_sample,diverged")?;
        for r in &run.records {
            writeln!(
                file,
                "{},{},{},{},{},{},{}",
                label, r.k, r.iteration, r.mu, r.sigma_sq, r.loglik_per_sample, r.diverged
            )?;
        }
        file.flush()?;
        written.push(path);
    }
    let meta_path = out_dir.join(format!("{label}_meta.txt"));
    let mut meta = std::io::BufWriter::new(std::fs::File::create(&meta_path)?);
    for line in output.config.metadata_lines() {
        writeln!(meta, "{line}")?;
    }
    writeln!(meta, "mle_mu={}", output.mle_mu)?;
    writeln!(meta, "mle_var={}", output.mle_var)?;
    for run in &output.runs {
        writeln!(
            meta,
            "final_k{}={},{} diverged={} first_passage={}",
            run.k,
            run.final_mu,
            run.final_sigma_sq,
            run.diverged,
            run.first_passage.map_or("never".to_string(), |i| i.to_string()),
        )?;
    }
    meta.flush()?;
    written.push(meta_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_fig1() -> ExperimentConfig {
        ExperimentConfig {
            n_data: 2_000,
            iterations: 4_000,
            alpha: 0.001 / 2_000.0,
            ..ExperimentConfig::for_variant(Variant::Fig1)
        }
    }

    fn small_fig2(variant: Variant) -> ExperimentConfig {
        ExperimentConfig {
            n_data: 2_000,
            iterations: 400,
            ..ExperimentConfig::for_variant(variant)
        }
    }

    #[test]
    fn dataset_is_deterministic_in_the_seed() {
        let cfg = small_fig1();
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a.samples(), b.samples());
        let mut cfg2 = cfg.clone();
        cfg2.data_seed += 1;
        let c = generate_dataset(&cfg2).unwrap();
        assert_ne!(a.samples()[0], c.samples()[0]);
    }

    #[test]
    fn figure1_reruns_are_bit_identical() {
        let cfg = small_fig1();
        let a = figure1(&cfg).unwrap();
        let b = figure1(&cfg).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.records, rb.records);
        }
    }

    #[test]
    fn figure1_smaller_powers_equilibrate_no_later() {
        // First-passage iterations to a 0.01-nat gap are nondecreasing in k.
        let out = figure1(&small_fig1()).unwrap();
        let passages: Vec<Option<usize>> = out.runs.iter().map(|r| r.first_passage).collect();
        for w in passages.windows(2) {
            let a = w[0].map_or(usize::MAX, |v| v);
            let b = w[1].map_or(usize::MAX, |v| v);
            assert!(a <= b, "first passages not monotone: {passages:?}");
        }
    }

    #[test]
    fn figure2a_trajectories_coincide_across_k() {
        // With matched seeds the per-k trajectories agree pointwise in
        // (μ, σ²) at every recorded iteration, not just at the endpoint.
        // The full-size configuration meets 1e-3 (asserted in the
        // acceptance suite); this shrunken dataset carries proportionally
        // more metric-sampling noise, hence the doubled bound.
        let out = figure2(&small_fig2(Variant::Fig2a)).unwrap();
        let reference = &out.runs[0];
        for run in &out.runs[1..] {
            assert!(!run.diverged);
            assert_eq!(run.records.len(), reference.records.len());
            for (r, r0) in run.records.iter().zip(&reference.records) {
                assert_eq!(r.iteration, r0.iteration);
                assert!(
                    (r.mu - r0.mu).abs() < 2e-3,
                    "iteration {}: mu {} vs {}",
                    r.iteration,
                    r.mu,
                    r0.mu
                );
                assert!(
                    (r.sigma_sq - r0.sigma_sq).abs() < 2e-3,
                    "iteration {}: sigma_sq {} vs {}",
                    r.iteration,
                    r.sigma_sq,
                    r0.sigma_sq
                );
            }
        }
    }

    #[test]
    fn figure2a_loglik_is_monotone_between_checkpoints() {
        // At the acceptance step size the naturalized log-density runs climb
        // the likelihood monotonically between checkpoints.
        for metric in [Fig2Metric::SampledFisher, Fig2Metric::ClosedFormFisher] {
            let mut cfg = small_fig2(Variant::Fig2a);
            cfg.metric = metric;
            let out = figure2(&cfg).unwrap();
            for run in &out.runs {
                let logliks: Vec<f64> =
                    run.records.iter().map(|r| r.loglik_per_sample).collect();
                for w in logliks.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-9,
                        "k={}: log-likelihood decreased {} → {}",
                        run.k,
                        w[0],
                        w[1]
                    );
                }
            }
        }
    }

    #[test]
    fn density_mode_variants_stay_stable_at_their_defaults() {
        // The density-metric variants are not likelihood-preconditioned, so
        // monotonicity is not implied; they must still converge near the MLE
        // without diverging for every k.
        for variant in [Variant::Fig2b, Variant::Fig2c, Variant::Fig2e] {
            let out = figure2(&small_fig2(variant)).unwrap();
            for run in &out.runs {
                assert!(!run.diverged, "{} k={} diverged", variant.name(), run.k);
                assert!(
                    (run.final_mu - out.mle_mu).abs() < 0.3,
                    "{} k={}: mu {} vs mle {}",
                    variant.name(),
                    run.k,
                    run.final_mu,
                    out.mle_mu
                );
                assert!(
                    (run.final_sigma_sq - out.mle_var).abs() < 0.9,
                    "{} k={}: sigma_sq {} vs mle {}",
                    variant.name(),
                    run.k,
                    run.final_sigma_sq,
                    out.mle_var
                );
            }
        }
    }

    #[test]
    fn direct_estimation_matches_the_explicit_gram_path() {
        let mut explicit = small_fig2(Variant::Fig2a);
        explicit.iterations = 60;
        explicit.metric = Fig2Metric::MeasureGram;
        explicit.estimator = UpdateEstimator::ExplicitPinv;
        let mut direct = small_fig2(Variant::Fig2f);
        direct.iterations = 60;
        let a = figure2(&explicit).unwrap();
        let b = figure2(&direct).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert!((ra.final_mu - rb.final_mu).abs() < 1e-8);
            assert!((ra.final_sigma_sq - rb.final_sigma_sq).abs() < 1e-8);
        }
    }

    #[test]
    fn covariance_residuals_shrink_with_more_fisher_samples() {
        // Five-sample estimation (the d-variant) leaves a larger per-step
        // residual than the thousand-sample a-variant setup, and enlarging
        // the sample count closes the gap. Checked in the density mode the
        // small-sample variants use.
        let mut few = small_fig2(Variant::Fig2d);
        few.iterations = 50;
        assert_eq!(few.fisher_samples, 5);
        let mut many = few.clone();
        many.fisher_samples = 500;
        let r_few = fig2_covariance_residuals(&few, 4).unwrap();
        let r_many = fig2_covariance_residuals(&many, 4).unwrap();
        assert!(
            r_many <= r_few,
            "residual with 500 samples ({r_many}) exceeds residual with 5 ({r_few})"
        );
    }

    #[test]
    fn csv_output_is_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_fig1();
        cfg.iterations = 300;
        let out = figure1(&cfg).unwrap();
        let paths = write_output(dir.path(), &out).unwrap();
        // One CSV per k plus the metadata sidecar.
        assert_eq!(paths.len(), cfg.k_list.len() + 1);
        let first = std::fs::read_to_string(&paths[0]).unwrap();
        let mut lines = first.lines();
        assert_eq!(
            lines.next().unwrap(),
            "variant,k,iteration,mu,sigma_sq,loglik_per_sample,diverged"
        );
        let row = lines.next().unwrap();
        assert!(row.starts_with("fig1,1,0,2,4,"));
        let meta = std::fs::read_to_string(paths.last().unwrap()).unwrap();
        assert!(meta.contains("variant=fig1"));
        assert!(meta.contains("alpha="));
    }
}
