//! The naturalization transform.
//!
//! Given a rule lᵢ = l′ᵢ + ∫ ∂f/∂βᵢ dμᵢ and a metric spec, the naturalized
//! rule replaces every gradient term with its metric-pseudoinverse image:
//!
//!   l̃ᵢ = l′ᵢ + ∫ G(x)⁺ ∂f/∂βᵢ(x, βᵢ) dμᵢ(x).
//!
//! Under congruent reparameterization the metric transforms as
//! G(f) = ∇ψᵀ G(g) ∇ψ, which makes the transformed update first-order
//! covariant wherever G(g) keeps full rank.
//!
//! Two alternative estimators of the same update ship alongside the explicit
//! pseudoinverse path: the direct least-squares estimator (compatible
//! function approximation, valid when G is the μ-weighted Gram matrix or a
//! per-atom outer product), and a two-timescale stochastic approximation of
//! that least-squares problem whose inner update costs O(n) per step. The
//! two-timescale variant only *approximates* a first-order covariant rule,
//! since it tracks w★ instead of solving for it.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::calculus::{least_squares_min_norm, MetricMatrix};
use crate::core::{
    self, History, LearningRule, ParamFunction, ParamVector, SignedMeasure, StepDiagnostics,
    StepOutcome, Trajectory,
};
use crate::metric::{resolve_metric, MetricSpec, ResolvedMetric};
use crate::rng::{self, StreamLabel};
use crate::{Error, Result};

/// How the naturalized update is computed each step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimationMode {
    /// Build G, pseudoinvert, and apply: the reference path.
    ExplicitPinv,
    /// Solve the compatible-approximation least squares for w★ and step by
    /// it directly, never forming G.
    DirectWStar,
    /// Track w★ with one O(n) stochastic-gradient update per step.
    TwoTimescale { secondary_alpha: f64 },
}

/// A base rule bundled with the metric spec and estimator used to
/// naturalize it.
#[derive(Clone)]
pub struct NaturalizedRule {
    pub base: Arc<dyn LearningRule>,
    pub spec: MetricSpec,
    pub mode: EstimationMode,
}

/// Naturalizes a rule with the explicit-pseudoinverse estimator.
pub fn naturalize(rule: Arc<dyn LearningRule>, spec: MetricSpec) -> NaturalizedRule {
    NaturalizedRule {
        base: rule,
        spec,
        mode: EstimationMode::ExplicitPinv,
    }
}

impl NaturalizedRule {
    pub fn with_mode(mut self, mode: EstimationMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn label(&self) -> String {
        format!("naturalized({})", self.base.label())
    }
}

/// Mutable state a run threads through its steps (only the two-timescale
/// estimator carries any).
#[derive(Clone, Debug, Default)]
pub struct RunState {
    pub tt_w: Option<DVector<f64>>,
}

/// Minimum-norm w★ ∈ argmin_w Σ atoms (x, wt) of wt (1 − wᵀ∇f(x,β))².
///
/// With nonnegative weights this is solved as an ordinary least-squares
/// problem on the √wt-scaled design matrix; signed measures fall back to the
/// stationarity system (Σ wt ∇f ∇fᵀ) w = Σ wt ∇f, which must stay positive
/// semidefinite for the objective to have a minimizer.
pub fn direct_w_star(
    f: &dyn ParamFunction,
    beta: &ParamVector,
    mu: &SignedMeasure,
) -> Result<DVector<f64>> {
    core::ensure_scalar_output(f)?;
    if mu.is_empty() || mu.atoms().iter().all(|(_, w)| *w == 0.0) {
        return Err(Error::InvalidArgument(
            "direct estimation needs at least one nonzero measure weight".into(),
        ));
    }
    let n = f.param_dim();
    let grads: Vec<(DVector<f64>, f64)> = mu
        .atoms()
        .iter()
        .map(|(x, w)| (f.grad(x, beta), *w))
        .collect();
    if grads.iter().all(|(_, w)| *w >= 0.0) {
        let rows: Vec<_> = grads
            .iter()
            .map(|(v, w)| (w.sqrt() * v).transpose())
            .collect();
        let a = DMatrix::from_rows(&rows);
        let b = DVector::from_iterator(grads.len(), grads.iter().map(|(_, w)| w.sqrt()));
        least_squares_min_norm(&a, &b)
    } else {
        let gram =
            MetricMatrix::from_weighted_outer_products(n, grads.iter().map(|(v, w)| (v, *w)))?;
        let mut rhs = DVector::zeros(n);
        for (v, w) in &grads {
            rhs.axpy(*w, v, 1.0);
        }
        least_squares_min_norm(gram.entries(), &rhs)
    }
}

/// One stochastic-gradient update of the two-timescale w-estimate, touching
/// O(n) numbers. Returns the number of n-proportional flops performed, for
/// the cost probes.
fn two_timescale_update(
    f: &dyn ParamFunction,
    beta: &ParamVector,
    mu: &SignedMeasure,
    secondary_alpha: f64,
    w: &mut DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> u64 {
    if mu.is_empty() {
        return 0;
    }
    let count = mu.atoms().len();
    let idx = ((rng::uniform_open01(rng) * count as f64) as usize).min(count - 1);
    let (x, wt) = &mu.atoms()[idx];
    if *wt == 0.0 {
        return 0;
    }
    let v = f.grad(x, beta);
    let n = v.len() as u64;
    let resid = 1.0 - w.dot(&v); // 2n flops
    let scale = 2.0 * secondary_alpha * count as f64 * wt * resid;
    w.axpy(scale, &v, 1.0); // 2n flops
    4 * n
}

/// Trace of a standalone two-timescale estimation run.
#[derive(Clone, Debug)]
pub struct TwoTimescaleTrace {
    pub w_history: Vec<DVector<f64>>,
    pub final_w: DVector<f64>,
    pub flops_per_update: Vec<u64>,
    pub diverged: bool,
}

/// Runs the two-timescale estimator against externally supplied base-point
/// and measure streams.
pub fn two_timescale_w(
    f: &dyn ParamFunction,
    beta_stream: impl Fn(usize) -> ParamVector,
    mu_stream: impl Fn(usize, &mut ChaCha8Rng) -> SignedMeasure,
    secondary_alpha: f64,
    iterations: usize,
    rng_seed: u64,
) -> Result<TwoTimescaleTrace> {
    if !(secondary_alpha > 0.0) {
        return Err(Error::InvalidArgument(
            "secondary step size must be positive".into(),
        ));
    }
    let mut rng = rng::stream(rng_seed, StreamLabel::Metric);
    let mut w = DVector::zeros(f.param_dim());
    let mut w_history = Vec::with_capacity(iterations);
    let mut flops = Vec::with_capacity(iterations);
    let mut diverged = false;
    for i in 1..=iterations {
        let beta = beta_stream(i);
        let mu = mu_stream(i, &mut rng);
        flops.push(two_timescale_update(
            f,
            &beta,
            &mu,
            secondary_alpha,
            &mut w,
            &mut rng,
        ));
        if !w.iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
        w_history.push(w.clone());
    }
    Ok(TwoTimescaleTrace {
        final_w: w,
        w_history,
        flops_per_update: flops,
        diverged,
    })
}

/// One naturalized step from the given history.
pub fn naturalized_step_once(
    nrule: &NaturalizedRule,
    f: &dyn ParamFunction,
    history: &History,
    rng_rule: &mut ChaCha8Rng,
    rng_metric: &mut ChaCha8Rng,
    state: &mut RunState,
) -> Result<StepOutcome> {
    let i = history.len_computed() + 1;
    let (beta, l_prime) = nrule.base.base_step(i, history, rng_rule);
    let mu = nrule.base.measure(i, f, history, rng_rule);
    let n = f.param_dim();
    let total_weight = mu.total_weight();

    let (direction, metric_condition, metric_rank) = match nrule.mode {
        EstimationMode::ExplicitPinv => {
            match resolve_metric(&nrule.spec, i, f, &beta, &mu, rng_metric)? {
                ResolvedMetric::Shared(g) => {
                    let mut integral = DVector::zeros(n);
                    for (x, w) in mu.atoms() {
                        integral.axpy(*w, &f.grad(x, &beta), 1.0);
                    }
                    let info = g.info();
                    (g.pinv_apply(&integral), Some(info.condition), Some(info.rank))
                }
                ResolvedMetric::PerAtom => {
                    let mut dir = DVector::zeros(n);
                    let mut worst_condition = 1.0f64;
                    let mut min_rank = n;
                    for (x, w) in mu.atoms() {
                        let v = f.grad(x, &beta);
                        let g = MetricMatrix::from_weighted_outer_products(n, [(&v, 1.0)])?;
                        let info = g.info();
                        worst_condition = worst_condition.max(info.condition);
                        min_rank = min_rank.min(info.rank);
                        dir.axpy(*w, &g.pinv_apply(&v), 1.0);
                    }
                    (dir, Some(worst_condition), Some(min_rank))
                }
            }
        }
        EstimationMode::DirectWStar => {
            let dir = if mu.is_empty() || mu.atoms().iter().all(|(_, w)| *w == 0.0) {
                // The least-squares objective is identically zero; the
                // minimum-norm minimizer is the zero step.
                DVector::zeros(n)
            } else {
                direct_w_star(f, &beta, &mu)?
            };
            (dir, None, None)
        }
        EstimationMode::TwoTimescale { secondary_alpha } => {
            let w = state.tt_w.get_or_insert_with(|| DVector::zeros(n));
            two_timescale_update(f, &beta, &mu, secondary_alpha, w, rng_metric);
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged("two-timescale w estimate".into()));
            }
            (w.clone(), None, None)
        }
    };

    let candidate = l_prime.as_vector() + &direction;
    Ok(StepOutcome {
        beta,
        l_prime,
        measure: mu,
        direction,
        candidate,
        diagnostics: StepDiagnostics {
            metric_condition,
            metric_rank,
            measure_total_weight: total_weight,
        },
    })
}

/// Runs a naturalized rule. Rule randomness and metric-estimation randomness
/// come from separate labeled streams of the same seed, so congruent runs
/// sharing a seed consume identical draws on both.
pub fn run_naturalized(
    nrule: &NaturalizedRule,
    f: &dyn ParamFunction,
    theta0: &[ParamVector],
    iterations: usize,
    rng_seed: u64,
) -> Result<Trajectory> {
    core::ensure_scalar_output(f)?;
    let mut rng_rule = rng::stream(rng_seed, StreamLabel::Rule);
    let mut rng_metric = rng::stream(rng_seed, StreamLabel::Metric);
    let mut state = RunState::default();
    core::run_with(
        theta0,
        nrule.base.iota(),
        iterations,
        |t| f.in_domain(t),
        |history| {
            naturalized_step_once(nrule, f, history, &mut rng_rule, &mut rng_metric, &mut state)
        },
    )
}

/// A plain or naturalized rule behind one stepping interface, so checkers
/// can treat both uniformly.
#[derive(Clone)]
pub enum RunnableRule {
    Plain(Arc<dyn LearningRule>),
    Naturalized(Arc<NaturalizedRule>),
}

impl RunnableRule {
    pub fn iota(&self) -> usize {
        match self {
            RunnableRule::Plain(r) => r.iota(),
            RunnableRule::Naturalized(r) => r.base.iota(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            RunnableRule::Plain(r) => r.label().to_string(),
            RunnableRule::Naturalized(r) => r.label(),
        }
    }

    pub fn step(
        &self,
        f: &dyn ParamFunction,
        history: &History,
        rng_rule: &mut ChaCha8Rng,
        rng_metric: &mut ChaCha8Rng,
        state: &mut RunState,
    ) -> Result<StepOutcome> {
        match self {
            RunnableRule::Plain(r) => Ok(core::plain_step_once(
                r.as_ref(),
                f,
                history,
                rng_rule,
            )),
            RunnableRule::Naturalized(r) => {
                naturalized_step_once(r, f, history, rng_rule, rng_metric, state)
            }
        }
    }

    pub fn run(
        &self,
        f: &dyn ParamFunction,
        theta0: &[ParamVector],
        iterations: usize,
        rng_seed: u64,
    ) -> Result<Trajectory> {
        match self {
            RunnableRule::Plain(r) => core::run_rule(r.as_ref(), f, theta0, iterations, rng_seed),
            RunnableRule::Naturalized(r) => run_naturalized(r, f, theta0, iterations, rng_seed),
        }
    }
}
