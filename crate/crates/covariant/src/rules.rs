//! Concrete learning rules in base-point + gradient-integral form: batch
//! Gaussian log-likelihood gradient ascent in the (μ, σᵏ) family, stochastic
//! gradient descent on squared error, Nesterov accelerated gradient, and a
//! minimal TD(0) rule over a fixed Markov reward process.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::core::{
    History, InputPoint, InputSpace, LearningRule, ParamFunction, ParamVector, SignedMeasure,
};
use crate::rng::{self, StreamLabel};
use crate::{Error, Result};

pub mod pairs;

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_7;

/// σ² from σᵏ, using exact arithmetic for the small k the experiments use.
pub fn sigma_sq_from_power(sigma_k: f64, k: u32) -> f64 {
    match k {
        1 => sigma_k * sigma_k,
        2 => sigma_k,
        4 => sigma_k.sqrt(),
        _ => sigma_k.powf(2.0 / k as f64),
    }
}

/// σᵏ from σ².
pub fn sigma_power_from_sq(sigma_sq: f64, k: u32) -> f64 {
    match k {
        1 => sigma_sq.sqrt(),
        2 => sigma_sq,
        3 => sigma_sq * sigma_sq.sqrt(),
        4 => sigma_sq * sigma_sq,
        _ => sigma_sq.powf(k as f64 / 2.0),
    }
}

/// log N(x; μ, σ²).
pub fn gaussian_log_pdf(x: f64, mu: f64, sigma_sq: f64) -> f64 {
    let d = x - mu;
    -HALF_LN_TWO_PI - 0.5 * sigma_sq.ln() - d * d / (2.0 * sigma_sq)
}

/// Per-sample score ∇ log N(x; μ, σ²) in (μ, σᵏ) coordinates:
/// (d/σ², (1/k)(−1/σᵏ + d²/(σᵏσ²))).
pub fn gaussian_score(x: f64, mu: f64, sigma_k: f64, k: u32) -> (f64, f64) {
    let sigma_sq = sigma_sq_from_power(sigma_k, k);
    let d = x - mu;
    let u = d / sigma_sq;
    let b = 1.0 / (sigma_k * sigma_sq); // = (σᵏ)^(−(k+2)/k)
    let t = (b * d * d - 1.0 / sigma_k) / k as f64;
    (u, t)
}

/// Whether the function is the log-density or the raw density of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DensityMode {
    LogDensity,
    Density,
}

/// The normal family parameterized by (μ, σᵏ) for a fixed power k.
///
/// With `DensityMode::LogDensity` the function value is log N(x; μ, σ²) and
/// the gradient is the score in (μ, σᵏ) coordinates; with `Density` it is
/// the pdf and its gradient. The same family under different k (or different
/// mode-consistent submersions) forms the congruent pairs used throughout
/// the test suites.
#[derive(Clone, Debug)]
pub struct GaussianModel {
    k: u32,
    mode: DensityMode,
    input_space: InputSpace,
    label: String,
}

impl GaussianModel {
    pub fn new(k: u32, mode: DensityMode) -> Self {
        assert!(k >= 1, "power k must be ≥ 1");
        let label = match mode {
            DensityMode::LogDensity => format!("gaussian-logpdf-k{k}"),
            DensityMode::Density => format!("gaussian-pdf-k{k}"),
        };
        GaussianModel {
            k,
            mode,
            // Probe inputs follow the data distribution of the experiments.
            input_space: InputSpace::Gaussian { center: 3.0, scale: 3.0 },
            label,
        }
    }

    pub fn log_density(k: u32) -> Self {
        Self::new(k, DensityMode::LogDensity)
    }

    pub fn density(k: u32) -> Self {
        Self::new(k, DensityMode::Density)
    }

    pub fn with_input_space(mut self, space: InputSpace) -> Self {
        self.input_space = space;
        self
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn mode(&self) -> DensityMode {
        self.mode
    }

    fn split(&self, theta: &ParamVector) -> (f64, f64) {
        (theta[0], theta[1])
    }
}

impl ParamFunction for GaussianModel {
    fn param_dim(&self) -> usize {
        2
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn input_space(&self) -> InputSpace {
        self.input_space.clone()
    }

    fn eval(&self, x: &InputPoint, theta: &ParamVector) -> f64 {
        let (mu, sigma_k) = self.split(theta);
        if sigma_k <= 0.0 {
            return f64::NAN;
        }
        let sigma_sq = sigma_sq_from_power(sigma_k, self.k);
        let lp = gaussian_log_pdf(x.as_scalar(), mu, sigma_sq);
        match self.mode {
            DensityMode::LogDensity => lp,
            DensityMode::Density => lp.exp(),
        }
    }

    fn grad(&self, x: &InputPoint, theta: &ParamVector) -> DVector<f64> {
        let (mu, sigma_k) = self.split(theta);
        if sigma_k <= 0.0 {
            return DVector::from_element(2, f64::NAN);
        }
        let (u, t) = gaussian_score(x.as_scalar(), mu, sigma_k, self.k);
        match self.mode {
            DensityMode::LogDensity => DVector::from_vec(vec![u, t]),
            DensityMode::Density => {
                let sigma_sq = sigma_sq_from_power(sigma_k, self.k);
                let pdf = gaussian_log_pdf(x.as_scalar(), mu, sigma_sq).exp();
                DVector::from_vec(vec![pdf * u, pdf * t])
            }
        }
    }

    fn in_domain(&self, theta: &ParamVector) -> bool {
        theta[1] > 0.0
    }

    fn sample_theta(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mu = rng::uniform_in(rng, -2.0, 4.0);
        let sigma = rng::uniform_in(rng, 0.6, 2.5);
        ParamVector::of(&[mu, sigma.powi(self.k as i32)])
    }

    fn sample_input(&self, beta: &ParamVector, rng: &mut ChaCha8Rng) -> Option<InputPoint> {
        let (mu, sigma_k) = self.split(beta);
        if sigma_k <= 0.0 {
            return None;
        }
        let sigma = sigma_sq_from_power(sigma_k, self.k).sqrt();
        Some(InputPoint::scalar(rng::gaussian(rng, mu, sigma)))
    }

    fn location_scale(&self, beta: &ParamVector) -> Option<(f64, f64)> {
        let (mu, sigma_k) = self.split(beta);
        if sigma_k <= 0.0 {
            return None;
        }
        Some((mu, sigma_sq_from_power(sigma_k, self.k).sqrt()))
    }

    fn fisher_closed_form(&self, beta: &ParamVector) -> Option<DMatrix<f64>> {
        if self.mode != DensityMode::LogDensity {
            return None;
        }
        let (_, sigma_k) = self.split(beta);
        if sigma_k <= 0.0 {
            return None;
        }
        let sigma_sq = sigma_sq_from_power(sigma_k, self.k);
        let kf = self.k as f64;
        Some(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0 / sigma_sq,
            2.0 / (kf * kf * sigma_k * sigma_k),
        ])))
    }
}

/// log N(x; θ, 1): the unit-variance Gaussian parameterized by its mean
/// only (n = 1). Its Fisher information is identically 1.
#[derive(Clone, Debug)]
pub struct GaussianMeanModel;

impl ParamFunction for GaussianMeanModel {
    fn param_dim(&self) -> usize {
        1
    }
    fn label(&self) -> &str {
        "gaussian-logpdf-mean"
    }
    fn input_space(&self) -> InputSpace {
        InputSpace::Gaussian { center: 0.0, scale: 1.5 }
    }
    fn eval(&self, x: &InputPoint, theta: &ParamVector) -> f64 {
        let d = x.as_scalar() - theta[0];
        -HALF_LN_TWO_PI - 0.5 * d * d
    }
    fn grad(&self, x: &InputPoint, theta: &ParamVector) -> DVector<f64> {
        DVector::from_element(1, x.as_scalar() - theta[0])
    }
    fn sample_input(&self, beta: &ParamVector, rng: &mut ChaCha8Rng) -> Option<InputPoint> {
        Some(InputPoint::scalar(rng::gaussian(rng, beta[0], 1.0)))
    }
    fn location_scale(&self, beta: &ParamVector) -> Option<(f64, f64)> {
        Some((beta[0], 1.0))
    }
    fn fisher_closed_form(&self, _beta: &ParamVector) -> Option<DMatrix<f64>> {
        Some(DMatrix::from_element(1, 1, 1.0))
    }
}

/// A dataset of scalar samples with cached raw power sums, so batch score
/// sums and score Gram matrices cost O(1) per step.
#[derive(Clone, Debug)]
pub struct GaussianData {
    samples: Vec<f64>,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
}

impl GaussianData {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("dataset must be non-empty".into()));
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "dataset sample", index });
        }
        let (mut s1, mut s2, mut s3, mut s4) = (0.0, 0.0, 0.0, 0.0);
        for &x in &samples {
            s1 += x;
            let xx = x * x;
            s2 += xx;
            s3 += xx * x;
            s4 += xx * xx;
        }
        Ok(GaussianData { samples, s1, s2, s3, s4 })
    }

    /// n samples from N(mu, sigma²) via the inverse-CDF transform on the
    /// data stream of `seed`.
    pub fn sample_gaussian(n: usize, mu: f64, sigma: f64, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, StreamLabel::Data);
        let samples = (0..n).map(|_| rng::gaussian(&mut rng, mu, sigma)).collect();
        Self::from_samples(samples)
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Σ(x−μ) and Σ(x−μ)² via the cached raw sums.
    pub fn centered_sums(&self, mu: f64) -> (f64, f64) {
        let n = self.n() as f64;
        let c1 = self.s1 - n * mu;
        let c2 = self.s2 - 2.0 * mu * self.s1 + n * mu * mu;
        (c1, c2)
    }

    /// Σ(x−μ)^p for p = 1..4.
    pub fn centered_sums4(&self, mu: f64) -> (f64, f64, f64, f64) {
        let n = self.n() as f64;
        let (c1, c2) = self.centered_sums(mu);
        let mu2 = mu * mu;
        let c3 = self.s3 - 3.0 * mu * self.s2 + 3.0 * mu2 * self.s1 - n * mu2 * mu;
        let c4 = self.s4 - 4.0 * mu * self.s3 + 6.0 * mu2 * self.s2 - 4.0 * mu2 * mu * self.s1
            + n * mu2 * mu2;
        (c1, c2, c3, c4)
    }

    /// Maximum-likelihood estimate (μ̂, σ̂²): sample mean and mean squared
    /// deviation.
    pub fn mle(&self) -> (f64, f64) {
        let n = self.n() as f64;
        let mu = self.s1 / n;
        let var = self.s2 / n - mu * mu;
        (mu, var)
    }

    /// Mean log-likelihood of N(mu, sigma_sq) over the dataset.
    pub fn mean_loglik(&self, mu: f64, sigma_sq: f64) -> f64 {
        let n = self.n() as f64;
        let (_, c2) = self.centered_sums(mu);
        -HALF_LN_TWO_PI - 0.5 * sigma_sq.ln() - c2 / (2.0 * n * sigma_sq)
    }

    /// Batch score sum Σⱼ ∇ log N(xⱼ; μ, σ²) in (μ, σᵏ) coordinates.
    pub fn score_sum(&self, mu: f64, sigma_k: f64, k: u32) -> (f64, f64) {
        let n = self.n() as f64;
        let sigma_sq = sigma_sq_from_power(sigma_k, k);
        let (c1, c2) = self.centered_sums(mu);
        let b = 1.0 / (sigma_k * sigma_sq);
        let kf = k as f64;
        (c1 / sigma_sq, (b * c2 - n / sigma_k) / kf)
    }

    /// Entries of the score Gram matrix Σⱼ sⱼ sⱼᵀ (unweighted) in (μ, σᵏ)
    /// coordinates, where sⱼ is the per-sample score.
    pub fn score_gram(&self, mu: f64, sigma_k: f64, k: u32) -> (f64, f64, f64) {
        let n = self.n() as f64;
        let sigma_sq = sigma_sq_from_power(sigma_k, k);
        let (c1, c2, c3, c4) = self.centered_sums4(mu);
        let a = 1.0 / sigma_sq;
        let bk = 1.0 / (sigma_k * sigma_sq * k as f64);
        let c = 1.0 / (k as f64 * sigma_k);
        let g11 = a * a * c2;
        let g12 = a * (bk * c3 - c * c1);
        let g22 = bk * bk * c4 - 2.0 * bk * c * c2 + n * c * c;
        (g11, g12, g22)
    }
}

/// One batch gradient-ascent step on the dataset log-likelihood in (μ, σᵏ):
///
/// μ′ = μ + α σ⁻² Σ(xⱼ−μ),
/// σᵏ′ = σᵏ − αn/(kσᵏ) + (α/k)(σᵏ)^(−(k+2)/k) Σ(xⱼ−μ)².
pub fn gaussian_loglik_gd_step(
    theta: (f64, f64),
    data: &GaussianData,
    alpha: f64,
    k: u32,
) -> Result<(f64, f64)> {
    let (mu, sigma_k) = theta;
    if sigma_k <= 0.0 || !sigma_k.is_finite() || !mu.is_finite() {
        return Err(Error::Diverged(format!(
            "gaussian step left the domain: mu = {mu}, sigma^k = {sigma_k}"
        )));
    }
    let n = data.n() as f64;
    let sigma_sq = sigma_sq_from_power(sigma_k, k);
    let (c1, c2) = data.centered_sums(mu);
    let kf = k as f64;
    let b = 1.0 / (sigma_k * sigma_sq);
    let mu_next = mu + alpha / sigma_sq * c1;
    let sk_next = sigma_k - alpha * n / (kf * sigma_k) + alpha / kf * b * c2;
    Ok((mu_next, sk_next))
}

/// Positive step sizes per iteration.
#[derive(Clone, Copy, Debug)]
pub enum StepSchedule {
    Constant(f64),
    /// αᵢ = numerator / max(i, 1).
    Harmonic { numerator: f64 },
}

impl StepSchedule {
    pub fn constant(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step size must be positive, got {alpha}"
            )));
        }
        Ok(StepSchedule::Constant(alpha))
    }

    pub fn at(&self, i: usize) -> f64 {
        match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::Harmonic { numerator } => numerator / (i.max(1) as f64),
        }
    }
}

/// How the batch measure distributes the step size over the dataset atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchScaling {
    /// Weight α per atom: the raw sum-gradient convention.
    Sum,
    /// Weight α/n per atom: the mean-gradient convention used by the
    /// naturalized experiment runs.
    Mean,
}

/// Batch Gaussian log-likelihood gradient ascent as a decomposed rule:
/// βᵢ = l′ᵢ = θᵢ₋₁ and μᵢ puts weight on every dataset point.
pub struct GaussianBatchRule {
    data: Arc<GaussianData>,
    schedule: StepSchedule,
    scaling: BatchScaling,
}

impl GaussianBatchRule {
    pub fn new(data: Arc<GaussianData>, schedule: StepSchedule, scaling: BatchScaling) -> Self {
        GaussianBatchRule { data, schedule, scaling }
    }

    fn atom_weight(&self, i: usize) -> f64 {
        let alpha = self.schedule.at(i);
        match self.scaling {
            BatchScaling::Sum => alpha,
            BatchScaling::Mean => alpha / self.data.n() as f64,
        }
    }
}

impl LearningRule for GaussianBatchRule {
    fn label(&self) -> &str {
        "gaussian-batch-loglik-gd"
    }

    fn base_step(
        &self,
        i: usize,
        history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> (ParamVector, ParamVector) {
        let beta = history.get(i as i64 - 1).clone();
        (beta.clone(), beta)
    }

    fn measure(
        &self,
        i: usize,
        _f: &dyn ParamFunction,
        _history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> SignedMeasure {
        let w = self.atom_weight(i);
        SignedMeasure::new(
            self.data
                .samples()
                .iter()
                .map(|&x| (InputPoint::scalar(x), w))
                .collect(),
        )
        .expect("finite batch weights")
    }
}

/// Gradient ascent on the sample sum Σⱼ f(xⱼ, θ) over a fixed point set:
/// βᵢ = l′ᵢ = θᵢ₋₁ and μᵢ puts weight αᵢ on every point.
pub struct BatchAscentRule {
    points: Vec<InputPoint>,
    schedule: StepSchedule,
}

impl BatchAscentRule {
    pub fn new(points: Vec<InputPoint>, schedule: StepSchedule) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("batch needs at least one point".into()));
        }
        Ok(BatchAscentRule { points, schedule })
    }
}

impl LearningRule for BatchAscentRule {
    fn label(&self) -> &str {
        "batch-sample-sum-ascent"
    }

    fn base_step(
        &self,
        i: usize,
        history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> (ParamVector, ParamVector) {
        let beta = history.get(i as i64 - 1).clone();
        (beta.clone(), beta)
    }

    fn measure(
        &self,
        i: usize,
        _f: &dyn ParamFunction,
        _history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> SignedMeasure {
        let alpha = self.schedule.at(i);
        SignedMeasure::new(self.points.iter().map(|x| (x.clone(), alpha)).collect())
            .expect("finite batch weights")
    }
}

/// One stochastic-gradient step on squared error: θ′ = θ + α (f*(x) − f(x,θ)) ∇f(x,θ).
pub fn sgd_squared_error_step(
    f: &dyn ParamFunction,
    f_star: &dyn Fn(&InputPoint) -> f64,
    theta: &ParamVector,
    x: &InputPoint,
    alpha: f64,
) -> ParamVector {
    let delta = f_star(x) - f.eval(x, theta);
    let next = theta.as_vector() + alpha * delta * f.grad(x, theta);
    ParamVector::wrap(next)
}

/// Squared-error SGD as a decomposed rule: one atom (Xᵢ, α δᵢ) per step,
/// with the error term δ built from function values only.
pub struct SgdSquaredErrorRule {
    target: Arc<dyn Fn(&InputPoint) -> f64 + Send + Sync>,
    inputs: InputSpace,
    schedule: StepSchedule,
}

impl SgdSquaredErrorRule {
    pub fn new(
        target: impl Fn(&InputPoint) -> f64 + Send + Sync + 'static,
        inputs: InputSpace,
        schedule: StepSchedule,
    ) -> Self {
        SgdSquaredErrorRule {
            target: Arc::new(target),
            inputs,
            schedule,
        }
    }
}

impl LearningRule for SgdSquaredErrorRule {
    fn label(&self) -> &str {
        "sgd-squared-error"
    }

    fn base_step(
        &self,
        i: usize,
        history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> (ParamVector, ParamVector) {
        let beta = history.get(i as i64 - 1).clone();
        (beta.clone(), beta)
    }

    fn measure(
        &self,
        i: usize,
        f: &dyn ParamFunction,
        history: &History,
        rng: &mut ChaCha8Rng,
    ) -> SignedMeasure {
        let beta = history.get(i as i64 - 1);
        let x = self.inputs.sample(rng);
        let delta = (self.target)(&x) - f.eval(&x, beta);
        let alpha = self.schedule.at(i);
        SignedMeasure::new(vec![(x, alpha * delta)]).expect("finite sgd weight")
    }
}

/// Supplies the gradient measure μ̃ᵢ for accelerated-gradient steps; the
/// rule scales it by −αᵢ₋₁ so the update descends.
pub trait GradientMeasureProvider: Send + Sync {
    fn measure(
        &self,
        i: usize,
        f: &dyn ParamFunction,
        beta: &ParamVector,
        rng: &mut ChaCha8Rng,
    ) -> SignedMeasure;
}

impl<F> GradientMeasureProvider for F
where
    F: Fn(usize, &dyn ParamFunction, &ParamVector, &mut ChaCha8Rng) -> SignedMeasure + Send + Sync,
{
    fn measure(
        &self,
        i: usize,
        f: &dyn ParamFunction,
        beta: &ParamVector,
        rng: &mut ChaCha8Rng,
    ) -> SignedMeasure {
        self(i, f, beta, rng)
    }
}

/// Momentum coefficient sequence for [`NesterovRule`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Momentum {
    /// (i−1)/(i+1), the classic accelerated-gradient schedule.
    Standard,
    /// Always zero; the rule degenerates to plain gradient descent.
    Zero,
}

/// Nesterov accelerated gradient:
/// βᵢ = lᵢ₋₁ + ((i−1)/(i+1))(lᵢ₋₁ − lᵢ₋₂), lᵢ = βᵢ − αᵢ₋₁ Σ w ∇f(x, βᵢ).
///
/// Requires two initial vectors (`iota` = 2); callers that pass a single
/// start vector get it duplicated.
pub struct NesterovRule {
    provider: Arc<dyn GradientMeasureProvider>,
    schedule: StepSchedule,
    momentum: Momentum,
}

impl NesterovRule {
    pub fn new(
        provider: Arc<dyn GradientMeasureProvider>,
        schedule: StepSchedule,
        momentum: Momentum,
    ) -> Self {
        NesterovRule { provider, schedule, momentum }
    }

    fn beta_at(&self, i: usize, history: &History) -> ParamVector {
        let prev = history.get(i as i64 - 1);
        let prev2 = history.get(i as i64 - 2);
        let gamma = match self.momentum {
            Momentum::Standard => (i as f64 - 1.0) / (i as f64 + 1.0),
            Momentum::Zero => 0.0,
        };
        ParamVector::wrap(prev.as_vector() + gamma * (prev.as_vector() - prev2.as_vector()))
    }
}

/// Builds the accelerated rule from a gradient measure provider.
pub fn nesterov_rule(
    provider: Arc<dyn GradientMeasureProvider>,
    schedule: StepSchedule,
) -> NesterovRule {
    NesterovRule::new(provider, schedule, Momentum::Standard)
}

impl LearningRule for NesterovRule {
    fn iota(&self) -> usize {
        2
    }

    fn label(&self) -> &str {
        "nesterov-accelerated-gradient"
    }

    fn base_step(
        &self,
        i: usize,
        history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> (ParamVector, ParamVector) {
        let beta = self.beta_at(i, history);
        (beta.clone(), beta)
    }

    fn measure(
        &self,
        i: usize,
        f: &dyn ParamFunction,
        history: &History,
        rng: &mut ChaCha8Rng,
    ) -> SignedMeasure {
        let beta = self.beta_at(i, history);
        let alpha = self.schedule.at(i.saturating_sub(1));
        self.provider.measure(i, f, &beta, rng).scaled(-alpha)
    }
}

/// A small Markov reward process with at most ten states.
#[derive(Clone, Debug)]
pub struct Mrp {
    transition: DMatrix<f64>,
    rewards: DVector<f64>,
    stationary: DVector<f64>,
}

impl Mrp {
    pub fn new(transition: DMatrix<f64>, rewards: DVector<f64>) -> Result<Self> {
        let n = transition.nrows();
        if n == 0 || n > 10 || transition.ncols() != n || rewards.len() != n {
            return Err(Error::InvalidArgument(
                "transition matrix must be square, ≤ 10 states, with matching rewards".into(),
            ));
        }
        for r in 0..n {
            let row_sum: f64 = transition.row(r).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 || transition.row(r).iter().any(|p| *p < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "transition row {r} is not a probability distribution"
                )));
            }
        }
        // Stationary distribution by power iteration from uniform.
        let mut pi = DVector::from_element(n, 1.0 / n as f64);
        for _ in 0..10_000 {
            let next = transition.transpose() * &pi;
            let diff = (&next - &pi).amax();
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        Ok(Mrp { transition, rewards, stationary: pi })
    }

    /// The fixed three-state chain used by the demonstrations:
    /// P = [[0.1, 0.6, 0.3], [0.4, 0.2, 0.4], [0.5, 0.3, 0.2]],
    /// r = [1, 0, −1].
    pub fn three_state_chain() -> Self {
        let p = DMatrix::from_row_slice(
            3,
            3,
            &[0.1, 0.6, 0.3, 0.4, 0.2, 0.4, 0.5, 0.3, 0.2],
        );
        let r = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        Mrp::new(p, r).expect("fixed chain is valid")
    }

    pub fn n_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn rewards(&self) -> &DVector<f64> {
        &self.rewards
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    fn sample_index(weights: &DVector<f64>, rng: &mut ChaCha8Rng) -> usize {
        let u = rng::uniform_open01(rng);
        let mut acc = 0.0;
        for (idx, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return idx;
            }
        }
        weights.len() - 1
    }

    pub fn sample_stationary(&self, rng: &mut ChaCha8Rng) -> usize {
        Self::sample_index(&self.stationary, rng)
    }

    pub fn sample_next(&self, state: usize, rng: &mut ChaCha8Rng) -> usize {
        Self::sample_index(&self.transition.row(state).transpose(), rng)
    }
}

/// TD(0) over an MRP with i.i.d. stationary transitions: per observed
/// transition (s, r, s′), δ = r + γ f(s′,θ) − f(s,θ) and the update is one
/// atom (s, α δ). δ is built from function values only.
pub struct Td0Rule {
    mrp: Mrp,
    gamma: f64,
    schedule: StepSchedule,
}

impl Td0Rule {
    pub fn new(mrp: Mrp, gamma: f64, schedule: StepSchedule) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!(
                "discount must lie in [0, 1), got {gamma}"
            )));
        }
        Ok(Td0Rule { mrp, gamma, schedule })
    }

    pub fn mrp(&self) -> &Mrp {
        &self.mrp
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Builds the TD(0) demonstration rule.
pub fn td0_rule(mrp: Mrp, gamma: f64, schedule: StepSchedule) -> Result<Td0Rule> {
    Td0Rule::new(mrp, gamma, schedule)
}

impl LearningRule for Td0Rule {
    fn label(&self) -> &str {
        "td0"
    }

    fn base_step(
        &self,
        i: usize,
        history: &History,
        _rng: &mut ChaCha8Rng,
    ) -> (ParamVector, ParamVector) {
        let beta = history.get(i as i64 - 1).clone();
        (beta.clone(), beta)
    }

    fn measure(
        &self,
        i: usize,
        f: &dyn ParamFunction,
        history: &History,
        rng: &mut ChaCha8Rng,
    ) -> SignedMeasure {
        let beta = history.get(i as i64 - 1);
        let s = self.mrp.sample_stationary(rng);
        let s_next = self.mrp.sample_next(s, rng);
        let x = InputPoint::scalar(s as f64);
        let x_next = InputPoint::scalar(s_next as f64);
        let delta = self.mrp.rewards()[s] + self.gamma * f.eval(&x_next, beta) - f.eval(&x, beta);
        let alpha = self.schedule.at(i);
        SignedMeasure::new(vec![(x, alpha * delta)]).expect("finite td weight")
    }
}

/// Linear state-value function over explicit per-state feature vectors.
/// Inputs are state indices carried as scalars.
pub fn linear_value_function(features: Vec<DVector<f64>>) -> crate::core::FnParamFunction {
    assert!(!features.is_empty());
    let dim = features[0].len();
    assert!(features.iter().all(|f| f.len() == dim));
    let n_states = features.len();
    let feats = Arc::new(features);
    let feats_grad = feats.clone();
    crate::core::FnParamFunction::new(
        dim,
        "linear-state-values",
        InputSpace::Finite((0..n_states).map(|s| InputPoint::scalar(s as f64)).collect()),
        move |x, t| feats[x.as_scalar() as usize].dot(t.as_vector()),
        move |x, _t| feats_grad[x.as_scalar() as usize].clone(),
    )
}

/// One-hot (tabular) features for `n` states.
pub fn one_hot_features(n: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|s| DVector::from_fn(n, |i, _| if i == s { 1.0 } else { 0.0 }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus;
    use crate::core::{plain_step_once, run_rule};

    fn small_data() -> Arc<GaussianData> {
        Arc::new(GaussianData::sample_gaussian(200, 3.0, 3.0, 42).unwrap())
    }

    #[test]
    fn gaussian_gradients_match_finite_differences() {
        for k in [1u32, 2, 4] {
            let model = GaussianModel::log_density(k);
            let err = calculus::fd_gradient_check(&model, 40, 7).unwrap();
            assert!(err < 1e-4, "k = {k}: {err}");
        }
        let density = GaussianModel::density(2);
        let err = calculus::fd_gradient_check(&density, 40, 7).unwrap();
        assert!(err < 1e-4, "density: {err}");
        let err = calculus::fd_gradient_check(&GaussianMeanModel, 40, 7).unwrap();
        assert!(err < 1e-4, "mean model: {err}");
    }

    #[test]
    fn first_figure_step_moves_toward_mle() {
        // Start N(2, 4), data from N(3, 9), k = 2: both coordinates must
        // increase on the first step.
        let data = GaussianData::sample_gaussian(100_000, 3.0, 3.0, 1).unwrap();
        let alpha = 0.001 / data.n() as f64;
        let (mu1, s1) = gaussian_loglik_gd_step((2.0, 4.0), &data, alpha, 2).unwrap();
        assert!(mu1 > 2.0);
        assert!(s1 > 4.0);
    }

    #[test]
    fn step_vanishes_at_the_mle_for_all_k() {
        let data = small_data();
        let (mu_hat, var_hat) = data.mle();
        for k in 1..=4u32 {
            let sk = sigma_power_from_sq(var_hat, k);
            let (mu1, s1) = gaussian_loglik_gd_step((mu_hat, sk), &data, 0.01, k).unwrap();
            assert!((mu1 - mu_hat).abs() < 1e-9 * mu_hat.abs().max(1.0), "k={k}");
            assert!((s1 - sk).abs() < 1e-9 * sk.max(1.0), "k={k}");
        }
    }

    #[test]
    fn step_equals_alpha_times_loglik_gradient() {
        // data {1, 3, 5}, k = 1, θ = (2, 2), α = 0.01: the step must equal α
        // times the finite-difference gradient of Σ log N(xⱼ; μ, σ²).
        let data = GaussianData::from_samples(vec![1.0, 3.0, 5.0]).unwrap();
        let (mu, sigma) = (2.0, 2.0);
        let alpha = 0.01;
        let (mu1, s1) = gaussian_loglik_gd_step((mu, sigma), &data, alpha, 1).unwrap();

        let loglik = |m: f64, s: f64| -> f64 {
            data.samples()
                .iter()
                .map(|&x| {
                    let var = s * s;
                    -HALF_LN_TWO_PI - 0.5 * var.ln() - (x - m) * (x - m) / (2.0 * var)
                })
                .sum()
        };
        let h = 1e-6;
        let gmu = (loglik(mu + h, sigma) - loglik(mu - h, sigma)) / (2.0 * h);
        let gsk = (loglik(mu, sigma + h) - loglik(mu, sigma - h)) / (2.0 * h);
        assert!(((mu1 - mu) - alpha * gmu).abs() < 1e-6);
        assert!(((s1 - sigma) - alpha * gsk).abs() < 1e-6);
    }

    #[test]
    fn general_k_formula_specializes_to_independent_k2_expressions() {
        // Independently coded k = 2 update (variance parameterization).
        let data = small_data();
        let (mu, v) = (1.2, 2.7);
        let alpha = 3e-4;
        let (mu1, v1) = gaussian_loglik_gd_step((mu, v), &data, alpha, 2).unwrap();
        let n = data.n() as f64;
        let (c1, c2) = data.centered_sums(mu);
        let mu_expected = mu + alpha / v * c1;
        let v_expected = v - alpha * n / (2.0 * v) + alpha / (2.0 * v * v) * c2;
        assert_eq!(mu1, mu_expected);
        assert_eq!(v1, v_expected);
    }

    #[test]
    fn batch_rule_trajectory_matches_closed_form_recursion() {
        let data = small_data();
        let rule = GaussianBatchRule::new(data.clone(), StepSchedule::Constant(1e-5), BatchScaling::Sum);
        let model = GaussianModel::log_density(2);
        let start = ParamVector::of(&[2.0, 4.0]);
        let traj = run_rule(&rule, &model, &[start], 50, 3).unwrap();
        assert!(!traj.diverged);

        // Oracle: iterate the closed-form recursion directly.
        let mut state = (2.0, 4.0);
        for step in &traj.steps {
            state = gaussian_loglik_gd_step(state, &data, 1e-5, 2).unwrap();
            let got = step.theta_next.as_slice();
            assert!(
                (got[0] - state.0).abs() < 1e-10 * state.0.abs().max(1.0),
                "mu: {} vs {}",
                got[0],
                state.0
            );
            assert!(
                (got[1] - state.1).abs() < 1e-10 * state.1.abs().max(1.0),
                "sigma^k: {} vs {}",
                got[1],
                state.1
            );
            // Keep the oracle exactly on the rule's trajectory so rounding
            // differences cannot compound across steps.
            state = (got[0], got[1]);
        }
    }

    #[test]
    fn batch_rule_diverges_cleanly_on_giant_steps() {
        // Starting above the MLE variance, a huge step drives σ negative on
        // the first iteration; the run must truncate and flag, not clamp.
        let data = small_data();
        let rule = GaussianBatchRule::new(data, StepSchedule::Constant(10.0), BatchScaling::Sum);
        let model = GaussianModel::log_density(1);
        let traj = run_rule(&rule, &model, &[ParamVector::of(&[2.0, 4.0])], 50, 3).unwrap();
        assert!(traj.diverged);
        assert!(traj.steps.len() < 50);
    }

    #[test]
    fn sgd_step_examples() {
        // Constant feature: f(x,θ) = θ, f* = 1, θ = 0, α = 0.5 → θ′ = 0.5.
        let f = crate::core::FnParamFunction::new(
            1,
            "constant-feature",
            InputSpace::Interval { lo: -1.0, hi: 1.0 },
            |_x, t| t[0],
            |_x, _t| DVector::from_element(1, 1.0),
        );
        let theta = ParamVector::of(&[0.0]);
        let next = sgd_squared_error_step(&f, &|_x| 1.0, &theta, &InputPoint::scalar(0.3), 0.5);
        assert_eq!(next.as_slice(), &[0.5]);

        // δ = 0 keeps θ fixed.
        let at_target = ParamVector::of(&[1.0]);
        let same = sgd_squared_error_step(&f, &|_x| 1.0, &at_target, &InputPoint::scalar(0.3), 0.5);
        assert_eq!(same.as_slice(), &[1.0]);
    }

    #[test]
    fn sgd_contracts_on_linear_regression() {
        let feats = |x: &InputPoint| DVector::from_vec(vec![1.0, x.as_scalar()]);
        let f = crate::core::FnParamFunction::new(
            2,
            "affine",
            InputSpace::Interval { lo: -1.0, hi: 1.0 },
            move |x, t| feats(x).dot(t.as_vector()),
            move |x, _t| DVector::from_vec(vec![1.0, x.as_scalar()]),
        );
        let theta_star = ParamVector::of(&[0.7, -0.4]);
        let target = move |x: &InputPoint| 0.7 - 0.4 * x.as_scalar();
        let mut theta = ParamVector::of(&[-1.0, 1.0]);
        let mut rng = rng::stream(9, StreamLabel::Rule);
        let mut err = (theta.as_vector() - theta_star.as_vector()).norm();
        for _ in 0..400 {
            let x = InputPoint::scalar(rng::uniform_in(&mut rng, -1.0, 1.0));
            theta = sgd_squared_error_step(&f, &target, &theta, &x, 0.2);
        }
        let final_err = (theta.as_vector() - theta_star.as_vector()).norm();
        assert!(final_err < 0.2 * err, "error {err} → {final_err}");
        err = final_err;
        assert!(err < 0.2);
    }

    fn quadratic_provider(design: Vec<f64>, target: ParamVector) -> impl GradientMeasureProvider {
        move |_i: usize, f: &dyn ParamFunction, beta: &ParamVector, _rng: &mut ChaCha8Rng| {
            let m = design.len() as f64;
            SignedMeasure::new(
                design
                    .iter()
                    .map(|&x| {
                        let p = InputPoint::scalar(x);
                        let delta = f.eval(&p, beta) - f.eval(&p, &target);
                        (p, delta / m)
                    })
                    .collect(),
            )
            .unwrap()
        }
    }

    fn affine_model() -> crate::core::FnParamFunction {
        crate::core::FnParamFunction::new(
            2,
            "affine",
            InputSpace::Interval { lo: -1.0, hi: 1.0 },
            |x, t| t[0] + t[1] * x.as_scalar(),
            |x, _t| DVector::from_vec(vec![1.0, x.as_scalar()]),
        )
    }

    #[test]
    fn nesterov_first_iteration_has_no_momentum() {
        let f = affine_model();
        let target = ParamVector::of(&[0.5, -0.3]);
        let provider = Arc::new(quadratic_provider(vec![-0.8, -0.1, 0.4, 0.9], target));
        let nag = nesterov_rule(provider.clone(), StepSchedule::Constant(0.3));
        let start = ParamVector::of(&[1.0, 1.0]);
        let mut rng_a = rng::stream(4, StreamLabel::Rule);
        let hist = History::new(vec![start.clone(), start.clone()]).unwrap();
        let (beta, _) = nag.base_step(1, &hist, &mut rng_a);
        assert_eq!(beta.as_slice(), start.as_slice());

        // With zero momentum every step equals plain gradient descent.
        let zero = NesterovRule::new(provider, StepSchedule::Constant(0.3), Momentum::Zero);
        let traj = run_rule(&zero, &f, std::slice::from_ref(&start), 30, 4).unwrap();
        let mut theta = start.clone();
        let mut rng_b = rng::stream(4, StreamLabel::Rule);
        let mut hist_b = History::new(vec![theta.clone(), theta.clone()]).unwrap();
        for step in &traj.steps {
            let out = plain_step_once(&zero, &f, &hist_b, &mut rng_b);
            theta = ParamVector::wrap(out.candidate.clone());
            assert_eq!(step.theta_next.as_slice(), theta.as_slice());
            hist_b.push(theta.clone());
        }
    }

    #[test]
    fn nesterov_beats_plain_gd_on_a_quadratic() {
        // Poorly conditioned quadratic (feature scales 1 and 1/30, so the
        // Gram eigenvalues are 1 and ~1e-3): after 100 steps at a fixed
        // step size the accelerated rule must sit at a lower function gap.
        let f = crate::core::FnParamFunction::new(
            2,
            "skewed-affine",
            InputSpace::Interval { lo: -1.0, hi: 1.0 },
            |x, t| t[0] + t[1] * x.as_scalar() / 30.0,
            |x, _t| DVector::from_vec(vec![1.0, x.as_scalar() / 30.0]),
        );
        let target = ParamVector::of(&[0.5, -30.0]);
        let design = vec![-1.0, 1.0];
        let provider = Arc::new(quadratic_provider(design.clone(), target.clone()));
        let start = ParamVector::of(&[4.0, 4.0]);
        let alpha = 0.95;

        let gap = |theta: &ParamVector| -> f64 {
            design
                .iter()
                .map(|&x| {
                    let p = InputPoint::scalar(x);
                    let d = f.eval(&p, theta) - f.eval(&p, &target);
                    d * d
                })
                .sum::<f64>()
                / design.len() as f64
        };

        let nag = nesterov_rule(provider.clone(), StepSchedule::Constant(alpha));
        let nag_traj = run_rule(&nag, &f, std::slice::from_ref(&start), 100, 8).unwrap();
        let gd = NesterovRule::new(provider, StepSchedule::Constant(alpha), Momentum::Zero);
        let gd_traj = run_rule(&gd, &f, &[start], 100, 8).unwrap();

        let nag_gap = gap(nag_traj.final_theta().unwrap());
        let gd_gap = gap(gd_traj.final_theta().unwrap());
        assert!(
            nag_gap < gd_gap,
            "accelerated {nag_gap:.3e} vs plain {gd_gap:.3e}"
        );
    }

    #[test]
    fn nesterov_with_zero_measure_is_pure_momentum() {
        let f = affine_model();
        let provider = Arc::new(
            |_i: usize, _f: &dyn ParamFunction, _b: &ParamVector, _r: &mut ChaCha8Rng| {
                SignedMeasure::zero()
            },
        );
        let nag = nesterov_rule(provider, StepSchedule::Constant(0.5));
        let a = ParamVector::of(&[0.0, 0.0]);
        let b = ParamVector::of(&[1.0, -1.0]);
        // θ₀¹ = most recent, θ₀² = the one before.
        let traj = run_rule(&nag, &f, &[b.clone(), a.clone()], 3, 1).unwrap();
        // i=1: β = b + 0·(b−a) = b.
        assert_eq!(traj.steps[0].theta_next.as_slice(), b.as_slice());
        // i=2: γ = 1/3, previous two iterates are (b, b).
        assert_eq!(traj.steps[1].theta_next.as_slice(), b.as_slice());
    }

    #[test]
    fn td_zero_rewards_and_zero_weights_do_nothing() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.3, 0.3, 0.4, 0.25, 0.5, 0.25]);
        let mrp = Mrp::new(p, DVector::zeros(3)).unwrap();
        let td = Td0Rule::new(mrp, 0.9, StepSchedule::Constant(0.1)).unwrap();
        let f = linear_value_function(one_hot_features(3));
        let traj = run_rule(&td, &f, &[ParamVector::of(&[0.0, 0.0, 0.0])], 200, 6).unwrap();
        for step in &traj.steps {
            assert_eq!(step.theta_next.as_slice(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn td_expected_update_vanishes_at_the_projected_fixed_point() {
        let mrp = Mrp::three_state_chain();
        let gamma = 0.9;
        // Two-dimensional features keep the projection nontrivial.
        let features = vec![
            DVector::from_vec(vec![1.0, 0.2]),
            DVector::from_vec(vec![0.5, 1.0]),
            DVector::from_vec(vec![-0.3, 0.8]),
        ];
        let f = linear_value_function(features.clone());

        // Oracle: θ* from the projected Bellman equation
        // Φᵀ D (R + γ P Φ θ − Φ θ) = 0 solved densely.
        let phi = DMatrix::from_rows(&[
            features[0].transpose(),
            features[1].transpose(),
            features[2].transpose(),
        ]);
        let d = DMatrix::from_diagonal(mrp.stationary());
        let a = phi.transpose() * &d * (DMatrix::identity(3, 3) - gamma * mrp.transition()) * &phi;
        let b = phi.transpose() * &d * mrp.rewards();
        let theta_star = a.lu().solve(&b).unwrap();

        let td = Td0Rule::new(mrp.clone(), gamma, StepSchedule::Constant(0.1)).unwrap();
        let hist = History::new(vec![ParamVector::wrap(theta_star.clone())]).unwrap();
        let mut rng = rng::stream(12, StreamLabel::Rule);
        let mut mean_update = DVector::zeros(2);
        let n_draws = 100_000usize;
        for _ in 0..n_draws {
            let out = plain_step_once(&td, &f, &hist, &mut rng);
            mean_update += &out.direction;
        }
        mean_update /= n_draws as f64;
        assert!(
            mean_update.amax() < 1e-3,
            "expected update {mean_update:?} not ~0"
        );
    }

    #[test]
    fn tabular_td_converges_to_true_values() {
        // The raw final iterate of constant-step TD carries an O(√α/(1−γ))
        // noise floor (~0.05 here even at small α), so the readout is the
        // average over the second half of the run, which sits well inside
        // the 1e-2 target.
        let mrp = Mrp::three_state_chain();
        let gamma = 0.9;
        let f = linear_value_function(one_hot_features(3));
        let td = Td0Rule::new(mrp.clone(), gamma, StepSchedule::Constant(0.005)).unwrap();
        let traj = run_rule(&td, &f, &[ParamVector::of(&[0.0, 0.0, 0.0])], 300_000, 77).unwrap();
        let half = traj.steps.len() / 2;
        let mut theta = DVector::zeros(3);
        for step in &traj.steps[half..] {
            theta += step.theta_next.as_vector();
        }
        theta /= (traj.steps.len() - half) as f64;

        // Oracle: value iteration.
        let mut v = DVector::zeros(3);
        for _ in 0..2_000 {
            v = mrp.rewards() + gamma * mrp.transition() * &v;
        }
        for s in 0..3 {
            assert!(
                (theta[s] - v[s]).abs() < 1e-2,
                "state {s}: learned {} true {}",
                theta[s],
                v[s]
            );
        }
    }

    #[test]
    fn decomposition_recomposes_bitwise_for_all_shipped_rules() {
        let data = small_data();
        let model = GaussianModel::log_density(2);
        let batch = GaussianBatchRule::new(data, StepSchedule::Constant(1e-5), BatchScaling::Sum);
        let sgd = SgdSquaredErrorRule::new(
            |x| 0.3 * x.as_scalar(),
            InputSpace::Interval { lo: -1.0, hi: 1.0 },
            StepSchedule::Constant(0.1),
        );
        let nag = nesterov_rule(
            Arc::new(quadratic_provider(
                vec![-0.5, 0.0, 0.5],
                ParamVector::of(&[0.1, 0.2]),
            )),
            StepSchedule::Constant(0.2),
        );
        let td = Td0Rule::new(Mrp::three_state_chain(), 0.9, StepSchedule::Constant(0.1)).unwrap();
        let lin = affine_model();
        let tdf = linear_value_function(one_hot_features(3));

        let cases: Vec<(&dyn LearningRule, &dyn ParamFunction, ParamVector)> = vec![
            (&batch, &model, ParamVector::of(&[2.0, 4.0])),
            (&sgd, &lin, ParamVector::of(&[0.5, -0.5])),
            (&nag, &lin, ParamVector::of(&[1.0, 1.0])),
            (&td, &tdf, ParamVector::of(&[0.1, 0.2, 0.3])),
        ];
        for (rule, f, start) in cases {
            let traj = run_rule(rule, f, std::slice::from_ref(&start), 5, 21).unwrap();
            let mut rng = rng::stream(21, StreamLabel::Rule);
            let mut hist =
                History::new(crate::core::normalize_theta0(&[start], rule.iota()).unwrap())
                    .unwrap();
            for step in &traj.steps {
                let out = plain_step_once(rule, f, &hist, &mut rng);
                // Recompose l′ᵢ + Σ w ∇f(x, βᵢ) by hand: the integral in
                // atom order, then the base point.
                let mut integral = DVector::zeros(f.param_dim());
                for (x, w) in out.measure.atoms() {
                    integral.axpy(*w, &f.grad(x, &out.beta), 1.0);
                }
                let recomposed = out.l_prime.as_vector() + &integral;
                assert_eq!(recomposed.as_slice(), step.theta_next.as_slice());
                hist.push(step.theta_next.clone());
            }
        }
    }

    #[test]
    fn measures_are_covariant_across_congruent_pairs() {
        // For every shipped rule, the measure produced for f at history H
        // equals the one produced for g at ψ(H), atom for atom.
        let data = small_data();
        let batch = GaussianBatchRule::new(data, StepSchedule::Constant(1e-4), BatchScaling::Mean);
        let sgd = SgdSquaredErrorRule::new(
            |x| (0.7 * x.as_scalar()).sin(),
            InputSpace::Gaussian { center: 3.0, scale: 3.0 },
            StepSchedule::Constant(0.05),
        );
        let rules: Vec<&dyn LearningRule> = vec![&batch, &sgd];
        for pair in pairs::shipped() {
            if pair.f.param_dim() != 2 {
                continue;
            }
            for rule in &rules {
                let mut theta_rng = rng::stream(31, StreamLabel::Theta);
                let theta = pair.sample_theta(&mut theta_rng);
                let hist_f = History::new(vec![theta]).unwrap();
                let hist_g = hist_f.mapped(&pair.psi);
                let mut rng_f = rng::stream(55, StreamLabel::Rule);
                let mut rng_g = rng::stream(55, StreamLabel::Rule);
                let mu_f = rule.measure(1, pair.f.as_ref(), &hist_f, &mut rng_f);
                let mu_g = rule.measure(1, pair.g.as_ref(), &hist_g, &mut rng_g);
                assert!(
                    crate::core::measures_match(&mu_f, &mu_g, 1e-12),
                    "rule {} on pair {}",
                    rule.label(),
                    pair.label()
                );
            }
        }
    }
}
