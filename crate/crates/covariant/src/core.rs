//! Domain types: parameterized functions, congruent reparameterizations,
//! signed and joint measures, and learning rules in base-point +
//! gradient-integral form.
//!
//! A learning rule here is anything whose i-th update can be written as a
//! first-order covariant base point `l′ᵢ` plus an integral of `∂f/∂βᵢ`
//! against a signed measure over inputs. Measures are discrete atom lists,
//! and every shipped rule builds its atom weights from function *values*
//! only, which makes the measures covariant across congruent
//! reparameterizations by construction.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::calculus;
use crate::rng::{self, StreamLabel};
use crate::{Error, Result};

/// A finite real parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector",
                index,
            });
        }
        Ok(ParamVector(DVector::from_vec(values)))
    }

    /// Panicking constructor for values known to be finite.
    pub fn of(values: &[f64]) -> Self {
        Self::new(values.to_vec()).expect("finite parameter vector")
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if let Some(index) = v.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector",
                index,
            });
        }
        Ok(ParamVector(v))
    }

    pub(crate) fn wrap(v: DVector<f64>) -> Self {
        debug_assert!(v.iter().all(|x| x.is_finite()), "non-finite parameter");
        ParamVector(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// A point of the input space: a real scalar or a small real vector.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPoint(Vec<f64>);

impl InputPoint {
    pub fn scalar(x: f64) -> Self {
        assert!(x.is_finite(), "non-finite input point");
        InputPoint(vec![x])
    }

    pub fn vector(coords: Vec<f64>) -> Result<Self> {
        if let Some(index) = coords.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "input point",
                index,
            });
        }
        Ok(InputPoint(coords))
    }

    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.0.len(), 1, "input point is not scalar");
        self.0[0]
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Description of an input space, used to draw probe and data points.
#[derive(Clone, Debug)]
pub enum InputSpace {
    /// Scalar inputs distributed like N(center, scale²).
    Gaussian { center: f64, scale: f64 },
    /// Scalar inputs uniform on [lo, hi).
    Interval { lo: f64, hi: f64 },
    /// A named finite sample set.
    Finite(Vec<InputPoint>),
}

impl InputSpace {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> InputPoint {
        match self {
            InputSpace::Gaussian { center, scale } => {
                InputPoint::scalar(rng::gaussian(rng, *center, *scale))
            }
            InputSpace::Interval { lo, hi } => InputPoint::scalar(rng::uniform_in(rng, *lo, *hi)),
            InputSpace::Finite(points) => {
                assert!(!points.is_empty(), "empty finite input space");
                let u = rng::uniform_open01(rng);
                let idx = ((u * points.len() as f64) as usize).min(points.len() - 1);
                points[idx].clone()
            }
        }
    }
}

/// A parameterized scalar function f: 𝒳 × Θ → ℝ with an analytic gradient
/// in the parameters.
///
/// `eval` and `grad` must be deterministic pure functions of their
/// arguments. The trait carries optional model structure (input sampling,
/// location/scale, closed-form metric) used by metric estimators; the
/// defaults are fine for plain function approximators.
pub trait ParamFunction: Send + Sync {
    fn param_dim(&self) -> usize;

    fn output_dim(&self) -> usize {
        1
    }

    fn label(&self) -> &str;

    fn input_space(&self) -> InputSpace;

    fn eval(&self, x: &InputPoint, theta: &ParamVector) -> f64;

    /// ∂f/∂θ (x, θ).
    fn grad(&self, x: &InputPoint, theta: &ParamVector) -> DVector<f64>;

    /// Whether eval/grad are defined at θ (e.g. positive scale parameters).
    fn in_domain(&self, theta: &ParamVector) -> bool {
        let _ = theta;
        true
    }

    /// Draws a parameter vector inside the valid domain, for property suites.
    fn sample_theta(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let v = DVector::from_fn(self.param_dim(), |_, _| rng::standard_normal(rng));
        ParamVector::wrap(v)
    }

    /// Draws x distributed according to the model at β, when the function is
    /// a density or log-density.
    fn sample_input(&self, beta: &ParamVector, rng: &mut ChaCha8Rng) -> Option<InputPoint> {
        let _ = (beta, rng);
        None
    }

    /// Location and scale of the model at β, when meaningful.
    fn location_scale(&self, beta: &ParamVector) -> Option<(f64, f64)> {
        let _ = beta;
        None
    }

    /// Closed-form metric tensor (e.g. Fisher information) at β, when known.
    fn fisher_closed_form(&self, beta: &ParamVector) -> Option<DMatrix<f64>> {
        let _ = beta;
        None
    }
}

type EvalFn = Box<dyn Fn(&InputPoint, &ParamVector) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(&InputPoint, &ParamVector) -> DVector<f64> + Send + Sync>;

/// Closure-backed [`ParamFunction`], mostly for tests and small examples.
pub struct FnParamFunction {
    dim: usize,
    label: String,
    space: InputSpace,
    eval: EvalFn,
    grad: GradFn,
}

impl FnParamFunction {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        space: InputSpace,
        eval: impl Fn(&InputPoint, &ParamVector) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&InputPoint, &ParamVector) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        FnParamFunction {
            dim,
            label: label.into(),
            space,
            eval: Box::new(eval),
            grad: Box::new(grad),
        }
    }
}

impl ParamFunction for FnParamFunction {
    fn param_dim(&self) -> usize {
        self.dim
    }
    fn label(&self) -> &str {
        &self.label
    }
    fn input_space(&self) -> InputSpace {
        self.space.clone()
    }
    fn eval(&self, x: &InputPoint, theta: &ParamVector) -> f64 {
        (self.eval)(x, theta)
    }
    fn grad(&self, x: &InputPoint, theta: &ParamVector) -> DVector<f64> {
        (self.grad)(x, theta)
    }
}

type MapFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A smooth map ψ: Θ → Ψ with full-rank Jacobian and dim Ψ ≤ dim Θ,
/// witnessing that one parameterization can reach everything another can.
pub struct Submersion {
    in_dim: usize,
    out_dim: usize,
    label: String,
    map: MapFn,
    jacobian: JacobianFn,
}

impl Submersion {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        label: impl Into<String>,
        map: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if out_dim > in_dim {
            return Err(Error::NotCongruent(format!(
                "submersion target dimension {out_dim} exceeds source dimension {in_dim}"
            )));
        }
        Ok(Submersion {
            in_dim,
            out_dim,
            label: label.into(),
            map: Box::new(map),
            jacobian: Box::new(jacobian),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Submersion {
            in_dim: dim,
            out_dim: dim,
            label: "identity".into(),
            map: Box::new(|v: &DVector<f64>| v.clone()),
            jacobian: Box::new(move |v: &DVector<f64>| DMatrix::identity(v.len(), v.len())),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn apply(&self, theta: &ParamVector) -> ParamVector {
        ParamVector::wrap((self.map)(theta.as_vector()))
    }

    pub fn apply_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        (self.map)(v)
    }

    /// ∂ψ/∂θ, an out_dim × in_dim matrix.
    pub fn jacobian_at(&self, theta: &ParamVector) -> DMatrix<f64> {
        (self.jacobian)(theta.as_vector())
    }
}

/// Two parameterized functions tied by a submersion: f(x, θ) = g(x, ψ(θ)).
#[derive(Clone)]
pub struct CongruentPair {
    pub f: Arc<dyn ParamFunction>,
    pub g: Arc<dyn ParamFunction>,
    pub psi: Arc<Submersion>,
    theta_sampler: Arc<dyn Fn(&mut ChaCha8Rng) -> ParamVector + Send + Sync>,
    label: String,
}

impl CongruentPair {
    pub fn new(
        f: Arc<dyn ParamFunction>,
        g: Arc<dyn ParamFunction>,
        psi: Submersion,
        theta_sampler: impl Fn(&mut ChaCha8Rng) -> ParamVector + Send + Sync + 'static,
        label: impl Into<String>,
    ) -> Result<Self> {
        if g.param_dim() > f.param_dim() {
            return Err(Error::NotCongruent(format!(
                "'{}' ({} parameters) cannot be congruent to '{}' ({} parameters): the \
                 congruent representation may not need more parameters than the original",
                g.label(),
                g.param_dim(),
                f.label(),
                f.param_dim()
            )));
        }
        if psi.in_dim() != f.param_dim() || psi.out_dim() != g.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "submersion dimensions must match the pair",
                expected: f.param_dim(),
                got: psi.in_dim(),
            });
        }
        Ok(CongruentPair {
            f,
            g,
            psi: Arc::new(psi),
            theta_sampler: Arc::new(theta_sampler),
            label: label.into(),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn sample_theta(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        (self.theta_sampler)(rng)
    }
}

/// Outcome of sampling-based congruence verification.
#[derive(Clone, Debug)]
pub struct CongruenceReport {
    pub samples: usize,
    /// max |f(x,θ) − g(x,ψ(θ))|
    pub max_value_residual: f64,
    /// max-norm residual of ∂f/∂θ − (∂ψ/∂θ)ᵀ ∂g/∂ψ(θ)
    pub max_jacobian_property_residual: f64,
    /// max relative error of the analytic ψ-Jacobian against central differences
    pub max_fd_jacobian_error: f64,
    /// smallest singular value of ∂ψ/∂θ over the sampled θ
    pub min_jacobian_singular_value: f64,
    pub pass: bool,
    pub message: String,
}

/// Tolerances used by [`verify_congruence`].
pub const VALUE_RESIDUAL_TOL: f64 = 1e-10;
pub const JACOBIAN_PROPERTY_TOL: f64 = 1e-8;
pub const FD_JACOBIAN_TOL: f64 = 1e-4;
pub const JACOBIAN_RANK_TOL: f64 = 1e-8;

/// Samples (x, θ) pairs and checks that f(x,θ) = g(x,ψ(θ)), that the
/// Jacobian identity ∂f/∂θ = (∂ψ/∂θ)ᵀ ∂g/∂ψ(θ) holds, that the analytic
/// ψ-Jacobian matches finite differences, and that ψ keeps full rank.
pub fn verify_congruence(
    pair: &CongruentPair,
    n_samples: usize,
    rng_seed: u64,
) -> Result<CongruenceReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be ≥ 1".into()));
    }
    let mut x_rng = rng::stream(rng_seed, StreamLabel::Probe);
    let mut theta_rng = rng::stream(rng_seed, StreamLabel::Theta);

    let mut max_value = 0.0f64;
    let mut max_jprop = 0.0f64;
    let mut max_fd = 0.0f64;
    let mut min_sv = f64::INFINITY;

    for _ in 0..n_samples {
        let x = pair.f.input_space().sample(&mut x_rng);
        let theta = pair.sample_theta(&mut theta_rng);
        let mapped = pair.psi.apply(&theta);

        let fv = pair.f.eval(&x, &theta);
        let gv = pair.g.eval(&x, &mapped);
        max_value = max_value.max((fv - gv).abs());

        let jac = pair.psi.jacobian_at(&theta);
        let grad_f = pair.f.grad(&x, &theta);
        let grad_g = pair.g.grad(&x, &mapped);
        let pulled_back = jac.transpose() * &grad_g;
        max_jprop = max_jprop.max((grad_f - pulled_back).amax());

        let fd_jac = calculus::fd_jacobian(
            |v| pair.psi.apply_vec(v),
            theta.as_vector(),
            pair.psi.out_dim(),
        );
        let scale = jac.amax().max(1.0);
        max_fd = max_fd.max((&fd_jac - &jac).amax() / scale);

        let svd = jac.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        min_sv = min_sv.min(smin / smax.max(1e-300));
    }

    let full_rank = min_sv > JACOBIAN_RANK_TOL;
    let pass = max_value <= VALUE_RESIDUAL_TOL
        && max_jprop <= JACOBIAN_PROPERTY_TOL
        && max_fd <= FD_JACOBIAN_TOL
        && full_rank;
    let message = if pass {
        format!("congruent over {n_samples} samples")
    } else {
        format!(
            "value residual {max_value:.3e} (tol {VALUE_RESIDUAL_TOL:.0e}), jacobian identity \
             residual {max_jprop:.3e} (tol {JACOBIAN_PROPERTY_TOL:.0e}), fd jacobian error \
             {max_fd:.3e} (tol {FD_JACOBIAN_TOL:.0e}), relative min singular value {min_sv:.3e}"
        )
    };
    Ok(CongruenceReport {
        samples: n_samples,
        max_value_residual: max_value,
        max_jacobian_property_residual: max_jprop,
        max_fd_jacobian_error: max_fd,
        min_jacobian_singular_value: min_sv,
        pass,
        message,
    })
}

/// A signed measure over inputs: weighted atoms, weights may be negative and
/// atoms may repeat.
#[derive(Clone, Debug, Default)]
pub struct SignedMeasure {
    atoms: Vec<(InputPoint, f64)>,
}

impl SignedMeasure {
    pub fn new(atoms: Vec<(InputPoint, f64)>) -> Result<Self> {
        if let Some(index) = atoms.iter().position(|(_, w)| !w.is_finite()) {
            return Err(Error::NonFinite {
                context: "signed measure weight",
                index,
            });
        }
        Ok(SignedMeasure { atoms })
    }

    pub fn zero() -> Self {
        SignedMeasure { atoms: Vec::new() }
    }

    pub fn atoms(&self) -> &[(InputPoint, f64)] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn scaled(mut self, c: f64) -> Self {
        for (_, w) in &mut self.atoms {
            *w *= c;
        }
        self
    }
}

/// A joint probability measure over input pairs, as weighted atoms summing
/// to one.
#[derive(Clone, Debug)]
pub struct JointMeasure {
    atoms: Vec<(InputPoint, InputPoint, f64)>,
}

impl JointMeasure {
    pub fn new(atoms: Vec<(InputPoint, InputPoint, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyMeasure("joint measure"));
        }
        // Kahan summation so large atom counts stay inside the tolerance.
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (_, _, p) in &atoms {
            if !p.is_finite() {
                return Err(Error::NonFinite {
                    context: "joint measure probability",
                    index: 0,
                });
            }
            if *p < 0.0 {
                return Err(Error::NegativeProbability { value: *p });
            }
            let y = *p - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { total: sum });
        }
        Ok(JointMeasure { atoms })
    }

    /// Diagonal measure with atoms (x, x, p): the common case where both
    /// coordinates coincide.
    pub fn diagonal(atoms: Vec<(InputPoint, f64)>) -> Result<Self> {
        Self::new(
            atoms
                .into_iter()
                .map(|(x, p)| (x.clone(), x, p))
                .collect(),
        )
    }

    /// Uniform diagonal measure over the given points.
    pub fn uniform_diagonal(points: Vec<InputPoint>) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::EmptyMeasure("joint measure"));
        }
        let p = 1.0 / n as f64;
        Self::diagonal(points.into_iter().map(|x| (x, p)).collect())
    }

    pub fn atoms(&self) -> &[(InputPoint, InputPoint, f64)] {
        &self.atoms
    }
}

/// Iterate history: ι initial vectors plus the computed iterates.
#[derive(Clone, Debug)]
pub struct History {
    initial: Vec<ParamVector>,
    computed: Vec<ParamVector>,
}

impl History {
    pub fn new(initial: Vec<ParamVector>) -> Result<Self> {
        if initial.is_empty() {
            return Err(Error::InvalidArgument(
                "history needs at least one initial vector".into(),
            ));
        }
        let dim = initial[0].dim();
        if initial.iter().any(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch {
                context: "initial parameter vectors",
                expected: dim,
                got: initial.iter().map(|v| v.dim()).find(|d| *d != dim).unwrap(),
            });
        }
        Ok(History {
            initial,
            computed: Vec::new(),
        })
    }

    pub fn iota(&self) -> usize {
        self.initial.len()
    }

    pub fn dim(&self) -> usize {
        self.initial[0].dim()
    }

    pub fn len_computed(&self) -> usize {
        self.computed.len()
    }

    /// The iterate lᵢ. For i ≥ 1 this is the i-th computed vector; for
    /// i ≤ 0 it is the initial vector θ₀^(1−i).
    pub fn get(&self, i: i64) -> &ParamVector {
        if i >= 1 {
            let idx = (i - 1) as usize;
            assert!(
                idx < self.computed.len(),
                "iterate {i} has not been computed yet"
            );
            &self.computed[idx]
        } else {
            let idx = (-i) as usize;
            assert!(
                idx < self.initial.len(),
                "iterate {i} requires {} initial vectors, history has {}",
                idx + 1,
                self.initial.len()
            );
            &self.initial[idx]
        }
    }

    pub fn push(&mut self, theta: ParamVector) {
        debug_assert_eq!(theta.dim(), self.dim());
        self.computed.push(theta);
    }

    /// The image of this history under a submersion.
    pub fn mapped(&self, psi: &Submersion) -> History {
        History {
            initial: self.initial.iter().map(|t| psi.apply(t)).collect(),
            computed: self.computed.iter().map(|t| psi.apply(t)).collect(),
        }
    }
}

/// A learning rule in base-point + gradient-integral form.
///
/// `base_step` returns (βᵢ, l′ᵢ); for every shipped rule l′ᵢ = βᵢ, which is
/// first-order covariant with respect to (βᵢ) trivially. `measure` returns
/// the signed measure μᵢ whose atoms weight the ∂f/∂βᵢ terms; it must be
/// built from function values only, never from raw parameter entries.
pub trait LearningRule: Send + Sync {
    /// Number of required initial parameter vectors.
    fn iota(&self) -> usize {
        1
    }

    fn label(&self) -> &str;

    fn base_step(
        &self,
        i: usize,
        history: &History,
        rng: &mut ChaCha8Rng,
    ) -> (ParamVector, ParamVector);

    fn measure(
        &self,
        i: usize,
        f: &dyn ParamFunction,
        history: &History,
        rng: &mut ChaCha8Rng,
    ) -> SignedMeasure;
}

/// Per-step diagnostics carried in trajectories.
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    /// Condition number of the metric used, when one was used.
    pub metric_condition: Option<f64>,
    /// Numerical rank of the metric used, when one was used.
    pub metric_rank: Option<usize>,
    pub measure_total_weight: f64,
}

/// One iteration's output.
#[derive(Clone, Debug)]
pub struct RuleStep {
    pub theta_next: ParamVector,
    pub beta: ParamVector,
    pub l_prime: ParamVector,
    pub update_direction: DVector<f64>,
    pub diagnostics: StepDiagnostics,
}

/// A finite run of a rule. `diverged` means the run was truncated when an
/// iterate left the function's domain or stopped being finite; iterates are
/// never clamped.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub steps: Vec<RuleStep>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn final_theta(&self) -> Option<&ParamVector> {
        self.steps.last().map(|s| &s.theta_next)
    }

    pub fn thetas(&self) -> impl Iterator<Item = &ParamVector> {
        self.steps.iter().map(|s| &s.theta_next)
    }
}

/// Everything produced while forming one candidate step, before divergence
/// checks. `candidate` may be non-finite.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub beta: ParamVector,
    pub l_prime: ParamVector,
    pub measure: SignedMeasure,
    pub direction: DVector<f64>,
    pub candidate: DVector<f64>,
    pub diagnostics: StepDiagnostics,
}

/// One plain (non-naturalized) step: l′ᵢ + Σ w ∂f/∂βᵢ(x, βᵢ).
pub fn plain_step_once(
    rule: &dyn LearningRule,
    f: &dyn ParamFunction,
    history: &History,
    rng: &mut ChaCha8Rng,
) -> StepOutcome {
    let i = history.len_computed() + 1;
    let (beta, l_prime) = rule.base_step(i, history, rng);
    let measure = rule.measure(i, f, history, rng);
    let mut direction = DVector::zeros(f.param_dim());
    for (x, w) in measure.atoms() {
        direction.axpy(*w, &f.grad(x, &beta), 1.0);
    }
    let candidate = l_prime.as_vector() + &direction;
    let total = measure.total_weight();
    StepOutcome {
        beta,
        l_prime,
        measure,
        direction,
        candidate,
        diagnostics: StepDiagnostics {
            metric_condition: None,
            metric_rank: None,
            measure_total_weight: total,
        },
    }
}

/// The whole pipeline handles scalar-valued functions only; the types carry
/// `output_dim` for future generality, but operations reject anything else.
pub fn ensure_scalar_output(f: &dyn ParamFunction) -> Result<()> {
    if f.output_dim() != 1 {
        return Err(Error::OutputDimUnsupported { got: f.output_dim() });
    }
    Ok(())
}

pub(crate) fn normalize_theta0(theta0: &[ParamVector], iota: usize) -> Result<Vec<ParamVector>> {
    if theta0.len() == iota {
        Ok(theta0.to_vec())
    } else if theta0.len() == 1 && iota > 1 {
        // Standard initialization for multi-point rules: duplicate θ₀.
        Ok(vec![theta0[0].clone(); iota])
    } else {
        Err(Error::DimensionMismatch {
            context: "initial parameter vectors",
            expected: iota,
            got: theta0.len(),
        })
    }
}

/// Shared trajectory driver. `step` forms the candidate for the next iterate
/// given the history so far; the driver truncates on divergence.
pub(crate) fn run_with<F>(
    theta0: &[ParamVector],
    iota: usize,
    iterations: usize,
    in_domain: impl Fn(&ParamVector) -> bool,
    mut step: F,
) -> Result<Trajectory>
where
    F: FnMut(&History) -> Result<StepOutcome>,
{
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be ≥ 1".into()));
    }
    let mut history = History::new(normalize_theta0(theta0, iota)?)?;
    let mut steps = Vec::with_capacity(iterations.min(1 << 20));
    let mut diverged = false;
    for _ in 0..iterations {
        let out = step(&history)?;
        if !out.candidate.iter().all(|v| v.is_finite()) {
            diverged = true;
            break;
        }
        let theta = ParamVector::wrap(out.candidate.clone());
        if !in_domain(&theta) {
            diverged = true;
            break;
        }
        steps.push(RuleStep {
            theta_next: theta.clone(),
            beta: out.beta,
            l_prime: out.l_prime,
            update_direction: out.direction,
            diagnostics: out.diagnostics,
        });
        history.push(theta);
    }
    Ok(Trajectory { steps, diverged })
}

/// Runs a rule for `iterations` steps. The seed plays the role of the
/// randomness outcome ω: the same seed must drive both members of a
/// congruent pair identically.
pub fn run_rule(
    rule: &dyn LearningRule,
    f: &dyn ParamFunction,
    theta0: &[ParamVector],
    iterations: usize,
    rng_seed: u64,
) -> Result<Trajectory> {
    ensure_scalar_output(f)?;
    for t in theta0 {
        if t.dim() != f.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "initial vector dimension",
                expected: f.param_dim(),
                got: t.dim(),
            });
        }
    }
    let mut rule_rng = rng::stream(rng_seed, StreamLabel::Rule);
    run_with(
        theta0,
        rule.iota(),
        iterations,
        |t| f.in_domain(t),
        |history| Ok(plain_step_once(rule, f, history, &mut rule_rng)),
    )
}

/// Atom-for-atom comparison of two signed measures: identical atom count and
/// input points, weights equal within `tol` relative.
pub fn measures_match(a: &SignedMeasure, b: &SignedMeasure, tol: f64) -> bool {
    if a.atoms().len() != b.atoms().len() {
        return false;
    }
    a.atoms().iter().zip(b.atoms()).all(|((xa, wa), (xb, wb))| {
        xa == xb && (wa - wb).abs() <= tol * wa.abs().max(1.0)
    })
}
