//! Numerical building blocks: Taylor approximants, finite differences,
//! symmetric pseudoinverse, and small least-squares solves.
//!
//! Everything here is dense; parameter dimensions in this crate stay small
//! (n ≲ 32). Hessians are only ever formed by central differences of analytic
//! gradients, never by double finite differences.

use nalgebra::{DMatrix, DVector};

use crate::core::{ParamFunction, ParamVector};
use crate::rng::{self, StreamLabel};
use crate::{Error, Result};

/// Relative eigenvalue cutoff used by the pseudoinverse by default.
pub const DEFAULT_PINV_TOLERANCE: f64 = 1e-12;

/// A scalar function of a parameter vector with an analytic gradient.
pub trait ScalarField {
    fn value(&self, point: &DVector<f64>) -> f64;
    fn gradient(&self, point: &DVector<f64>) -> DVector<f64>;
}

/// `f(x, ·)` viewed as a scalar field over parameters, for a fixed input.
pub struct AtInput<'a> {
    pub f: &'a dyn ParamFunction,
    pub x: &'a crate::core::InputPoint,
}

impl ScalarField for AtInput<'_> {
    fn value(&self, point: &DVector<f64>) -> f64 {
        self.f.eval(self.x, &ParamVector::wrap(point.clone()))
    }

    fn gradient(&self, point: &DVector<f64>) -> DVector<f64> {
        self.f.grad(self.x, &ParamVector::wrap(point.clone()))
    }
}

/// Central-difference step for coordinate value `t`.
fn fd_step(t: f64) -> f64 {
    1e-6 * (1.0 + t.abs())
}

/// Central-difference gradient of a scalar field.
pub fn fd_gradient<F: Fn(&DVector<f64>) -> f64>(value: F, point: &DVector<f64>) -> DVector<f64> {
    let n = point.len();
    let mut grad = DVector::zeros(n);
    for i in 0..n {
        let h = fd_step(point[i]);
        let mut hi = point.clone();
        let mut lo = point.clone();
        hi[i] += h;
        lo[i] -= h;
        grad[i] = (value(&hi) - value(&lo)) / (2.0 * h);
    }
    grad
}

/// Central-difference Jacobian of a vector-valued map, one column per input
/// coordinate.
pub fn fd_jacobian<F: Fn(&DVector<f64>) -> DVector<f64>>(
    map: F,
    point: &DVector<f64>,
    out_dim: usize,
) -> DMatrix<f64> {
    let n = point.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    for j in 0..n {
        let h = fd_step(point[j]);
        let mut hi = point.clone();
        let mut lo = point.clone();
        hi[j] += h;
        lo[j] -= h;
        let col = (map(&hi) - map(&lo)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Hessian by central differences of the analytic gradient, symmetrized.
pub fn fd_hessian_of_gradient(field: &dyn ScalarField, point: &DVector<f64>) -> DMatrix<f64> {
    let n = point.len();
    let raw = fd_jacobian(|p| field.gradient(p), point, n);
    // Average with the transpose to absorb the independent rounding of the
    // two mixed partials.
    0.5 * (&raw + raw.transpose())
}

/// A j-order Taylor approximation of a scalar field around a center point.
#[derive(Clone, Debug)]
pub struct TaylorApprox {
    pub order: u8,
    pub center: DVector<f64>,
    pub value_at_center: f64,
    pub gradient: Option<DVector<f64>>,
    pub hessian: Option<DMatrix<f64>>,
}

impl TaylorApprox {
    pub fn evaluate(&self, point: &DVector<f64>) -> f64 {
        let d = point - &self.center;
        let mut v = self.value_at_center;
        if let Some(g) = &self.gradient {
            v += g.dot(&d);
        }
        if let Some(h) = &self.hessian {
            v += 0.5 * (h * &d).dot(&d);
        }
        v
    }
}

/// Builds the j-order Taylor approximation of `h` around `center`.
///
/// `order` must be 0, 1, or 2. The gradient is analytic; the Hessian (order
/// 2 only) comes from central differences of that gradient.
pub fn taylor(h: &dyn ScalarField, order: u8, center: &DVector<f64>) -> Result<TaylorApprox> {
    if order > 2 {
        return Err(Error::InvalidArgument(format!(
            "taylor order must be 0, 1, or 2, got {order}"
        )));
    }
    let value_at_center = h.value(center);
    if !value_at_center.is_finite() {
        return Err(Error::NonFinite {
            context: "taylor value at center",
            index: 0,
        });
    }
    let gradient = if order >= 1 {
        let g = h.gradient(center);
        if let Some(coord) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDerivative { coord });
        }
        Some(g)
    } else {
        None
    };
    let hessian = if order == 2 {
        let hess = fd_hessian_of_gradient(h, center);
        if let Some(idx) = hess.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDerivative {
                coord: idx % center.len(),
            });
        }
        Some(hess)
    } else {
        None
    };
    Ok(TaylorApprox {
        order,
        center: center.clone(),
        value_at_center,
        gradient,
        hessian,
    })
}

/// Summary of the spectrum used when pseudoinverting a metric.
#[derive(Clone, Copy, Debug)]
pub struct MetricInfo {
    /// Number of eigenvalues above the relative cutoff.
    pub rank: usize,
    /// Ratio of the largest retained eigenvalue magnitude to the smallest.
    pub condition: f64,
    pub max_eigenvalue: f64,
}

/// A symmetric positive-semidefinite matrix with a cached eigendecomposition.
///
/// Construction validates symmetry and that any negative eigenvalues are
/// attributable to rounding (≥ −1e-10 times the largest eigenvalue).
#[derive(Clone, Debug)]
pub struct MetricMatrix {
    entries: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    pinv_tolerance: f64,
}

impl MetricMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Self::with_tolerance(entries, DEFAULT_PINV_TOLERANCE)
    }

    pub fn with_tolerance(entries: DMatrix<f64>, pinv_tolerance: f64) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                context: "metric matrix must be square",
                expected: entries.nrows(),
                got: entries.ncols(),
            });
        }
        if let Some(idx) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "metric matrix entries",
                index: idx,
            });
        }
        let scale = entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let asym = (&entries - entries.transpose())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if asym > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "metric matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        let eigen = entries.clone().symmetric_eigen();
        let max_eig = eigen.eigenvalues.iter().fold(0.0f64, |m, v| m.max(*v));
        let min_eig = eigen
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(*v));
        if min_eig < -1e-10 * max_eig.max(1e-300) {
            return Err(Error::InvalidArgument(format!(
                "metric matrix is not positive semidefinite (eigenvalue {min_eig:.3e} vs max {max_eig:.3e})"
            )));
        }
        Ok(MetricMatrix {
            entries,
            eigenvalues: eigen.eigenvalues,
            eigenvectors: eigen.eigenvectors,
            pinv_tolerance,
        })
    }

    /// Builds Σ wᵢ vᵢ vᵢᵀ, symmetrized to absorb accumulation rounding.
    pub fn from_weighted_outer_products<'a, I>(dim: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a DVector<f64>, f64)>,
    {
        let mut m = DMatrix::zeros(dim, dim);
        let mut any = false;
        for (v, w) in terms {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "outer-product accumulation",
                    expected: dim,
                    got: v.len(),
                });
            }
            m.syger(w, v, v, 1.0);
            any = true;
        }
        if !any {
            return Err(Error::EmptyMeasure("metric accumulation"));
        }
        // syger fills the lower triangle; mirror it.
        for i in 0..dim {
            for j in (i + 1)..dim {
                m[(i, j)] = m[(j, i)];
            }
        }
        Self::new(m)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn pinv_tolerance(&self) -> f64 {
        self.pinv_tolerance
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn info(&self) -> MetricInfo {
        let max_abs = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = self.pinv_tolerance * max_abs;
        let retained: Vec<f64> = self
            .eigenvalues
            .iter()
            .copied()
            .filter(|l| l.abs() > cutoff)
            .collect();
        let rank = retained.len();
        let min_abs = retained
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let condition = if rank == 0 { 1.0 } else { max_abs / min_abs };
        MetricInfo {
            rank,
            condition,
            max_eigenvalue: max_abs,
        }
    }

    /// Moore–Penrose pseudoinverse via the symmetric eigendecomposition,
    /// zeroing eigenvalues below `pinv_tolerance` times the largest magnitude.
    pub fn pinv(&self) -> DMatrix<f64> {
        let n = self.dim();
        let max_abs = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = self.pinv_tolerance * max_abs;
        let mut out = DMatrix::zeros(n, n);
        for k in 0..n {
            let l = self.eigenvalues[k];
            if l.abs() > cutoff {
                let q = self.eigenvectors.column(k);
                out.syger(1.0 / l, &q, &q, 1.0);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                out[(i, j)] = out[(j, i)];
            }
        }
        out
    }

    /// `G⁺ v` without forming the full pseudoinverse.
    pub fn pinv_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let max_abs = self.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let cutoff = self.pinv_tolerance * max_abs;
        let mut out = DVector::zeros(self.dim());
        for k in 0..self.dim() {
            let l = self.eigenvalues[k];
            if l.abs() > cutoff {
                let q = self.eigenvectors.column(k);
                out.axpy(q.dot(v) / l, &q.clone_owned(), 1.0);
            }
        }
        out
    }
}

/// Moore–Penrose pseudoinverse of a symmetric PSD matrix.
pub fn pinv(m: &MetricMatrix) -> DMatrix<f64> {
    m.pinv()
}

/// Max relative error of central differences against the analytic gradient
/// over `trials` random (input, parameter) pairs.
///
/// Relative error per coordinate is |fd − analytic| / max(1, |analytic|).
pub fn fd_gradient_check(f: &dyn ParamFunction, trials: usize, rng_seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be ≥ 1".into()));
    }
    let mut x_rng = rng::stream(rng_seed, StreamLabel::Probe);
    let mut theta_rng = rng::stream(rng_seed, StreamLabel::Theta);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = f.input_space().sample(&mut x_rng);
        let theta = f.sample_theta(&mut theta_rng);
        let analytic = f.grad(&x, &theta);
        let field = AtInput { f, x: &x };
        let fd = fd_gradient(|p| field.value(p), theta.as_vector());
        for i in 0..analytic.len() {
            if !fd[i].is_finite() || !analytic[i].is_finite() {
                return Err(Error::NonFiniteDerivative { coord: i });
            }
            let denom = analytic[i].abs().max(1.0);
            worst = worst.max((fd[i] - analytic[i]).abs() / denom);
        }
    }
    Ok(worst)
}

/// Minimum-norm minimizer of ‖Aw − b‖², computed as A⁺b through an SVD with
/// relative singular-value cutoff 1e-12.
pub fn least_squares_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "least squares rows",
            expected: a.nrows(),
            got: b.len(),
        });
    }
    let n = a.ncols();
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let cutoff = DEFAULT_PINV_TOLERANCE * smax;
    let mut w = DVector::zeros(n);
    for k in 0..svd.singular_values.len() {
        let s = svd.singular_values[k];
        if s > cutoff {
            let coef = u.column(k).dot(b) / s;
            w.axpy(coef, &v_t.row(k).transpose(), 1.0);
        }
    }
    Ok(w)
}
