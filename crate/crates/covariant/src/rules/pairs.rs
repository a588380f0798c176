//! Congruent pairs shipped with the crate, used by the property suites and
//! covariance checkers.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

use super::{sigma_power_from_sq, sigma_sq_from_power, DensityMode, GaussianModel};
use crate::core::{CongruentPair, FnParamFunction, InputSpace, ParamVector, Submersion};
use crate::rng;

/// f and g are the same Gaussian model; ψ is the identity.
pub fn identity_gaussian(k: u32) -> CongruentPair {
    let model = Arc::new(GaussianModel::log_density(k));
    CongruentPair::new(
        model.clone(),
        model,
        Submersion::identity(2),
        move |r| sample_gaussian_theta(r, k),
        format!("identity-gaussian-k{k}"),
    )
    .expect("identity pair")
}

/// f(x,θ) = e^θ is congruent to g(x,θ) = θ via ψ(θ) = e^θ (but not the
/// other way around: congruence is not symmetric).
pub fn exp_pair() -> CongruentPair {
    let f = Arc::new(FnParamFunction::new(
        1,
        "exp-of-theta",
        InputSpace::Interval { lo: -1.0, hi: 1.0 },
        |_x, t| t[0].exp(),
        |_x, t| DVector::from_element(1, t[0].exp()),
    ));
    let g = Arc::new(FnParamFunction::new(
        1,
        "theta-itself",
        InputSpace::Interval { lo: -1.0, hi: 1.0 },
        |_x, t| t[0],
        |_x, _t| DVector::from_element(1, 1.0),
    ));
    let psi = Submersion::new(
        1,
        1,
        "exp",
        |v| DVector::from_element(1, v[0].exp()),
        |v| DMatrix::from_element(1, 1, v[0].exp()),
    )
    .expect("exp submersion");
    CongruentPair::new(
        f,
        g,
        psi,
        |r| ParamVector::of(&[rng::uniform_in(r, -2.0, 2.0)]),
        "exp-vs-identity",
    )
    .expect("exp pair")
}

/// The (μ, σ^k_f) model as f and the (μ, σ^k_g) model as g, tied by
/// ψ(μ, s) = (μ, s^(k_g/k_f)).
pub fn gaussian_pair(k_f: u32, k_g: u32, mode: DensityMode) -> CongruentPair {
    assert!(k_f >= 1 && k_g >= 1);
    let f = Arc::new(GaussianModel::new(k_f, mode));
    let g = Arc::new(GaussianModel::new(k_g, mode));
    let ratio = k_g as f64 / k_f as f64;
    let map = move |v: &DVector<f64>| {
        let sigma_sq = sigma_sq_from_power(v[1], k_f);
        DVector::from_vec(vec![v[0], sigma_power_from_sq(sigma_sq, k_g)])
    };
    let jac = move |v: &DVector<f64>| {
        let sigma_sq = sigma_sq_from_power(v[1], k_f);
        let s_g = sigma_power_from_sq(sigma_sq, k_g);
        // d(s^ratio)/ds = ratio · s^(ratio−1) = ratio · s_g / s_f.
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, ratio * s_g / v[1]])
    };
    let psi = Submersion::new(2, 2, format!("power-{k_f}-to-{k_g}"), map, jac)
        .expect("gaussian submersion");
    let tag = match mode {
        DensityMode::LogDensity => "",
        DensityMode::Density => "-density",
    };
    CongruentPair::new(
        f,
        g,
        psi,
        move |r| sample_gaussian_theta(r, k_f),
        format!("gaussian-k{k_f}-k{k_g}{tag}"),
    )
    .expect("gaussian pair")
}

/// Linear features under an invertible linear reparameterization:
/// f(x,θ) = θᵀφ(x), ψ(θ) = Mθ, g(x,η) = ηᵀ M⁻ᵀ φ(x).
pub fn linear_pair() -> CongruentPair {
    // M = [[2, 1], [0, 1]]; M⁻ᵀ = [[0.5, 0], [−0.5, 1]].
    let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
    let f = Arc::new(FnParamFunction::new(
        2,
        "affine-features",
        InputSpace::Interval { lo: -1.0, hi: 1.0 },
        |x, t| t[0] + t[1] * x.as_scalar(),
        |x, _t| DVector::from_vec(vec![1.0, x.as_scalar()]),
    ));
    let g = Arc::new(FnParamFunction::new(
        2,
        "affine-features-mixed",
        InputSpace::Interval { lo: -1.0, hi: 1.0 },
        |x, t| 0.5 * t[0] + (x.as_scalar() - 0.5) * t[1],
        |x, _t| DVector::from_vec(vec![0.5, x.as_scalar() - 0.5]),
    ));
    let m_map = m.clone();
    let psi = Submersion::new(
        2,
        2,
        "linear-mix",
        move |v| &m_map * v,
        move |_v| m.clone(),
    )
    .expect("linear submersion");
    CongruentPair::new(
        f,
        g,
        psi,
        |r| {
            ParamVector::of(&[
                rng::uniform_in(r, -2.0, 2.0),
                rng::uniform_in(r, -2.0, 2.0),
            ])
        },
        "linear-reparameterization",
    )
    .expect("linear pair")
}

fn sample_gaussian_theta(r: &mut rand_chacha::ChaCha8Rng, k: u32) -> ParamVector {
    let mu = rng::uniform_in(r, -2.0, 4.0);
    let sigma = rng::uniform_in(r, 0.6, 2.5);
    ParamVector::of(&[mu, sigma.powi(k as i32)])
}

/// Every pair the property suites run over.
pub fn shipped() -> Vec<CongruentPair> {
    vec![
        identity_gaussian(2),
        exp_pair(),
        gaussian_pair(1, 2, DensityMode::LogDensity),
        gaussian_pair(1, 3, DensityMode::LogDensity),
        gaussian_pair(1, 4, DensityMode::LogDensity),
        gaussian_pair(2, 4, DensityMode::LogDensity),
        gaussian_pair(4, 1, DensityMode::LogDensity),
        gaussian_pair(1, 2, DensityMode::Density),
        linear_pair(),
    ]
}
