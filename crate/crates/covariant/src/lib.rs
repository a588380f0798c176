//! Learning rules that are decoupled from how knowledge is parameterized.
//!
//! Most gradient-style learning rules implicitly measure distances between
//! parameter vectors with the Euclidean metric, so two models that represent
//! exactly the same set of functions can learn very differently depending on
//! how they are parameterized. This crate implements the *naturalization*
//! transform: any rule whose update decomposes into a base point plus a
//! gradient integral against a signed measure can be rewritten to take steps
//! of the form `G⁺ ∇f` instead of `∇f`, where `G` is a metric tensor built
//! from a user-chosen joint measure over inputs. The transformed rule is
//! first-order covariant: congruent reparameterizations produce the same
//! first-order change in the learned function.
//!
//! The crate ships:
//!
//! - [`core`]: parameterized functions, submersions, congruent pairs, signed
//!   and joint measures, the learning-rule decomposition, and trajectory
//!   runners.
//! - [`calculus`]: Taylor approximants, finite-difference checks, symmetric
//!   pseudoinverse, small least-squares solves.
//! - [`metric`]: metric tensors from joint measures, Fisher information
//!   (closed form and sample-estimated), steepest ascent under a metric.
//! - [`rules`]: concrete rules — batch Gaussian log-likelihood gradient
//!   ascent in the (μ, σᵏ) family, squared-error SGD, Nesterov accelerated
//!   gradient, and a small TD(0) demonstration.
//! - [`naturalize`]: the transform itself, plus direct estimation of the
//!   naturalized update via compatible function approximation and a
//!   two-timescale O(n) approximation.
//! - [`covariance`]: j-order covariance checkers and the second-order
//!   nonexistence verifier.
//! - [`experiments`]: reproducible Gaussian reparameterization experiments
//!   with CSV output.
//!
//! Everything is deterministic: a single 64-bit seed is expanded into labeled
//! ChaCha8 streams (see [`rng`]), and reruns with the same seed are
//! bit-identical.

// Negated float comparisons like `!(x > 0.0)` are deliberate: they treat NaN
// the same as an out-of-range value.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use thiserror::Error;

pub mod calculus;
pub mod core;
pub mod covariance;
pub mod experiments;
pub mod metric;
pub mod naturalize;
pub mod rng;
pub mod rules;

pub use crate::core::{
    run_rule, verify_congruence, CongruenceReport, CongruentPair, History, InputPoint, InputSpace,
    LearningRule, ParamFunction, ParamVector, RuleStep, SignedMeasure, Submersion, Trajectory,
};
pub use crate::metric::{MetricSpec, SampleSource};
pub use crate::naturalize::{naturalize, EstimationMode, NaturalizedRule};

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("{context}: expected dimension {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("not congruent: {0}")]
    NotCongruent(String),

    #[error("empty measure passed to {0}")]
    EmptyMeasure(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("joint measure probabilities sum to {total}, expected 1")]
    NotNormalized { total: f64 },

    #[error("negative probability {value} in joint measure")]
    NegativeProbability { value: f64 },

    #[error("metric spec unusable with function '{label}': {reason}")]
    MetricUnsupported { label: String, reason: &'static str },

    #[error("output dimension {got} unsupported; only scalar-valued functions are handled")]
    OutputDimUnsupported { got: usize },

    #[error("non-finite derivative at coordinate {coord}")]
    NonFiniteDerivative { coord: usize },

    #[error("diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
