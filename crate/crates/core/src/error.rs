use thiserror::Error;

use crate::Point;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite evaluation at x = ({}, {}), t = {t:e}", x[0], x[1])]
    Evaluation { x: Point, t: f64 },

    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),

    #[error("target level {level:e} is not attained on [0, {upper:e}]; enlarge the search interval")]
    Range { level: f64, upper: f64 },

    #[error("supremum of s*t - phi(t) at s = {slope:e} is not localized below t = {upper:e}")]
    Window { slope: f64, upper: f64 },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("ellipticity failure at x = ({}, {}), |xi| = {radius:e}: smallest eigenvalue {eigenvalue:e}", x[0], x[1])]
    Ellipticity { x: Point, radius: f64, eigenvalue: f64 },

    #[error("input rejected by convexification: aInc(1) constant {found:e} exceeds declared {declared:e}")]
    NotConvexifiable { found: f64, declared: f64 },

    #[error("monotonicity failure: (A(xi) - A(eta)).(xi - eta) = {lhs:e} <= 0 at xi = {xi:?}, eta = {eta:?}")]
    Monotonicity { xi: Vec<f64>, eta: Vec<f64>, lhs: f64 },

    #[error("unbounded equivalence ratio {ratio:e} at x = ({}, {}), |xi| = {radius:e}", x[0], x[1])]
    Unbounded { x: Point, radius: f64, ratio: f64 },

    #[error("approximant ellipticity failure on {interval}: measured lower constant {value:e}")]
    ApproxEllipticity { interval: String, value: f64 },

    #[error("calibration of {what} did not certify within {steps} steps (last measured {value:e})")]
    Calibration {
        what: &'static str,
        steps: usize,
        value: f64,
    },

    #[error("line search failed at iteration {iteration} (energy {energy:e})")]
    LineSearch {
        iteration: usize,
        energy: f64,
        iterate: Vec<f64>,
    },

    #[error("non-finite energy density in cell ({i}, {j})")]
    NonFiniteEnergy { i: usize, j: usize },

    #[error("solver did not converge: residual plateau at {residual:e} after {sweeps} sweeps")]
    NonConvergence {
        sweeps: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("radii not resolvable: {0}")]
    Unresolvable(String),

    #[error("higher integrability hypotheses violated: {0}")]
    HigherIntegrability(String),

    #[error("ball admissibility failure: {0}")]
    Admissibility(String),

    #[error("internal consistency check failed: {0}")]
    Assertion(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
