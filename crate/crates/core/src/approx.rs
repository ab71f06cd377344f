//! Autonomous approximants on a ball: the frozen Φ-function `φ̄`, the
//! nonlinearity `Ā` and the Lagrangian `F̄`, with their transition functions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::integrate_graded;
use crate::growth::{lambda_min2, operator_norm, sigma_max2, sym_lambda_min, GrowthCertificate};
use crate::phi::{
    check_condition, check_condition_with, left_inverse, BallEnvelope, Condition, Derivative, PhiFunction, PhiMeta,
    SharedPhi,
};
use crate::quadrature::Rule;
use crate::sampling::{ball_points, Directions, LogGrid, SampleGrid};
use crate::structures::{GradientField, Lagrangian, StructureConstants, VectorField};
use crate::{Error, Point, Result};

/// Cubic smoothstep on `[0, 1]`, clamped: value, first and second derivative.
pub fn smoothstep3(s: f64) -> [f64; 3] {
    if s <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    if s >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    [s * s * (3.0 - 2.0 * s), 6.0 * s * (1.0 - s), 6.0 - 12.0 * s]
}

/// Quintic smoothstep on `[0, 1]`, clamped.
pub fn smoothstep5(s: f64) -> [f64; 3] {
    if s <= 0.0 {
        return [0.0, 0.0, 0.0];
    }
    if s >= 1.0 {
        return [1.0, 0.0, 0.0];
    }
    let s2 = s * s;
    [
        s2 * s * (10.0 - 15.0 * s + 6.0 * s2),
        30.0 * s2 * (1.0 - s) * (1.0 - s),
        60.0 * s * (1.0 - s) * (1.0 - 2.0 * s),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionKind {
    /// Cubic cut-offs, `η₃` a cubic ramp on `[t₂/2, t₂]`.
    Field,
    /// Quintic cut-offs, `η₃ = ∫_0^t h(s)/s² ds`.
    Energy,
}

/// The three transition functions `η₁, η₂, η₃` (and `h` in the energy case).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transitions {
    pub kind: TransitionKind,
    pub t1: f64,
    pub t2: f64,
    /// `η₃(3t₂/4)` in the energy case.
    i0: f64,
}

impl Transitions {
    pub fn new(kind: TransitionKind, t1: f64, t2: f64) -> Self {
        let mut out = Self { kind, t1, t2, i0: 0.0 };
        if kind == TransitionKind::Energy {
            out.i0 = Rule::new(24).integrate(0.5 * t2, 0.75 * t2, |s| out.h(s)[0] / (s * s));
        }
        out
    }

    fn step(&self, s: f64) -> [f64; 3] {
        match self.kind {
            TransitionKind::Field => smoothstep3(s),
            TransitionKind::Energy => smoothstep5(s),
        }
    }

    // 1 on [0, t), 0 on [2t, ∞)
    fn cutoff(&self, t: f64, at: f64) -> [f64; 3] {
        let [v, d1, d2] = self.step((t - at) / at);
        [1.0 - v, -d1 / at, -d2 / (at * at)]
    }

    pub fn eta1(&self, t: f64) -> [f64; 3] {
        self.cutoff(t, self.t1)
    }

    pub fn eta2(&self, t: f64) -> [f64; 3] {
        self.cutoff(t, self.t2)
    }

    pub fn eta3(&self, t: f64) -> [f64; 3] {
        let t2 = self.t2;
        match self.kind {
            TransitionKind::Field => {
                let w = 0.5 * t2;
                let [v, d1, d2] = smoothstep3((t - w) / w);
                [v, d1 / w, d2 / (w * w)]
            }
            TransitionKind::Energy => {
                if t <= 0.5 * t2 {
                    return [0.0; 3];
                }
                let [h, dh] = self.h(t);
                let value = if t >= 0.75 * t2 {
                    self.i0 + 4.0 / 3.0 - t2 / t
                } else {
                    Rule::new(24).integrate(0.5 * t2, t, |s| self.h(s)[0] / (s * s))
                };
                [value, h / (t * t), dh / (t * t) - 2.0 * h / (t * t * t)]
            }
        }
    }

    /// `h` and `h'`: a quintic ramp from 0 to `t₂` over `[t₂/2, 3t₂/4]`.
    pub fn h(&self, t: f64) -> [f64; 2] {
        let w = 0.25 * self.t2;
        let [v, d1, _] = smoothstep5((t - 0.5 * self.t2) / w);
        [self.t2 * v, self.t2 * d1 / w]
    }

    /// Sampled `sup_t η_i(t) + t|η_i'(t)| + t²|η_i''(t)|` over `i = 1, 2, 3`.
    pub fn combination_bound(&self) -> f64 {
        let grid = LogGrid::new(1e-3 * self.t1, 1e3 * self.t2, 4001).values();
        grid.iter()
            .flat_map(|&t| [self.eta1(t), self.eta2(t), self.eta3(t)].map(|e| (t, e)))
            .map(|(t, [v, d1, d2])| v + t * d1.abs() + t * t * d2.abs())
            .fold(0.0, f64::max)
    }
}

/// `φ̄`: `φ(x₀, ·)` on `[t₁, t₂]` continued by `t^p` branches with matching derivatives.
#[derive(Clone)]
pub struct PhiBar {
    phi: SharedPhi,
    pub x0: Point,
    pub p: f64,
    pub q1: f64,
    pub t1: f64,
    pub t2: f64,
    pub a1: f64,
    pub a2: f64,
    phi_at_t1: f64,
    bar_at_t2: f64,
}

impl std::fmt::Debug for PhiBar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhiBar")
            .field("x0", &self.x0)
            .field("p", &self.p)
            .field("t1", &self.t1)
            .field("t2", &self.t2)
            .field("a1", &self.a1)
            .field("a2", &self.a2)
            .finish()
    }
}

impl PhiBar {
    pub fn new(phi: SharedPhi, x0: Point, p: f64, q1: f64, t1: f64, t2: f64) -> Result<Self> {
        if !(t1 > 0.0 && t1 < 1.0 && t2 > 1.0) {
            return Err(Error::Parameter {
                name: "t1, t2".into(),
                reason: format!("need 0 < t1 < 1 < t2, got t1 = {t1}, t2 = {t2}"),
            });
        }
        if !(p > 1.0 && q1 >= p) {
            return Err(Error::Parameter {
                name: "p".into(),
                reason: format!("need 1 < p <= q1, got p = {p}, q1 = {q1}"),
            });
        }
        let a1 = phi.deriv(x0, t1);
        let a2 = phi.deriv(x0, t2);
        if !(a1 > 0.0 && a2 > 0.0 && a1.is_finite() && a2.is_finite()) {
            return Err(Error::Evaluation { x: x0, t: t1 });
        }
        let phi_at_t1 = phi.eval(x0, t1);
        let bar_at_t1 = a1 * t1 / p;
        let bar_at_t2 = bar_at_t1 + phi.eval(x0, t2) - phi_at_t1;
        Ok(Self {
            phi,
            x0,
            p,
            q1,
            t1,
            t2,
            a1,
            a2,
            phi_at_t1,
            bar_at_t2,
        })
    }

    /// Relative jump of `φ̄'` at `t₁` and `t₂`.
    pub fn derivative_jump(&self) -> f64 {
        let j1 = (self.a1 - self.phi.deriv(self.x0, self.t1)).abs() / self.a1;
        let j2 = (self.a2 - self.phi.deriv(self.x0, self.t2)).abs() / self.a2;
        j1.max(j2)
    }

    pub fn source(&self) -> &SharedPhi {
        &self.phi
    }
}

impl PhiFunction for PhiBar {
    fn eval(&self, _x: Point, t: f64) -> f64 {
        let p = self.p;
        if t <= self.t1 {
            self.a1 / p * t * (t / self.t1).powf(p - 1.0)
        } else if t <= self.t2 {
            self.a1 * self.t1 / p + self.phi.eval(self.x0, t) - self.phi_at_t1
        } else {
            self.bar_at_t2 + self.a2 * self.t2 / p * ((t / self.t2).powf(p) - 1.0)
        }
    }

    fn deriv(&self, _x: Point, t: f64) -> f64 {
        if t <= self.t1 {
            self.a1 * (t / self.t1).powf(self.p - 1.0)
        } else if t <= self.t2 {
            self.phi.deriv(self.x0, t)
        } else {
            self.a2 * (t / self.t2).powf(self.p - 1.0)
        }
    }

    fn meta(&self) -> PhiMeta {
        PhiMeta::bounds(self.p, self.q1, 1.0)
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// `φ̄` frozen at `x₀` from a growth certificate.
pub fn build_phibar(cert: &GrowthCertificate, x0: Point, t1: f64, t2: f64) -> Result<PhiBar> {
    PhiBar::new(cert.phi.clone(), x0, cert.p1, cert.q1, t1, t2)
}

/// Ball and thresholds of an approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxParams {
    pub x0: Point,
    pub t1: f64,
    pub t2: f64,
}

impl ApproxParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t1 <= 0.5) {
            return Err(Error::Parameter {
                name: "t1".into(),
                reason: format!("must lie in (0, 1/2], got {}", self.t1),
            });
        }
        if !(self.t2 >= 2.0 && self.t2.is_finite()) {
            return Err(Error::Parameter {
                name: "t2".into(),
                reason: format!("must be at least 2, got {}", self.t2),
            });
        }
        Ok(())
    }
}

/// Scalar data of an approximation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximationBundle {
    pub x0: Point,
    pub t1: f64,
    pub t2: f64,
    pub a1: f64,
    pub a2: f64,
    pub p: f64,
    pub q1: f64,
    pub nu: f64,
    pub lambda: f64,
    pub lambda_bar: f64,
    /// Lower-branch weight of `F̄`; `None` for `Ā`, which uses `ν/8`.
    pub nu_bar: Option<f64>,
    /// Sampled bound `C` of `η_i + t|η_i'| + t²|η_i''|`.
    pub eta_bound: f64,
    pub calibration_steps: usize,
}

/// `Λ̄ = 2^{q₁-p+3} Λ / min(p-1, 1)`.
pub fn lambda_bar(p: f64, q1: f64, lambda: f64) -> f64 {
    2f64.powf(q1 - p + 3.0) * lambda / (p - 1.0).min(1.0)
}

fn bundle_from(
    cert: &GrowthCertificate,
    params: &ApproxParams,
    phibar: &PhiBar,
    eta: &Transitions,
) -> ApproximationBundle {
    ApproximationBundle {
        x0: params.x0,
        t1: params.t1,
        t2: params.t2,
        a1: phibar.a1,
        a2: phibar.a2,
        p: phibar.p,
        q1: phibar.q1,
        nu: cert.nu,
        lambda: cert.lambda,
        lambda_bar: lambda_bar(phibar.p, phibar.q1, cert.lambda),
        nu_bar: None,
        eta_bound: eta.combination_bound(),
        calibration_steps: 0,
    }
}

fn unit_probe(dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[0] = 1e-150;
    v
}

/// Autonomous nonlinearity
/// `Ā(ξ) = (ν/8)η₁ a₁/t₁^{p-1} |ξ|^{p-2}ξ + η₂ A(x₀,ξ) + Λ̄η₃ a₂/t₂^{p-1} |ξ|^{p-2}ξ`.
#[derive(Clone)]
pub struct Abar {
    a: Arc<dyn VectorField>,
    pub bundle: ApproximationBundle,
    pub eta: Transitions,
    pub phibar: Arc<PhiBar>,
}

impl std::fmt::Debug for Abar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Abar").field("bundle", &self.bundle).finish()
    }
}

pub fn build_abar(a: Arc<dyn VectorField>, cert: &GrowthCertificate, params: &ApproxParams) -> Result<Abar> {
    params.validate()?;
    let phibar = build_phibar(cert, params.x0, params.t1, params.t2)?;
    let eta = Transitions::new(TransitionKind::Field, params.t1, params.t2);
    let bundle = bundle_from(cert, params, &phibar, &eta);
    Ok(Abar {
        a,
        bundle,
        eta,
        phibar: Arc::new(phibar),
    })
}

impl Abar {
    fn weights(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let b = &self.bundle;
        let c1 = b.nu / 8.0 * b.a1 / b.t1.powf(b.p - 1.0);
        let c3 = b.lambda_bar * b.a2 / b.t2.powf(b.p - 1.0);
        let [e1, d1, _] = self.eta.eta1(t);
        let [e2, d2, _] = self.eta.eta2(t);
        let [e3, d3, _] = self.eta.eta3(t);
        ([c1 * e1 + c3 * e3, c1 * d1 + c3 * d3], [e2, d2])
    }
}

impl VectorField for Abar {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn eval(&self, _x: Point, xi: &[f64]) -> DVector<f64> {
        let x0 = self.bundle.x0;
        let t = crate::structures::norm(xi);
        if t == 0.0 {
            return DVector::zeros(xi.len());
        }
        let ([w, _], [e2, _]) = self.weights(t);
        let mut v = if e2 == 1.0 {
            self.a.eval(x0, xi)
        } else if e2 == 0.0 {
            DVector::zeros(xi.len())
        } else {
            self.a.eval(x0, xi) * e2
        };
        if w != 0.0 {
            let s = w * t.powf(self.bundle.p - 2.0);
            for (vi, &x) in v.iter_mut().zip(xi) {
                *vi += s * x;
            }
        }
        v
    }

    fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        let t = crate::structures::norm(xi);
        if t == 0.0 {
            return self.jacobian(x, &unit_probe(xi.len()));
        }
        let x0 = self.bundle.x0;
        let p = self.bundle.p;
        let n = xi.len();
        let ([w, dw], [e2, d2]) = self.weights(t);
        let mut j = if e2 == 0.0 && d2 == 0.0 {
            DMatrix::zeros(n, n)
        } else {
            let mut j = self.a.jacobian(x0, xi);
            if e2 != 1.0 {
                j *= e2;
            }
            if d2 != 0.0 {
                let av = self.a.eval(x0, xi);
                for r in 0..n {
                    for c in 0..n {
                        j[(r, c)] += d2 * av[r] * xi[c] / t;
                    }
                }
            }
            j
        };
        if w != 0.0 || dw != 0.0 {
            let outer = dw * t.powf(p - 3.0) + (p - 2.0) * w * t.powf(p - 4.0);
            let diag = w * t.powf(p - 2.0);
            for r in 0..n {
                for c in 0..n {
                    j[(r, c)] += outer * xi[r] * xi[c];
                }
                j[(r, r)] += diag;
            }
        }
        j
    }

    fn constants(&self) -> StructureConstants {
        self.a.constants()
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Autonomous Lagrangian
/// `F̄(ξ) = ν̄η₁ a₁/t₁^{p-1} |ξ|^p + η₂ F(x₀,ξ) + Λ̄η₃ a₂/t₂^{p-1} |ξ|^p`.
#[derive(Clone)]
pub struct Fbar {
    f: Arc<dyn Lagrangian>,
    pub bundle: ApproximationBundle,
    pub eta: Transitions,
    pub phibar: Arc<PhiBar>,
}

impl std::fmt::Debug for Fbar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fbar").field("bundle", &self.bundle).finish()
    }
}

impl Fbar {
    /// Radial part `w(t) t^p` with its first two derivatives.
    fn radial(&self, t: f64) -> [f64; 3] {
        let b = &self.bundle;
        let p = b.p;
        let c1 = b.nu_bar.unwrap_or(b.nu / 8.0) * b.a1 / b.t1.powf(p - 1.0);
        let c3 = b.lambda_bar * b.a2 / b.t2.powf(p - 1.0);
        let e1 = self.eta.eta1(t);
        let e3 = self.eta.eta3(t);
        let w: [f64; 3] = std::array::from_fn(|k| c1 * e1[k] + c3 * e3[k]);
        if w == [0.0; 3] {
            return [0.0; 3];
        }
        let tp = t.powf(p);
        [
            w[0] * tp,
            w[1] * tp + p * w[0] * tp / t,
            w[2] * tp + 2.0 * p * w[1] * tp / t + p * (p - 1.0) * w[0] * tp / (t * t),
        ]
    }
}

impl Lagrangian for Fbar {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, _x: Point, xi: &[f64]) -> f64 {
        let t = crate::structures::norm(xi);
        if t == 0.0 {
            return 0.0;
        }
        let [e2, _, _] = self.eta.eta2(t);
        let middle = if e2 == 0.0 {
            0.0
        } else {
            e2 * self.f.eval(self.bundle.x0, xi)
        };
        middle + self.radial(t)[0]
    }

    fn gradient(&self, _x: Point, xi: &[f64]) -> DVector<f64> {
        let t = crate::structures::norm(xi);
        let n = xi.len();
        if t == 0.0 {
            return DVector::zeros(n);
        }
        let x0 = self.bundle.x0;
        let [e2, d2, _] = self.eta.eta2(t);
        let mut g = if e2 == 0.0 && d2 == 0.0 {
            DVector::zeros(n)
        } else {
            let mut g = self.f.gradient(x0, xi);
            if e2 != 1.0 {
                g *= e2;
            }
            if d2 != 0.0 {
                let fv = self.f.eval(x0, xi);
                for (gi, &x) in g.iter_mut().zip(xi) {
                    *gi += d2 * fv * x / t;
                }
            }
            g
        };
        let [_, r1, _] = self.radial(t);
        if r1 != 0.0 {
            for (gi, &x) in g.iter_mut().zip(xi) {
                *gi += r1 * x / t;
            }
        }
        g
    }

    fn hessian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        let t = crate::structures::norm(xi);
        let n = xi.len();
        if t == 0.0 {
            return self.hessian(x, &unit_probe(n));
        }
        let x0 = self.bundle.x0;
        let u: Vec<f64> = xi.iter().map(|c| c / t).collect();
        let [e2, d2, dd2] = self.eta.eta2(t);
        let mut h = if e2 == 0.0 && d2 == 0.0 && dd2 == 0.0 {
            DMatrix::zeros(n, n)
        } else {
            let mut h = self.f.hessian(x0, xi);
            if e2 != 1.0 {
                h *= e2;
            }
            if d2 != 0.0 || dd2 != 0.0 {
                let fv = self.f.eval(x0, xi);
                let g = self.f.gradient(x0, xi);
                for r in 0..n {
                    for c in 0..n {
                        let delta = if r == c { 1.0 } else { 0.0 };
                        h[(r, c)] += dd2 * fv * u[r] * u[c]
                            + d2 * (g[r] * u[c] + u[r] * g[c])
                            + d2 * fv * (delta - u[r] * u[c]) / t;
                    }
                }
            }
            h
        };
        let [_, r1, r2] = self.radial(t);
        if r1 != 0.0 || r2 != 0.0 {
            for r in 0..n {
                for c in 0..n {
                    let delta = if r == c { 1.0 } else { 0.0 };
                    h[(r, c)] += r2 * u[r] * u[c] + r1 / t * (delta - u[r] * u[c]);
                }
            }
        }
        h
    }

    fn constants(&self) -> StructureConstants {
        self.f.constants()
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Search bounds of the `F̄` calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub max_steps: usize,
    /// Required `λ_min(D²F̄) |ξ| / φ̄'(|ξ|)` on the transition shells, relative to `ν`.
    pub margin: f64,
    pub sample: ApproxSample,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            max_steps: 40,
            margin: 0.75,
            sample: ApproxSample::default(),
        }
    }
}

/// Builds `F̄`, halving `ν̄` from `ν/8` and doubling `Λ̄` until the two
/// transition shells are elliptic with margin.
pub fn build_fbar(
    f: Arc<dyn Lagrangian>,
    cert: &GrowthCertificate,
    params: &ApproxParams,
    calibration: &Calibration,
) -> Result<Fbar> {
    params.validate()?;
    let phibar = build_phibar(cert, params.x0, params.t1, params.t2)?;
    let eta = Transitions::new(TransitionKind::Energy, params.t1, params.t2);
    let mut bundle = bundle_from(cert, params, &phibar, &eta);
    bundle.nu_bar = Some(cert.nu / 8.0);
    let mut fbar = Fbar {
        f,
        bundle,
        eta,
        phibar: Arc::new(phibar),
    };
    let target = calibration.margin * cert.nu;
    let (t1, t2) = (params.t1, params.t2);
    let mut steps = 0;
    loop {
        let m = shell_nu(&fbar, t1, 2.0 * t1, &calibration.sample);
        if m >= target {
            break;
        }
        steps += 1;
        if steps > calibration.max_steps {
            return Err(Error::Calibration {
                what: "nu_bar",
                steps: calibration.max_steps,
                value: m,
            });
        }
        fbar.bundle.nu_bar = fbar.bundle.nu_bar.map(|v| 0.5 * v);
    }
    let mut lsteps = 0;
    loop {
        let m = shell_nu(&fbar, t2, 4.0 * t2, &calibration.sample);
        if m >= target {
            break;
        }
        lsteps += 1;
        if lsteps > calibration.max_steps {
            return Err(Error::Calibration {
                what: "lambda_bar",
                steps: calibration.max_steps,
                value: m,
            });
        }
        fbar.bundle.lambda_bar *= 2.0;
    }
    fbar.bundle.calibration_steps = steps + lsteps;
    Ok(fbar)
}

fn shell_nu(fbar: &Fbar, lo: f64, hi: f64, sample: &ApproxSample) -> f64 {
    let g = GradientField(fbar);
    let dirs = Directions::new(g.dim(), sample.seed).take(sample.directions);
    shell_points(lo, hi, sample.per_interval)
        .into_iter()
        .flat_map(|t| dirs.iter().map(move |d| (t, d)))
        .map(|(t, d)| {
            let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
            let (_, _, lmin) = field_norms(&g, fbar.bundle.x0, &xi);
            lmin * t / fbar.phibar.deriv(fbar.bundle.x0, t)
        })
        .fold(f64::INFINITY, f64::min)
}

// interior log-midpoints of (lo, hi] plus hi itself
fn shell_points(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * (i as f64 + 0.5) / n as f64).exp())
        .collect();
    v.push(hi);
    v
}

// |A|, |DA|, λ_min(sym DA)
fn field_norms(a: &dyn VectorField, x: Point, xi: &[f64]) -> (f64, f64, f64) {
    if xi.len() == 2 {
        let xi2 = [xi[0], xi[1]];
        let v = a.eval2(x, xi2);
        let j = a.jacobian2(x, xi2);
        ((v[0] * v[0] + v[1] * v[1]).sqrt(), sigma_max2(j), lambda_min2(j))
    } else {
        let j = a.jacobian(x, xi);
        (a.eval(x, xi).norm(), operator_norm(&j), sym_lambda_min(&j))
    }
}

/// `ξ` sampling of [`verify_growth_of_approx`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApproxSample {
    /// Magnitudes per case interval.
    pub per_interval: usize,
    pub directions: usize,
    /// Decades sampled below `t₁` and above `2t₂`.
    pub outer_decades: f64,
    pub seed: u64,
}

impl Default for ApproxSample {
    fn default() -> Self {
        Self {
            per_interval: 16,
            directions: 8,
            outer_decades: 2.0,
            seed: 0,
        }
    }
}

/// Constants measured on one magnitude interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBounds {
    pub interval: String,
    pub lo: f64,
    pub hi: f64,
    /// `min λ_min(sym DĀ) |ξ| / φ̄'(|ξ|)`
    pub nu: f64,
    /// `max (|Ā| + |ξ||DĀ|) / φ̄'(|ξ|)`
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxCertificate {
    pub nu: f64,
    pub lambda: f64,
    pub intervals: Vec<IntervalBounds>,
    pub samples: usize,
}

/// Certifies `φ̄` as a growth function of an autonomous approximant, with the
/// magnitudes split at `t₁, 2t₁, t₂/2, t₂, 2t₂`.
pub fn verify_growth_of_approx(
    field: &dyn VectorField,
    phibar: &PhiBar,
    sample: &ApproxSample,
) -> Result<ApproxCertificate> {
    let (t1, t2) = (phibar.t1, phibar.t2);
    let outer = 10f64.powf(sample.outer_decades);
    let cuts = [
        ("(0, t1]", t1 / outer, t1),
        ("(t1, 2t1]", t1, 2.0 * t1),
        ("(2t1, t2/2]", 2.0 * t1, 0.5 * t2),
        ("(t2/2, t2]", 0.5 * t2, t2),
        ("(t2, 2t2]", t2, 2.0 * t2),
        ("(2t2, inf)", 2.0 * t2, t2 * outer),
    ];
    let dirs = Directions::new(field.dim(), sample.seed).take(sample.directions);
    let x0 = phibar.x0;
    let intervals: Vec<IntervalBounds> = cuts
        .par_iter()
        .map(|&(name, lo, hi)| {
            let mut b = IntervalBounds {
                interval: name.to_string(),
                lo,
                hi,
                nu: f64::INFINITY,
                lambda: 0.0,
            };
            for t in shell_points(lo, hi, sample.per_interval) {
                let dphi = phibar.deriv(x0, t);
                for d in &dirs {
                    let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
                    let (amag, jn, lmin) = field_norms(field, x0, &xi);
                    b.nu = b.nu.min(lmin * t / dphi);
                    b.lambda = b.lambda.max((amag + t * jn) / dphi);
                }
            }
            b
        })
        .collect();
    if let Some(bad) = intervals.iter().find(|b| !(b.nu > 0.0)) {
        return Err(Error::ApproxEllipticity {
            interval: bad.interval.clone(),
            value: bad.nu,
        });
    }
    Ok(ApproxCertificate {
        nu: intervals.iter().map(|b| b.nu).fold(f64::INFINITY, f64::min),
        lambda: intervals.iter().map(|b| b.lambda).fold(0.0, f64::max),
        samples: cuts.len() * (sample.per_interval + 1) * dirs.len(),
        intervals,
    })
}

/// Verdicts and constants of the four properties of `φ̄` on a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiBarReport {
    /// Measured `max φ⁺/φ⁻` on `[t₁, t₂]`.
    pub hypothesis_constant: f64,
    pub ltilde: f64,
    /// The hypothesis holds with the supplied `L̃`; otherwise every item is conditional.
    pub hypothesis_holds: bool,
    /// Witnessed constants of `Inc(p-1)` and `Dec(q₁-1)` for `φ̄'`.
    pub inc_constant: f64,
    pub dec_constant: f64,
    pub derivative_jump: f64,
    pub item1: bool,
    /// `max φ̄(t) / φ(x₀,t)` on `[t₁, t₂]`.
    pub upper_ratio: f64,
    /// `max φ(x,t) / φ̄(t)` over the ball and `[t₁, t₂]`.
    pub lower_constant: f64,
    pub item2: bool,
    /// `max φ̄(t) / φ(x,t)` over the ball and `t >= t₁`.
    pub item3_factor: f64,
    /// `(q₁/p) L̃`
    pub item3_bound: f64,
    pub item3: bool,
    /// Witnessed constants of (A0), (aInc)₁ and (aDec)_{q₁/p} for `θ₀(x,t) = φ(x, φ̄⁻¹(t))`.
    pub theta_a0: f64,
    pub theta_ainc: f64,
    pub theta_adec: f64,
    pub item4: bool,
    pub passed: bool,
}

/// `θ₀(x, t) = φ(x, φ̄⁻¹(t))`.
pub struct Theta0<'a> {
    pub phi: &'a dyn PhiFunction,
    pub phibar: &'a PhiBar,
}

impl PhiFunction for Theta0<'_> {
    fn eval(&self, x: Point, t: f64) -> f64 {
        match left_inverse(self.phibar, x, t) {
            Ok(s) => self.phi.eval(x, s),
            Err(_) => f64::NAN,
        }
    }
}

/// Options of [`check_prop_phibar`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiBarSample {
    pub radius: f64,
    pub rays: usize,
    pub t: LogGrid,
    /// Bound for the item (4) constants.
    pub theta_constant: f64,
}

impl Default for PhiBarSample {
    fn default() -> Self {
        Self {
            radius: 0.1,
            rays: 8,
            t: LogGrid::new(1e-4, 1e4, 81),
            theta_constant: 1e2,
        }
    }
}

/// Checks the four properties of `φ̄` on `B_r(x₀)`; `ltilde = None` takes the measured hypothesis constant.
pub fn check_prop_phibar(
    phi: &dyn PhiFunction,
    phibar: &PhiBar,
    ltilde: Option<f64>,
    sample: &PhiBarSample,
) -> Result<PhiBarReport> {
    let (x0, t1, t2, p, q1) = (phibar.x0, phibar.t1, phibar.t2, phibar.p, phibar.q1);
    let pts = ball_points(x0, sample.radius, sample.rays);
    let lo = BallEnvelope {
        phi,
        points: pts.clone(),
        upper: false,
    };
    let hi = BallEnvelope {
        phi,
        points: pts.clone(),
        upper: true,
    };
    let middle = LogGrid::new(t1, t2, sample.t.points).values();
    let hypothesis_constant = middle
        .iter()
        .map(|&t| hi.eval(x0, t) / lo.eval(x0, t))
        .fold(1.0, f64::max);
    let ltilde = ltilde.unwrap_or(hypothesis_constant);
    let hypothesis_holds = hypothesis_constant <= ltilde * (1.0 + 1e-9);

    let grid = SampleGrid {
        t: sample.t,
        xs: vec![x0],
    };
    let dbar = Derivative(phibar);
    let inc = check_condition(&dbar, Condition::Inc { gamma: p - 1.0 }, &grid)?;
    let dec = check_condition(&dbar, Condition::Dec { gamma: q1 - 1.0 }, &grid)?;
    let derivative_jump = phibar.derivative_jump();
    let item1 = inc.passed && dec.passed && derivative_jump < 1e-12;

    let mut upper_ratio = 0.0f64;
    let mut lower_constant = 0.0f64;
    for &t in &middle {
        let bar = phibar.eval(x0, t);
        upper_ratio = upper_ratio.max(bar / phi.eval(x0, t));
        lower_constant = lower_constant.max(hi.eval(x0, t) / bar);
    }
    let slack = 1.0 + 1e-9;
    let item2 = upper_ratio <= slack && lower_constant <= ltilde * slack;

    let mut item3_factor = 0.0f64;
    for t in LogGrid::new(t1, t1 * 1e8, 2 * sample.t.points).values() {
        let bar = phibar.eval(x0, t);
        item3_factor = item3_factor.max(bar / lo.eval(x0, t));
    }
    let item3_bound = q1 / p * ltilde;
    let item3 = item3_factor <= item3_bound * slack;

    let theta = Theta0 { phi, phibar };
    let tgrid = SampleGrid { t: sample.t, xs: pts };
    let c = sample.theta_constant;
    let a0 = check_condition_with(&theta, Condition::A0, &tgrid, c)?;
    let ainc = check_condition_with(&theta, Condition::AInc { gamma: 1.0 }, &tgrid, c)?;
    let adec = check_condition_with(&theta, Condition::ADec { gamma: q1 / p }, &tgrid, c)?;
    let item4 = a0.passed && ainc.passed && adec.passed;
    Ok(PhiBarReport {
        hypothesis_constant,
        ltilde,
        hypothesis_holds,
        inc_constant: inc.witnessed_constant,
        dec_constant: dec.witnessed_constant,
        derivative_jump,
        item1,
        upper_ratio,
        lower_constant,
        item2,
        item3_factor,
        item3_bound,
        item3,
        theta_a0: a0.witnessed_constant,
        theta_ainc: ainc.witnessed_constant,
        theta_adec: adec.witnessed_constant,
        item4,
        passed: hypothesis_holds && item1 && item2 && item3 && item4,
    })
}

/// `Ā_ε(ξ) = Ā((ε + |ξ|) ξ/|ξ|) |ξ| / (ε + |ξ|)`.
#[derive(Debug, Clone)]
pub struct Regularized<V> {
    pub inner: V,
    pub eps: f64,
}

/// `φ̄_ε' (t) = φ̄'(ε + t) t / (ε + t)`.
#[derive(Debug, Clone)]
pub struct RegularizedPhi<P> {
    pub inner: P,
    pub eps: f64,
}

pub fn regularize<V: VectorField, P: PhiFunction>(
    a: V,
    phi: P,
    eps: f64,
) -> Result<(Regularized<V>, RegularizedPhi<P>)> {
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Parameter {
            name: "eps".into(),
            reason: format!("must lie in [0, 1/2), got {eps}"),
        });
    }
    Ok((Regularized { inner: a, eps }, RegularizedPhi { inner: phi, eps }))
}

impl<V: VectorField> VectorField for Regularized<V> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eval(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        if self.eps == 0.0 {
            return self.inner.eval(x, xi);
        }
        let t = crate::structures::norm(xi);
        if t == 0.0 {
            return DVector::zeros(xi.len());
        }
        let s = self.eps + t;
        let z: Vec<f64> = xi.iter().map(|c| c * s / t).collect();
        self.inner.eval(x, &z) * (t / s)
    }

    fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        if self.eps == 0.0 {
            return self.inner.jacobian(x, xi);
        }
        let n = xi.len();
        let t = crate::structures::norm(xi);
        let (u, t) = if t == 0.0 {
            let mut e = vec![0.0; n];
            e[0] = 1.0;
            (e, 0.0)
        } else {
            (xi.iter().map(|c| c / t).collect::<Vec<_>>(), t)
        };
        let s = self.eps + t;
        let z: Vec<f64> = u.iter().map(|c| c * s).collect();
        let da = self.inner.jacobian(x, &z);
        let av = self.inner.eval(x, &z);
        // D(s u) = u uᵀ + (s/t)(I - u uᵀ); the factor t/s cancels on the tangent part
        let mut m = DMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let delta = if r == c { 1.0 } else { 0.0 };
                m[(r, c)] = (t / s) * u[r] * u[c] + (delta - u[r] * u[c]);
            }
        }
        let mut j = da * m;
        for r in 0..n {
            for c in 0..n {
                j[(r, c)] += av[r] * self.eps / (s * s) * u[c];
            }
        }
        j
    }

    fn constants(&self) -> StructureConstants {
        self.inner.constants()
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
}

impl<P: PhiFunction> PhiFunction for RegularizedPhi<P> {
    fn eval(&self, x: Point, t: f64) -> f64 {
        if self.eps == 0.0 {
            return self.inner.eval(x, t);
        }
        if t <= 0.0 {
            return 0.0;
        }
        integrate_graded(t, |s| self.deriv(x, s))
    }

    fn deriv(&self, x: Point, t: f64) -> f64 {
        if self.eps == 0.0 {
            return self.inner.deriv(x, t);
        }
        self.inner.deriv(x, self.eps + t) * t / (self.eps + t)
    }

    fn meta(&self) -> PhiMeta {
        self.inner.meta()
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{build_growth_function, GrowthOptions};
    use crate::phi::{DoublePhase, Power};
    use crate::profile::Profile;
    use crate::structures::Model;

    fn quadratic_cert() -> (Arc<dyn VectorField>, GrowthCertificate) {
        let a: Arc<dyn VectorField> = Arc::new(Model::p_laplace(2.0, 2));
        let cert = build_growth_function(a.clone(), &GrowthOptions::autonomous()).unwrap();
        (a, cert)
    }

    #[test]
    fn smoothsteps_hit_their_slopes() {
        assert_eq!(smoothstep3(0.5), [0.5, 1.5, 0.0]);
        let [v, d, _] = smoothstep5(0.5);
        assert!((v - 0.5).abs() < 1e-15 && (d - 1.875).abs() < 1e-15);
    }

    #[test]
    fn transition_bounds() {
        let (t1, t2) = (0.3, 5.0);
        let f = Transitions::new(TransitionKind::Field, t1, t2);
        for t in LogGrid::new(1e-3, 1e3, 2001).values() {
            let [e1, d1, _] = f.eta1(t);
            let [e2, d2, _] = f.eta2(t);
            let [e3, d3, _] = f.eta3(t);
            assert!((0.0..=1.0).contains(&e1) && (-2.0 / t1..=0.0).contains(&d1));
            assert!((0.0..=1.0).contains(&e2) && (-2.0 / t2..=0.0).contains(&d2));
            assert!((0.0..=1.0).contains(&e3) && (0.0..=4.0 / t2).contains(&d3));
        }
        let e = Transitions::new(TransitionKind::Energy, t1, t2);
        for t in LogGrid::new(1e-3, 1e3, 2001).values() {
            let [_, d1, dd1] = e.eta1(t);
            assert!(d1.abs() * t1 + dd1.abs() * t1 * t1 <= 10.0);
            let [_, d2, dd2] = e.eta2(t);
            assert!(d2.abs() * t2 + dd2.abs() * t2 * t2 <= 10.0);
            assert!(e.h(t)[1].abs() <= 10.0);
        }
        assert!(e.eta3(t2)[0] >= 1.0 / 3.0);
        // continuity of η₃ at 3t₂/4
        let m = 0.75 * t2;
        assert!((e.eta3(m * (1.0 - 1e-12))[0] - e.eta3(m)[0]).abs() < 1e-10);
        assert!(e.combination_bound().is_finite());
    }

    #[test]
    fn phibar_branch_arithmetic() {
        let a = Profile::constant(1.0).shared();
        let phi: SharedPhi = Arc::new(DoublePhase::new(2.0, 3.0, a));
        let bar = PhiBar::new(phi, [0.5, 0.5], 2.0, 3.0, 0.5, 2.0).unwrap();
        assert!((bar.a1 - 1.75).abs() < 1e-6);
        assert!((bar.deriv([0.0, 0.0], 0.25) - 0.875).abs() < 1e-6);
        assert!(PhiBar::new(bar.source().clone(), [0.5, 0.5], 2.0, 3.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn phibar_of_power_is_power() {
        let phi: SharedPhi = Arc::new(Power::new(3.0));
        let bar = PhiBar::new(phi.clone(), [0.5, 0.5], 3.0, 3.0, 0.2, 4.0).unwrap();
        for t in [0.05, 0.2, 1.0, 4.0, 30.0] {
            let want = phi.eval([0.5, 0.5], t);
            assert!((bar.eval([0.0, 0.0], t) - want).abs() <= 1e-9 * want, "t = {t}");
        }
    }

    #[test]
    fn abar_for_quadratic_matches_oracle() {
        let (a, cert) = quadratic_cert();
        let params = ApproxParams {
            x0: [0.5, 0.5],
            t1: 0.5,
            t2: 2.0,
        };
        let abar = build_abar(a.clone(), &cert, &params).unwrap();
        assert!((abar.bundle.lambda_bar - 8.0 * cert.lambda).abs() < 1e-12);
        // |ξ| = 1/4 below t₁: (ν/8)(a₁/t₁) ξ + ξ
        let xi = [0.25, 0.0];
        let v = abar.eval([0.0, 0.0], &xi);
        let want = cert.nu / 8.0 * abar.bundle.a1 / 0.5 * 0.25 + 0.25;
        assert!((v[0] - want).abs() < 1e-12);
        // annulus identity is exact
        let params = ApproxParams { t1: 0.25, ..params };
        let abar = build_abar(a.clone(), &cert, &params).unwrap();
        let xi = [0.7, -0.4];
        assert_eq!(abar.eval([0.0, 0.0], &xi), a.eval([0.5, 0.5], &xi));
        assert_eq!(abar.jacobian([0.0, 0.0], &xi), a.jacobian([0.5, 0.5], &xi));
    }

    #[test]
    fn abar_jacobian_matches_differences() {
        let a: Arc<dyn VectorField> = Arc::new(Model::p_laplace(3.0, 2));
        let cert = build_growth_function(a.clone(), &GrowthOptions::autonomous()).unwrap();
        let abar = build_abar(
            a,
            &cert,
            &ApproxParams {
                x0: [0.5, 0.5],
                t1: 0.3,
                t2: 3.0,
            },
        )
        .unwrap();
        for t in [0.2, 0.45, 2.0, 4.5, 8.0] {
            let xi = [0.6 * t, 0.8 * t];
            let j = abar.jacobian([0.0, 0.0], &xi);
            for c in 0..2 {
                let h = 1e-6 * t;
                let mut up = xi;
                up[c] += h;
                let mut dn = xi;
                dn[c] -= h;
                let d = (abar.eval([0.0, 0.0], &up) - abar.eval([0.0, 0.0], &dn)) / (2.0 * h);
                for r in 0..2 {
                    assert!((d[r] - j[(r, c)]).abs() < 1e-5 * j.norm(), "t = {t}");
                }
            }
        }
    }

    #[test]
    fn regularize_fixed_points() {
        let id = crate::structures::FnField::new(
            2,
            StructureConstants { p: 2.0, q: 2.0, l: 1.0 },
            |_, xi| DVector::from_column_slice(xi),
            |_, _| DMatrix::identity(2, 2),
        );
        let (r, _) = regularize(id, Power::new(2.0), 0.1).unwrap();
        let v = r.eval([0.0, 0.0], &[0.3, -0.2]);
        assert!((v[0] - 0.3).abs() < 1e-15 && (v[1] + 0.2).abs() < 1e-15);
        let eps = 0.01;
        let (r3, _) = regularize(Model::p_laplace(3.0, 2), Power::new(3.0), eps).unwrap();
        let v = r3.eval([0.0, 0.0], &[eps, 0.0]);
        assert!((v.norm() - 2.0 * eps * eps).abs() < 1e-15);
        assert!(regularize(Model::p_laplace(3.0, 2), Power::new(3.0), 0.7).is_err());
    }
}
