//! Nonlinearities `A(x, ξ)`, Lagrangians `F(x, ξ)` and the built-in model families.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phi::PhiFunction;
use crate::profile::{Profile, ScalarField, SharedField};
use crate::sampling::{self, Directions, LogGrid};
use crate::Point;

/// Structure constants `(p, q, L)` of the `(p, q)`-growth condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureConstants {
    pub p: f64,
    pub q: f64,
    pub l: f64,
}

/// A nonlinearity `A(x, ξ)` with Jacobian `D_ξ A`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: Point, xi: &[f64]) -> DVector<f64>;
    /// `D_ξ A(x, ξ)`; only meaningful for `ξ != 0`.
    fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64>;
    fn constants(&self) -> StructureConstants;

    fn is_autonomous(&self) -> bool {
        false
    }

    fn eval2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] {
        let v = self.eval(x, &xi);
        [v[0], v[1]]
    }

    fn jacobian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] {
        let j = self.jacobian(x, &xi);
        [[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]]
    }
}

/// A Lagrangian `F(x, ξ)` with gradient and Hessian in `ξ`.
pub trait Lagrangian: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: Point, xi: &[f64]) -> f64;
    fn gradient(&self, x: Point, xi: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: Point, xi: &[f64]) -> DMatrix<f64>;
    fn constants(&self) -> StructureConstants;

    fn is_autonomous(&self) -> bool {
        false
    }

    fn gradient2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] {
        let v = self.gradient(x, &xi);
        [v[0], v[1]]
    }

    fn hessian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] {
        let j = self.hessian(x, &xi);
        [[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]]
    }
}

macro_rules! forward_structures {
    ($($ty:ty),*) => {$(
        impl<V: VectorField + ?Sized> VectorField for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn eval(&self, x: Point, xi: &[f64]) -> DVector<f64> { (**self).eval(x, xi) }
            fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> { (**self).jacobian(x, xi) }
            fn constants(&self) -> StructureConstants { (**self).constants() }
            fn is_autonomous(&self) -> bool { (**self).is_autonomous() }
            fn eval2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] { (**self).eval2(x, xi) }
            fn jacobian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] { (**self).jacobian2(x, xi) }
        }
    )*};
}

forward_structures!(&V, Box<V>, Arc<V>);

macro_rules! forward_lagrangian {
    ($($ty:ty),*) => {$(
        impl<F: Lagrangian + ?Sized> Lagrangian for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn eval(&self, x: Point, xi: &[f64]) -> f64 { (**self).eval(x, xi) }
            fn gradient(&self, x: Point, xi: &[f64]) -> DVector<f64> { (**self).gradient(x, xi) }
            fn hessian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> { (**self).hessian(x, xi) }
            fn constants(&self) -> StructureConstants { (**self).constants() }
            fn is_autonomous(&self) -> bool { (**self).is_autonomous() }
            fn gradient2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] { (**self).gradient2(x, xi) }
            fn hessian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] { (**self).hessian2(x, xi) }
        }
    )*};
}

forward_lagrangian!(&F, Box<F>, Arc<F>);

/// Declarative description of a built-in model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `F = |ξ|^p / p`, `A = |ξ|^{p-2} ξ`.
    PLaplace {
        p: f64,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `F = |ξ|^{p(x)} / p(x)`.
    VariableExponent {
        exponent: Profile,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `F = |ξ|^p + a(x) |ξ|^q`.
    DoublePhase {
        p: f64,
        q: f64,
        a: Profile,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `F = |ξ|^p log(e + |ξ|) + a(x) |ξ|^q`.
    OrliczDoublePhase {
        p: f64,
        q: f64,
        a: Profile,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `F = γ(x) H(x, N(ξ))` with `H(x, t) = t^p + a(x) t^q` and
    /// `N(ξ) = (Σ ξ_i⁴ + δ |ξ|⁴)^{1/4}`; `literal` uses `H(x, Σ ξ_i⁴)` instead.
    AnisoQuartic {
        p: f64,
        q: f64,
        a: Profile,
        gamma: Profile,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default)]
        literal: bool,
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_dim() -> usize {
    2
}

fn default_delta() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn family(&self) -> &'static str {
        match self {
            ModelSpec::PLaplace { .. } => "p_laplace",
            ModelSpec::VariableExponent { .. } => "variable_exponent",
            ModelSpec::DoublePhase { .. } => "double_phase",
            ModelSpec::OrliczDoublePhase { .. } => "orlicz_double_phase",
            ModelSpec::AnisoQuartic { .. } => "aniso_quartic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, reason: String| {
            Err(Error::Parameter {
                name: name.to_string(),
                reason,
            })
        };
        let profile = |name: &str, p: &Profile| {
            p.validate().map_err(|reason| Error::Parameter {
                name: name.to_string(),
                reason,
            })
        };
        let dim = match self {
            ModelSpec::PLaplace { dim, .. }
            | ModelSpec::VariableExponent { dim, .. }
            | ModelSpec::DoublePhase { dim, .. }
            | ModelSpec::OrliczDoublePhase { dim, .. }
            | ModelSpec::AnisoQuartic { dim, .. } => *dim,
        };
        if dim < 2 {
            return bad("dim", format!("need n >= 2, got {dim}"));
        }
        match self {
            ModelSpec::PLaplace { p, .. } => {
                if !(*p > 1.0 && p.is_finite()) {
                    return bad("p", format!("need 1 < p < inf, got {p}"));
                }
            }
            ModelSpec::VariableExponent { exponent, .. } => {
                profile("exponent", exponent)?;
                let (lo, hi) = exponent.range_on_domain();
                if !(lo > 1.0 && hi.is_finite()) {
                    return bad("exponent", format!("need 1 < p- <= p+ < inf, got range [{lo}, {hi}]"));
                }
            }
            ModelSpec::DoublePhase { p, q, a, .. }
            | ModelSpec::OrliczDoublePhase { p, q, a, .. }
            | ModelSpec::AnisoQuartic { p, q, a, .. } => {
                if !(*p > 1.0 && p.is_finite()) {
                    return bad("p", format!("need 1 < p < inf, got {p}"));
                }
                if !(*q >= *p && q.is_finite()) {
                    return bad("q", format!("need p <= q < inf, got q = {q}, p = {p}"));
                }
                profile("a", a)?;
                let (lo, _) = a.range_on_domain();
                if lo < 0.0 {
                    return bad("a", format!("need a >= 0, got minimum {lo}"));
                }
                if let ModelSpec::AnisoQuartic { gamma, delta, .. } = self {
                    profile("gamma", gamma)?;
                    let (glo, _) = gamma.range_on_domain();
                    if glo <= 0.0 {
                        return bad("gamma", format!("need gamma- > 0, got minimum {glo}"));
                    }
                    if !(*delta >= 0.0 && delta.is_finite()) {
                        return bad("delta", format!("need delta >= 0, got {delta}"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Registry entry describing a model family.
#[derive(Debug, Clone, Serialize)]
pub struct FamilyInfo {
    pub name: &'static str,
    pub summary: &'static str,
    pub parameters: Vec<(&'static str, &'static str)>,
    pub example: ModelSpec,
}

pub fn registry() -> Vec<FamilyInfo> {
    let two = 2;
    vec![
        FamilyInfo {
            name: "p_laplace",
            summary: "F = |xi|^p / p, A = |xi|^(p-2) xi",
            parameters: vec![("p", "exponent > 1"), ("dim", "dimension >= 2 (default 2)")],
            example: ModelSpec::PLaplace { p: 3.0, dim: two },
        },
        FamilyInfo {
            name: "variable_exponent",
            summary: "F = |xi|^p(x) / p(x)",
            parameters: vec![
                ("exponent", "profile p(x) with 1 < p- <= p+"),
                ("dim", "dimension >= 2 (default 2)"),
            ],
            example: ModelSpec::VariableExponent {
                exponent: Profile::Linear {
                    base: 2.0,
                    slope: 0.3,
                    axis: 0,
                },
                dim: two,
            },
        },
        FamilyInfo {
            name: "double_phase",
            summary: "F = |xi|^p + a(x) |xi|^q",
            parameters: vec![
                ("p", "lower exponent > 1"),
                ("q", "upper exponent >= p"),
                ("a", "nonnegative profile a(x)"),
                ("dim", "dimension >= 2 (default 2)"),
            ],
            example: ModelSpec::DoublePhase {
                p: 2.0,
                q: 3.0,
                a: Profile::Clipped {
                    base: 0.0,
                    slope: 1.0,
                    axis: 0,
                    lo: 0.0,
                    hi: 1.0,
                },
                dim: two,
            },
        },
        FamilyInfo {
            name: "orlicz_double_phase",
            summary: "F = |xi|^p log(e + |xi|) + a(x) |xi|^q",
            parameters: vec![
                ("p", "lower exponent > 1"),
                ("q", "upper exponent >= p"),
                ("a", "nonnegative profile a(x)"),
                ("dim", "dimension >= 2 (default 2)"),
            ],
            example: ModelSpec::OrliczDoublePhase {
                p: 2.0,
                q: 3.0,
                a: Profile::HolderBump {
                    base: 0.0,
                    amplitude: 1.0,
                    beta: 1.0,
                    center: [0.5, 0.5],
                },
                dim: two,
            },
        },
        FamilyInfo {
            name: "aniso_quartic",
            summary: "F = gamma(x) H(x, (sum xi_i^4 + delta |xi|^4)^(1/4)), H = t^p + a(x) t^q",
            parameters: vec![
                ("p", "lower exponent > 1"),
                ("q", "upper exponent >= p"),
                ("a", "nonnegative profile a(x)"),
                ("gamma", "positive weight gamma(x)"),
                ("delta", "isotropic admixture >= 0 (default 1)"),
                ("literal", "use H(x, sum xi_i^4) (default false)"),
                ("dim", "dimension >= 2 (default 2)"),
            ],
            example: ModelSpec::AnisoQuartic {
                p: 2.0,
                q: 2.5,
                a: Profile::constant(0.0),
                gamma: Profile::Smoothstep {
                    from: 1.0,
                    to: 2.0,
                    axis: 1,
                    lo: 0.0,
                    hi: 1.0,
                },
                delta: 1.0,
                literal: false,
                dim: two,
            },
        },
    ]
}

#[derive(Clone)]
enum Density {
    Power {
        p: f64,
    },
    VariableExponent {
        p: SharedField,
    },
    DoublePhase {
        p: f64,
        q: f64,
        a: SharedField,
    },
    OrliczDoublePhase {
        p: f64,
        q: f64,
        a: SharedField,
    },
    AnisoQuartic {
        p: f64,
        q: f64,
        a: SharedField,
        gamma: SharedField,
        delta: f64,
        literal: bool,
    },
}

/// Tiny radius substituted for `|ξ| = 0` where a Hessian is requested anyway.
const ORIGIN_PROBE: f64 = 1e-150;

/// A built model: a Lagrangian `F` together with `A = D_ξ F`.
#[derive(Clone)]
pub struct Model {
    family: &'static str,
    density: Density,
    dim: usize,
    constants: StructureConstants,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("family", &self.family)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .finish()
    }
}

pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let model = match spec.clone() {
        ModelSpec::PLaplace { p, dim } => Model::p_laplace(p, dim),
        ModelSpec::VariableExponent { exponent, dim } => Model::variable_exponent(exponent.shared(), dim),
        ModelSpec::DoublePhase { p, q, a, dim } => Model::double_phase(p, q, a.shared(), dim),
        ModelSpec::OrliczDoublePhase { p, q, a, dim } => Model::orlicz_double_phase(p, q, a.shared(), dim),
        ModelSpec::AnisoQuartic {
            p,
            q,
            a,
            gamma,
            delta,
            literal,
            dim,
        } => Model::aniso_quartic(p, q, a.shared(), gamma.shared(), delta, literal, dim),
    };
    Ok(model)
}

fn power_ratio(lo: f64, hi: f64) -> f64 {
    (hi - 1.0).max(1.0) / (lo - 1.0).min(1.0)
}

impl Model {
    pub fn p_laplace(p: f64, dim: usize) -> Self {
        Self {
            family: "p_laplace",
            density: Density::Power { p },
            dim,
            constants: StructureConstants {
                p,
                q: p,
                l: power_ratio(p, p),
            },
        }
    }

    pub fn variable_exponent(p: SharedField, dim: usize) -> Self {
        let (lo, hi) = p.range_on_domain();
        Self {
            family: "variable_exponent",
            density: Density::VariableExponent { p },
            dim,
            constants: StructureConstants {
                p: lo,
                q: hi,
                l: power_ratio(lo, hi),
            },
        }
    }

    pub fn double_phase(p: f64, q: f64, a: SharedField, dim: usize) -> Self {
        Self {
            family: "double_phase",
            density: Density::DoublePhase { p, q, a },
            dim,
            constants: StructureConstants {
                p,
                q,
                l: power_ratio(p, q),
            },
        }
    }

    pub fn orlicz_double_phase(p: f64, q: f64, a: SharedField, dim: usize) -> Self {
        // t/((e+t) log(e+t)) stays below 1/3, so the log factor adds at most 1/3 to q
        let q_eff = q.max(p + 1.0 / 3.0);
        Self {
            family: "orlicz_double_phase",
            density: Density::OrliczDoublePhase { p, q, a },
            dim,
            constants: StructureConstants {
                p,
                q: q_eff,
                l: power_ratio(p, q_eff) * 2.0,
            },
        }
    }

    pub fn aniso_quartic(
        p: f64,
        q: f64,
        a: SharedField,
        gamma: SharedField,
        delta: f64,
        literal: bool,
        dim: usize,
    ) -> Self {
        let (p_eff, q_eff) = if literal { (4.0 * p, 4.0 * q) } else { (p, q) };
        let mut model = Self {
            family: "aniso_quartic",
            density: Density::AnisoQuartic {
                p,
                q,
                a,
                gamma,
                delta,
                literal,
            },
            dim,
            constants: StructureConstants {
                p: p_eff,
                q: q_eff,
                l: f64::NAN,
            },
        };
        let sample = SphereSample {
            xs: vec![[0.5, 0.5]],
            radii: LogGrid::new(1e-2, 1e2, 5),
            directions: 64,
            seed: 0,
        };
        model.constants.l = check_quasi_isotropy(&model, &sample)
            .map(|r| r.constant * power_ratio(p, q))
            .unwrap_or(f64::INFINITY);
        model
    }

    pub fn family(&self) -> &'static str {
        self.family
    }

    /// `(G, G', G'')` of the radial profile `F = G(x, |ξ|)`; `None` for anisotropic models.
    fn radial(&self, x: Point, t: f64) -> Option<[f64; 3]> {
        match &self.density {
            Density::Power { p } => Some(power_over_p(*p, t)),
            Density::VariableExponent { p } => Some(power_over_p(p.value(x), t)),
            Density::DoublePhase { p, q, a } => Some(double_phase(*p, *q, a.value(x), t)),
            Density::OrliczDoublePhase { p, q, a } => {
                let l = (std::f64::consts::E + t).ln();
                let e_t = std::f64::consts::E + t;
                let tp = t.powf(*p);
                let tp1 = pow_or_zero(t, *p - 1.0);
                let tp2 = t.powf(*p - 2.0);
                let g = tp * l;
                let g1 = p * tp1 * l + tp / e_t;
                let g2 = p * (p - 1.0) * tp2 * l + 2.0 * p * tp1 / e_t - tp / (e_t * e_t);
                let [h, h1, h2] = double_phase(*q, *q, a.value(x), t);
                let [b, b1, b2] = double_phase(*q, *q, 0.0, t);
                // `double_phase(q, q, a, t) - double_phase(q, q, 0, t)` is the a|ξ|^q part
                Some([g + h - b, g1 + h1 - b1, g2 + h2 - b2])
            }
            Density::AnisoQuartic { .. } => None,
        }
    }

    fn aniso_value(&self, x: Point, xi: &[f64]) -> f64 {
        let Density::AnisoQuartic {
            p,
            q,
            a,
            gamma,
            delta,
            literal,
        } = &self.density
        else {
            unreachable!("aniso_value on a radial model")
        };
        let m: f64 = xi.iter().map(|c| c.powi(4)).sum();
        let arg = if *literal {
            m
        } else {
            let r2: f64 = xi.iter().map(|c| c * c).sum();
            (m + delta * r2 * r2).powf(0.25)
        };
        gamma.value(x) * double_phase(*p, *q, a.value(x), arg)[0]
    }

    /// Quartic anisotropy: returns `(F, ∇F, D²F)`.
    fn aniso_parts(&self, x: Point, xi: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let Density::AnisoQuartic {
            p,
            q,
            a,
            gamma,
            delta,
            literal,
        } = &self.density
        else {
            unreachable!("aniso_parts on a radial model")
        };
        let n = xi.len();
        let g = gamma.value(x);
        let av = a.value(x);
        let v = DVector::from_column_slice(xi);
        let r2 = v.norm_squared();
        if *literal {
            let m: f64 = xi.iter().map(|c| c.powi(4)).sum();
            let [h, h1, h2] = double_phase(*p, *q, av, m);
            let dm = DVector::from_iterator(n, xi.iter().map(|c| 4.0 * c.powi(3)));
            let d2m = DMatrix::from_diagonal(&DVector::from_iterator(n, xi.iter().map(|c| 12.0 * c * c)));
            let grad = &dm * (g * h1);
            let hess = (&dm * dm.transpose()) * (g * h2) + d2m * (g * h1);
            return (g * h, grad, hess);
        }
        let m: f64 = xi.iter().map(|c| c.powi(4)).sum::<f64>() + delta * r2 * r2;
        let nn = m.powf(0.25);
        let [h, h1, h2] = double_phase(*p, *q, av, nn);
        if nn == 0.0 {
            return (0.0, DVector::zeros(n), DMatrix::zeros(n, n));
        }
        // ∇N = N^{-3} w,  D²N = N^{-3} W - 3 N^{-7} w⊗w
        let w = DVector::from_iterator(n, xi.iter().map(|c| c.powi(3) + delta * r2 * c));
        let mut big_w = DMatrix::from_diagonal(&DVector::from_iterator(n, xi.iter().map(|c| 3.0 * c * c + delta * r2)));
        big_w += (&v * v.transpose()) * (2.0 * delta);
        let n3 = nn.powi(-3);
        let grad_n = &w * n3;
        let hess_n = big_w * n3 - (&w * w.transpose()) * (3.0 * nn.powi(-7));
        let grad = &grad_n * (g * h1);
        let hess = (&grad_n * grad_n.transpose()) * (g * h2) + hess_n * (g * h1);
        (g * h, grad, hess)
    }

    fn radial_hessian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        let n = xi.len();
        let v = DVector::from_column_slice(xi);
        let t = v.norm();
        if t == 0.0 {
            let [_, g1, _] = self.radial(x, ORIGIN_PROBE).unwrap();
            return DMatrix::identity(n, n) * (g1 / ORIGIN_PROBE);
        }
        let [_, g1, g2] = self.radial(x, t).unwrap();
        let e = v / t;
        let ee = &e * e.transpose();
        let iso = g1 / t;
        DMatrix::identity(n, n) * iso + ee * (g2 - iso)
    }
}

fn pow_or_zero(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        if e > 0.0 {
            0.0
        } else if e == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        t.powf(e)
    }
}

/// `(t^p/p, t^{p-1}, (p-1) t^{p-2})`
fn power_over_p(p: f64, t: f64) -> [f64; 3] {
    [
        t.powf(p) / p,
        pow_or_zero(t, p - 1.0),
        (p - 1.0) * pow_or_zero(t, p - 2.0),
    ]
}

/// `H(t) = t^p + a t^q` and its first two derivatives.
fn double_phase(p: f64, q: f64, a: f64, t: f64) -> [f64; 3] {
    let aq = if a == 0.0 { 0.0 } else { 1.0 };
    [
        t.powf(p) + a * t.powf(q),
        p * pow_or_zero(t, p - 1.0) + aq * q * a * pow_or_zero(t, q - 1.0),
        p * (p - 1.0) * pow_or_zero(t, p - 2.0) + aq * q * (q - 1.0) * a * pow_or_zero(t, q - 2.0),
    ]
}

fn field_is_constant(f: &SharedField) -> bool {
    f.is_constant()
}

impl Lagrangian for Model {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: Point, xi: &[f64]) -> f64 {
        let t = norm(xi);
        match self.radial(x, t) {
            Some([g, _, _]) => g,
            None => self.aniso_value(x, xi),
        }
    }

    fn gradient(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        let t = norm(xi);
        match self.radial(x, t) {
            Some([_, g1, _]) => {
                if t == 0.0 {
                    DVector::zeros(xi.len())
                } else {
                    DVector::from_column_slice(xi) * (g1 / t)
                }
            }
            None => self.aniso_parts(x, xi).1,
        }
    }

    fn hessian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        match self.density {
            Density::AnisoQuartic { .. } => {
                if norm(xi) == 0.0 {
                    let mut probe = vec![0.0; xi.len()];
                    probe[0] = ORIGIN_PROBE;
                    return self.aniso_parts(x, &probe).2;
                }
                self.aniso_parts(x, xi).2
            }
            _ => self.radial_hessian(x, xi),
        }
    }

    fn constants(&self) -> StructureConstants {
        self.constants
    }

    fn is_autonomous(&self) -> bool {
        match &self.density {
            Density::Power { .. } => true,
            Density::VariableExponent { p } => field_is_constant(p),
            Density::DoublePhase { a, .. } | Density::OrliczDoublePhase { a, .. } => field_is_constant(a),
            Density::AnisoQuartic { a, gamma, .. } => field_is_constant(a) && field_is_constant(gamma),
        }
    }

    fn gradient2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] {
        let t = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        match self.radial(x, t) {
            Some([_, g1, _]) => {
                if t == 0.0 {
                    [0.0, 0.0]
                } else {
                    let s = g1 / t;
                    [xi[0] * s, xi[1] * s]
                }
            }
            None => {
                let g = self.aniso_parts(x, &xi).1;
                [g[0], g[1]]
            }
        }
    }

    fn hessian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] {
        let t = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        if matches!(self.density, Density::AnisoQuartic { .. }) {
            let h = Lagrangian::hessian(self, x, &xi);
            return [[h[(0, 0)], h[(0, 1)]], [h[(1, 0)], h[(1, 1)]]];
        }
        if t == 0.0 {
            let [_, g1, _] = self.radial(x, ORIGIN_PROBE).unwrap();
            let iso = g1 / ORIGIN_PROBE;
            return [[iso, 0.0], [0.0, iso]];
        }
        let [_, g1, g2] = self.radial(x, t).unwrap();
        let iso = g1 / t;
        let e = [xi[0] / t, xi[1] / t];
        let d = g2 - iso;
        [
            [iso + d * e[0] * e[0], d * e[0] * e[1]],
            [d * e[1] * e[0], iso + d * e[1] * e[1]],
        ]
    }
}

impl VectorField for Model {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        Lagrangian::gradient(self, x, xi)
    }

    fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        Lagrangian::hessian(self, x, xi)
    }

    fn constants(&self) -> StructureConstants {
        self.constants
    }

    fn is_autonomous(&self) -> bool {
        Lagrangian::is_autonomous(self)
    }

    fn eval2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] {
        self.gradient2(x, xi)
    }

    fn jacobian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] {
        self.hessian2(x, xi)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `D_ξ F` of a Lagrangian as a nonlinearity.
pub struct GradientField<F>(pub F);

impl<F: Lagrangian> VectorField for GradientField<F> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        self.0.gradient(x, xi)
    }

    fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        self.0.hessian(x, xi)
    }

    fn constants(&self) -> StructureConstants {
        self.0.constants()
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }

    fn eval2(&self, x: Point, xi: [f64; 2]) -> [f64; 2] {
        self.0.gradient2(x, xi)
    }

    fn jacobian2(&self, x: Point, xi: [f64; 2]) -> [[f64; 2]; 2] {
        self.0.hessian2(x, xi)
    }
}

type FieldFn = Box<dyn Fn(Point, &[f64]) -> DVector<f64> + Send + Sync>;
type JacobianFn = Box<dyn Fn(Point, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// A nonlinearity given by closures, for non-variational or ad hoc fields.
pub struct FnField {
    dim: usize,
    eval: FieldFn,
    jacobian: JacobianFn,
    constants: StructureConstants,
    autonomous: bool,
}

impl FnField {
    pub fn new(
        dim: usize,
        constants: StructureConstants,
        eval: impl Fn(Point, &[f64]) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(Point, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Box::new(eval),
            jacobian: Box::new(jacobian),
            constants,
            autonomous: false,
        }
    }

    pub fn autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        (self.eval)(x, xi)
    }

    fn jacobian(&self, x: Point, xi: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(x, xi)
    }

    fn constants(&self) -> StructureConstants {
        self.constants
    }

    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
}

/// A map `(x, ξ) -> G(x, ξ)` whose `x`-continuity is probed.
pub trait VectorMap: Send + Sync {
    fn value(&self, x: Point, xi: &[f64]) -> DVector<f64>;

    fn magnitude(&self, x: Point, xi: &[f64]) -> f64 {
        self.value(x, xi).norm()
    }

    fn is_autonomous(&self) -> bool {
        false
    }
}

impl<M: VectorMap + ?Sized> VectorMap for &M {
    fn value(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        (**self).value(x, xi)
    }

    fn magnitude(&self, x: Point, xi: &[f64]) -> f64 {
        (**self).magnitude(x, xi)
    }

    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
}

/// `A^{(-1)}(x, ξ) = |ξ| A(x, ξ)`.
pub struct AMinusOne<V>(pub V);

pub fn a_minus_one<V: VectorField>(a: V) -> AMinusOne<V> {
    AMinusOne(a)
}

impl<V: VectorField> VectorMap for AMinusOne<V> {
    fn value(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        let t = norm(xi);
        if t == 0.0 {
            return DVector::zeros(xi.len());
        }
        self.0.eval(x, xi) * t
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }
}

/// `A` itself as a probed map.
pub struct FieldMap<V>(pub V);

impl<V: VectorField> VectorMap for FieldMap<V> {
    fn value(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        self.0.eval(x, xi)
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }
}

/// The scalar `F(x, ξ)` as a probed map.
pub struct EnergyMap<F>(pub F);

impl<F: Lagrangian> VectorMap for EnergyMap<F> {
    fn value(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.0.eval(x, xi))
    }

    fn magnitude(&self, x: Point, xi: &[f64]) -> f64 {
        self.0.eval(x, xi).abs()
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }
}

/// `φ(x, |ξ|)` as a probed map.
pub struct PhiMap<P>(pub P);

impl<P: PhiFunction> VectorMap for PhiMap<P> {
    fn value(&self, x: Point, xi: &[f64]) -> DVector<f64> {
        DVector::from_element(1, self.0.eval(x, norm(xi)))
    }

    fn magnitude(&self, x: Point, xi: &[f64]) -> f64 {
        self.0.eval(x, norm(xi)).abs()
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }
}

/// Sample description for sphere sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SphereSample {
    pub xs: Vec<Point>,
    pub radii: LogGrid,
    pub directions: usize,
    pub seed: u64,
}

impl Default for SphereSample {
    fn default() -> Self {
        Self {
            xs: sampling::lattice(3),
            radii: LogGrid::new(1e-3, 1e3, 13),
            directions: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    /// Smallest `L` with `|D A(x, ξ')| <= L D A(x, ξ) e·e` on the samples.
    pub constant: f64,
    /// `sup λ_max / inf λ_min` of the symmetrized Jacobian over each sphere.
    pub eigen_ratio: f64,
    /// `(t, constant on the sphere |ξ| = t)`, maximized over `x`.
    pub per_radius: Vec<(f64, f64)>,
    pub worst_x: Point,
    pub worst_t: f64,
}

/// Quasi-isotropy sweep over `x`, radii and sphere directions.
pub fn check_quasi_isotropy<V: VectorField + ?Sized>(a: &V, sample: &SphereSample) -> Result<IsotropyReport> {
    sample.radii.validate()?;
    let n = a.dim();
    let dirs = Directions::new(n, sample.seed).take(sample.directions.max(1));
    let radii = sample.radii.values();
    let mut constant: f64 = 0.0;
    let mut eigen_ratio: f64 = 0.0;
    let mut per_radius = vec![(0.0, 0.0); radii.len()];
    let mut worst = (sample.xs.first().copied().unwrap_or([0.5, 0.5]), radii[0]);
    for &x in &sample.xs {
        for (k, &t) in radii.iter().enumerate() {
            let mut sup_norm: f64 = 0.0;
            let mut min_form = f64::INFINITY;
            let mut sup_eig: f64 = 0.0;
            for d in &dirs {
                let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
                let j = a.jacobian(x, &xi);
                if j.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Ellipticity {
                        x,
                        radius: t,
                        eigenvalue: f64::NAN,
                    });
                }
                let sym = (&j + j.transpose()) * 0.5;
                let eig = sym.symmetric_eigenvalues();
                let lo = eig.min();
                if lo <= 0.0 {
                    return Err(Error::Ellipticity {
                        x,
                        radius: t,
                        eigenvalue: lo,
                    });
                }
                sup_norm = sup_norm.max(j.singular_values().max());
                min_form = min_form.min(lo);
                sup_eig = sup_eig.max(eig.max());
            }
            let c = sup_norm / min_form;
            eigen_ratio = eigen_ratio.max(sup_eig / min_form);
            if c > per_radius[k].1 {
                per_radius[k] = (t, c);
            }
            per_radius[k].0 = t;
            if c > constant {
                constant = c;
                worst = (x, t);
            }
        }
    }
    Ok(IsotropyReport {
        constant,
        eigen_ratio,
        per_radius,
        worst_x: worst.0,
        worst_t: worst.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn p2_is_identity() {
        let m = Model::p_laplace(2.0, 2);
        let j = VectorField::jacobian(&m, [0.3, 0.3], &[0.7, -1.2]);
        assert_relative_eq!(j, DMatrix::identity(2, 2), epsilon = 1e-14);
        let r = check_quasi_isotropy(&m, &SphereSample::default()).unwrap();
        assert_relative_eq!(r.constant, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn p3_eigenvalues() {
        let m = Model::p_laplace(3.0, 2);
        let t = 1.7;
        let j = VectorField::jacobian(&m, [0.5, 0.5], &[t * 0.6, t * 0.8]);
        let mut e: Vec<f64> = j.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        assert_relative_eq!(e[0], t, epsilon = 1e-12);
        assert_relative_eq!(e[1], 2.0 * t, epsilon = 1e-12);
        let r = check_quasi_isotropy(&m, &SphereSample::default()).unwrap();
        assert_relative_eq!(r.constant, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn double_phase_energy_example() {
        let spec = ModelSpec::DoublePhase {
            p: 2.0,
            q: 3.0,
            a: Profile::Clipped {
                base: 0.0,
                slope: 1.0,
                axis: 0,
                lo: 0.0,
                hi: 1.0,
            },
            dim: 2,
        };
        let m = build_model(&spec).unwrap();
        assert_relative_eq!(Lagrangian::eval(&m, [0.5, 0.0], &[1.0, 0.0]), 1.5);
    }

    #[test]
    fn a_minus_one_examples() {
        let m = Model::p_laplace(2.0, 2);
        let v = a_minus_one(&m).value([0.5, 0.5], &[2.0, 0.0]);
        assert_relative_eq!(v[0], 4.0);
        let m3 = Model::p_laplace(3.0, 2);
        let v = a_minus_one(&m3).value([0.5, 0.5], &[1.0, 1.0]);
        assert_relative_eq!(v[0], 2.0, epsilon = 1e-14);
        assert_relative_eq!(v[1], 2.0, epsilon = 1e-14);
        assert_eq!(a_minus_one(&m3).value([0.5, 0.5], &[0.0, 0.0]).norm(), 0.0);
    }

    #[test]
    fn invalid_specs_name_the_bound() {
        let e = build_model(&ModelSpec::PLaplace { p: 0.5, dim: 2 }).unwrap_err();
        assert!(matches!(e, Error::Parameter { ref name, .. } if name == "p"));
        let e = build_model(&ModelSpec::DoublePhase {
            p: 2.0,
            q: 3.0,
            a: Profile::constant(-1.0),
            dim: 2,
        })
        .unwrap_err();
        assert!(matches!(e, Error::Parameter { ref name, .. } if name == "a"));
    }

    #[test]
    fn literal_quartic_is_degenerate_on_axes() {
        let m = Model::aniso_quartic(
            2.0,
            2.0,
            Profile::constant(0.0).shared(),
            Profile::constant(1.0).shared(),
            0.0,
            true,
            2,
        );
        let j = Lagrangian::hessian(&m, [0.5, 0.5], &[1.0, 0.0]);
        assert!(j.symmetric_eigenvalues().min().abs() < 1e-12);
    }

    #[test]
    fn registry_lists_every_family() {
        let names: Vec<_> = registry().iter().map(|f| f.name).collect();
        assert_eq!(names.len(), 5);
        for f in registry() {
            assert_eq!(f.example.family(), f.name);
            build_model(&f.example).unwrap();
        }
    }
}
