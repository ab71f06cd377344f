//! Generalized Φ-functions `φ(x, t)`: evaluation, inverses, conjugates and the
//! almost-monotonicity conditions.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::SharedField;
use crate::sampling::{self, SampleGrid};
use crate::Point;

/// Declared structure data of a Φ-function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiMeta {
    pub p_lo: Option<f64>,
    pub q_hi: Option<f64>,
    /// Declared constant `L >= 1` used by (A0), (aInc) and (aDec) verdicts.
    pub constant: f64,
}

impl Default for PhiMeta {
    fn default() -> Self {
        Self {
            p_lo: None,
            q_hi: None,
            constant: 1.0,
        }
    }
}

impl PhiMeta {
    pub fn bounds(p: f64, q: f64, constant: f64) -> Self {
        Self {
            p_lo: Some(p),
            q_hi: Some(q),
            constant: constant.max(1.0),
        }
    }
}

/// Central difference with the scale-aware step `max(1e-8, 1e-6 t)`;
/// one-sided near `t = 0`.
pub fn central_difference(f: impl Fn(f64) -> f64, t: f64) -> f64 {
    let h = (1e-6 * t).max(1e-8);
    if t - h < 0.0 {
        return (f(t + h) - f(t)) / h;
    }
    (f(t + h) - f(t - h)) / (2.0 * h)
}

/// A possibly `x`-dependent Φ-function.
pub trait PhiFunction: Send + Sync {
    fn eval(&self, x: Point, t: f64) -> f64;

    /// Derivative in `t`.
    fn deriv(&self, x: Point, t: f64) -> f64 {
        central_difference(|s| self.eval(x, s), t)
    }

    fn meta(&self) -> PhiMeta {
        PhiMeta::default()
    }

    fn is_autonomous(&self) -> bool {
        false
    }
}

pub type SharedPhi = Arc<dyn PhiFunction>;

macro_rules! forward_phi {
    ($($ty:ty),*) => {$(
        impl<P: PhiFunction + ?Sized> PhiFunction for $ty {
            fn eval(&self, x: Point, t: f64) -> f64 { (**self).eval(x, t) }
            fn deriv(&self, x: Point, t: f64) -> f64 { (**self).deriv(x, t) }
            fn meta(&self) -> PhiMeta { (**self).meta() }
            fn is_autonomous(&self) -> bool { (**self).is_autonomous() }
        }
    )*};
}

forward_phi!(&P, Box<P>, Arc<P>);

/// `coeff * t^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power {
    pub coeff: f64,
    pub exponent: f64,
}

impl Power {
    pub fn new(exponent: f64) -> Self {
        Self { coeff: 1.0, exponent }
    }

    /// `t^p / p`.
    pub fn normalized(exponent: f64) -> Self {
        Self {
            coeff: 1.0 / exponent,
            exponent,
        }
    }

    pub fn scaled(coeff: f64, exponent: f64) -> Self {
        Self { coeff, exponent }
    }
}

impl PhiFunction for Power {
    fn eval(&self, _x: Point, t: f64) -> f64 {
        self.coeff * t.powf(self.exponent)
    }

    fn deriv(&self, _x: Point, t: f64) -> f64 {
        if t == 0.0 {
            return if self.exponent > 1.0 {
                0.0
            } else if self.exponent == 1.0 {
                self.coeff
            } else {
                f64::INFINITY
            };
        }
        self.coeff * self.exponent * t.powf(self.exponent - 1.0)
    }

    fn meta(&self) -> PhiMeta {
        PhiMeta::bounds(self.exponent, self.exponent, self.coeff.max(1.0 / self.coeff))
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Double phase `t^p + a(x) t^q`.
#[derive(Clone)]
pub struct DoublePhase {
    pub p: f64,
    pub q: f64,
    pub a: SharedField,
    a_max: f64,
}

impl DoublePhase {
    pub fn new(p: f64, q: f64, a: SharedField) -> Self {
        let a_max = a.range_on_domain().1.max(0.0);
        Self { p, q, a, a_max }
    }
}

impl PhiFunction for DoublePhase {
    fn eval(&self, x: Point, t: f64) -> f64 {
        t.powf(self.p) + self.a.value(x) * t.powf(self.q)
    }

    fn deriv(&self, x: Point, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        self.p * t.powf(self.p - 1.0) + self.q * self.a.value(x) * t.powf(self.q - 1.0)
    }

    fn meta(&self) -> PhiMeta {
        PhiMeta::bounds(self.p, self.q, 1.0 + self.a_max)
    }

    fn is_autonomous(&self) -> bool {
        self.a.is_constant()
    }
}

/// Variable exponent `t^{p(x)}`, optionally divided by `p(x)`.
#[derive(Clone)]
pub struct VariableExponent {
    pub exponent: SharedField,
    pub normalized: bool,
    range: (f64, f64),
}

impl VariableExponent {
    pub fn new(exponent: SharedField, normalized: bool) -> Self {
        let range = exponent.range_on_domain();
        Self {
            exponent,
            normalized,
            range,
        }
    }
}

impl PhiFunction for VariableExponent {
    fn eval(&self, x: Point, t: f64) -> f64 {
        let p = self.exponent.value(x);
        let v = t.powf(p);
        if self.normalized {
            v / p
        } else {
            v
        }
    }

    fn deriv(&self, x: Point, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let p = self.exponent.value(x);
        let d = t.powf(p - 1.0);
        if self.normalized {
            d
        } else {
            p * d
        }
    }

    fn meta(&self) -> PhiMeta {
        let l = if self.normalized { self.range.1 } else { 1.0 };
        PhiMeta::bounds(self.range.0, self.range.1, l)
    }

    fn is_autonomous(&self) -> bool {
        self.exponent.is_constant()
    }
}

type PhiFn = Box<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Φ-function given by closures.
pub struct FnPhi {
    eval: PhiFn,
    deriv: Option<PhiFn>,
    meta: PhiMeta,
    autonomous: bool,
}

impl FnPhi {
    pub fn new(eval: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Box::new(eval),
            deriv: None,
            meta: PhiMeta::default(),
            autonomous: false,
        }
    }

    pub fn autonomous(eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Box::new(move |_, t| eval(t)),
            deriv: None,
            meta: PhiMeta::default(),
            autonomous: true,
        }
    }

    pub fn with_deriv(mut self, deriv: impl Fn(Point, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.deriv = Some(Box::new(deriv));
        self
    }

    pub fn with_meta(mut self, meta: PhiMeta) -> Self {
        self.meta = meta;
        self
    }
}

impl PhiFunction for FnPhi {
    fn eval(&self, x: Point, t: f64) -> f64 {
        (self.eval)(x, t)
    }

    fn deriv(&self, x: Point, t: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(x, t),
            None => central_difference(|s| (self.eval)(x, s), t),
        }
    }

    fn meta(&self) -> PhiMeta {
        self.meta
    }

    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
}

/// The derivative `t -> φ'(x, t)` viewed as a function in its own right.
pub struct Derivative<P>(pub P);

impl<P: PhiFunction> PhiFunction for Derivative<P> {
    fn eval(&self, x: Point, t: f64) -> f64 {
        self.0.deriv(x, t)
    }

    fn meta(&self) -> PhiMeta {
        let m = self.0.meta();
        PhiMeta {
            p_lo: m.p_lo.map(|p| p - 1.0),
            q_hi: m.q_hi.map(|q| q - 1.0),
            constant: m.constant,
        }
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }
}

/// The conjugate `φ*`; evaluates to NaN where the supremum is not localized.
pub struct Conjugate<P>(pub P);

impl<P: PhiFunction> PhiFunction for Conjugate<P> {
    fn eval(&self, x: Point, s: f64) -> f64 {
        conjugate(&self.0, x, s).unwrap_or(f64::NAN)
    }

    fn meta(&self) -> PhiMeta {
        let m = self.0.meta();
        let dual = |e: f64| e / (e - 1.0);
        PhiMeta {
            p_lo: m.q_hi.map(dual),
            q_hi: m.p_lo.map(dual),
            constant: m.constant,
        }
    }

    fn is_autonomous(&self) -> bool {
        self.0.is_autonomous()
    }
}

/// Infimum (`φ⁻`) or supremum (`φ⁺`) of `φ(y, t)` over sample points of a ball.
pub struct BallEnvelope<P> {
    pub phi: P,
    pub points: Vec<Point>,
    pub upper: bool,
}

impl<P: PhiFunction> BallEnvelope<P> {
    pub fn inf(phi: P, center: Point, r: f64) -> Self {
        Self {
            phi,
            points: sampling::ball_points(center, r, 16),
            upper: false,
        }
    }

    pub fn sup(phi: P, center: Point, r: f64) -> Self {
        Self {
            phi,
            points: sampling::ball_points(center, r, 16),
            upper: true,
        }
    }

    fn pick(&self, f: impl Fn(Point) -> f64) -> f64 {
        let it = self.points.iter().map(|&y| f(y));
        if self.upper {
            it.fold(f64::NEG_INFINITY, f64::max)
        } else {
            it.fold(f64::INFINITY, f64::min)
        }
    }
}

impl<P: PhiFunction> PhiFunction for BallEnvelope<P> {
    fn eval(&self, _x: Point, t: f64) -> f64 {
        self.pick(|y| self.phi.eval(y, t))
    }

    fn deriv(&self, _x: Point, t: f64) -> f64 {
        self.pick(|y| self.phi.deriv(y, t))
    }

    fn meta(&self) -> PhiMeta {
        self.phi.meta()
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Conditions of Φ-function type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    A0,
    AInc { gamma: f64 },
    ADec { gamma: f64 },
    Inc { gamma: f64 },
    Dec { gamma: f64 },
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::A0 => write!(f, "A0"),
            Condition::AInc { gamma } => write!(f, "aInc({gamma})"),
            Condition::ADec { gamma } => write!(f, "aDec({gamma})"),
            Condition::Inc { gamma } => write!(f, "Inc({gamma})"),
            Condition::Dec { gamma } => write!(f, "Dec({gamma})"),
        }
    }
}

/// A sampled pair `t < s` at `x` (for (A0), `t = s = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Point,
    pub t: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub passed: bool,
    pub declared_constant: f64,
    /// Smallest constant valid on the sample set.
    pub witnessed_constant: f64,
    /// Pair attaining `witnessed_constant`.
    pub witness: Option<Witness>,
    pub counterexample: Option<Witness>,
    pub samples: usize,
}

/// Relative slack applied to every pass/fail comparison of constants.
pub const CONSTANT_SLACK: f64 = 1e-9;

pub fn check_condition<P: PhiFunction + ?Sized>(
    phi: &P,
    condition: Condition,
    sample: &SampleGrid,
) -> Result<ConditionReport> {
    let declared = match condition {
        Condition::Inc { .. } | Condition::Dec { .. } => 1.0,
        _ => phi.meta().constant.max(1.0),
    };
    check_condition_with(phi, condition, sample, declared)
}

/// As [`check_condition`] but against an explicit constant `L`.
pub fn check_condition_with<P: PhiFunction + ?Sized>(
    phi: &P,
    condition: Condition,
    sample: &SampleGrid,
    declared: f64,
) -> Result<ConditionReport> {
    let ts = if condition == Condition::A0 {
        vec![1.0]
    } else {
        sample.t.validate_for_conditions()?;
        sample.t.values()
    };
    let per_x: Vec<Result<(f64, Witness)>> = sample
        .xs
        .par_iter()
        .map(|&x| worst_ratio(phi, condition, x, &ts))
        .collect();
    let mut log_worst = f64::NEG_INFINITY;
    let mut witness = None;
    for r in per_x {
        let (lr, w) = r?;
        if lr > log_worst || witness.is_none() {
            log_worst = lr;
            witness = Some(w);
        }
    }
    let witnessed = log_worst.exp().max(1.0);
    let passed = witnessed <= declared * (1.0 + CONSTANT_SLACK);
    Ok(ConditionReport {
        condition,
        passed,
        declared_constant: declared,
        witnessed_constant: witnessed,
        witness,
        counterexample: if passed { None } else { witness },
        samples: sample.xs.len() * ts.len(),
    })
}

fn checked_eval<P: PhiFunction + ?Sized>(phi: &P, x: Point, t: f64) -> Result<f64> {
    let v = phi.eval(x, t);
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Evaluation { x, t });
    }
    Ok(v)
}

/// Log of the worst defining ratio at one `x`.
fn worst_ratio<P: PhiFunction + ?Sized>(phi: &P, condition: Condition, x: Point, ts: &[f64]) -> Result<(f64, Witness)> {
    let (gamma, increasing) = match condition {
        Condition::A0 => {
            let v = checked_eval(phi, x, 1.0)?;
            let lr = v.ln().abs();
            let lr = if lr.is_nan() { f64::INFINITY } else { lr };
            return Ok((lr, Witness { x, t: 1.0, s: 1.0 }));
        }
        Condition::AInc { gamma } | Condition::Inc { gamma } => (gamma, true),
        Condition::ADec { gamma } | Condition::Dec { gamma } => (gamma, false),
    };
    let mut best = (0.0, Witness { x, t: ts[0], s: ts[0] });
    // running extreme of g(t_j), j <= i
    let mut ext = f64::NAN;
    let mut ext_at = 0;
    for (i, &t) in ts.iter().enumerate() {
        let lg = checked_eval(phi, x, t)?.ln() - gamma * t.ln();
        if i == 0 || (increasing && lg > ext) || (!increasing && lg < ext) {
            ext = lg;
            ext_at = i;
        }
        let lr = if increasing { ext - lg } else { lg - ext };
        let lr = if lr.is_nan() { 0.0 } else { lr };
        if lr > best.0 {
            best = (lr, Witness { x, t: ts[ext_at], s: t });
        }
    }
    Ok(best)
}

/// Default upper end of the search interval of [`left_inverse`].
pub const INVERSE_UPPER: f64 = 1e12;

/// `φ⁻¹(x, s) = inf{τ >= 0 : φ(x, τ) >= s}`.
pub fn left_inverse<P: PhiFunction + ?Sized>(phi: &P, x: Point, s: f64) -> Result<f64> {
    left_inverse_within(phi, x, s, INVERSE_UPPER)
}

pub fn left_inverse_within<P: PhiFunction + ?Sized>(phi: &P, x: Point, s: f64, upper: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::Range { level: s, upper });
    }
    if s <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = upper;
    if !(phi.eval(x, hi) >= s) {
        return Err(Error::Range { level: s, upper });
    }
    // walk down by decades to get a positive lower bracket
    let mut lo = hi;
    loop {
        lo *= 0.1;
        if lo < 1e-300 {
            lo = 0.0;
            break;
        }
        if phi.eval(x, lo) < s {
            break;
        }
        hi = lo;
    }
    for _ in 0..400 {
        let mid = if lo > 0.0 && hi / lo > 4.0 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        if phi.eval(x, mid) >= s {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Window of the conjugate's maximizer search.
pub const CONJUGATE_WINDOW: (f64, f64) = (1e-12, 1e12);

/// `φ*(x, s) = sup_{t >= 0} (s t - φ(x, t))`: coarse log-grid scan followed by
/// golden-section refinement around the best grid point.
pub fn conjugate<P: PhiFunction + ?Sized>(phi: &P, x: Point, s: f64) -> Result<f64> {
    if s <= 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = CONJUGATE_WINDOW;
    let decades = (hi / lo).log10().round() as usize;
    let n = decades * 10;
    let mut grid = Vec::with_capacity(n + 2);
    grid.push(0.0);
    for i in 0..=n {
        grid.push(lo * 10f64.powf(i as f64 / 10.0));
    }
    let objective = |t: f64| s * t - phi.eval(x, t);
    let mut best = 0;
    let mut best_val = objective(0.0);
    for (i, &t) in grid.iter().enumerate().skip(1) {
        let v = objective(t);
        if v.is_nan() {
            return Err(Error::Evaluation { x, t });
        }
        if v > best_val {
            best_val = v;
            best = i;
        }
    }
    if best == grid.len() - 1 {
        return Err(Error::Window { slope: s, upper: hi });
    }
    let a = if best == 0 { 0.0 } else { grid[best - 1] };
    let b = grid[best + 1];
    let refined = golden_max(objective, a, b);
    Ok(refined.max(best_val).max(0.0))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a) <= 1e-13 * b.abs().max(1e-300) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// `φ(x, t) + φ*(x, s) - t s`, nonnegative by Young's inequality.
pub fn young_gap<P: PhiFunction + ?Sized>(phi: &P, x: Point, t: f64, s: f64) -> Result<f64> {
    Ok(phi.eval(x, t) + conjugate(phi, x, s)? - t * s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop0Report {
    /// Extremes of `t φ'(x,t) / φ(x,t)`.
    pub derivative_ratio: (f64, f64),
    pub derivative_passed: bool,
    /// Largest `φ*(x, φ'(x,t)) / (t φ'(x,t))`.
    pub conjugate_ratio: f64,
    pub conjugate_passed: bool,
    pub worst_x: Point,
    pub worst_t: f64,
}

/// Checks `t φ' ≈ φ` (within the declared exponent bounds) and
/// `φ*(φ'(t)) <= t φ'(t)` over the sample grid.
pub fn check_prop0<P: PhiFunction + ?Sized>(phi: &P, sample: &SampleGrid) -> Result<Prop0Report> {
    sample.t.validate()?;
    let ts = sample.t.values();
    let meta = phi.meta();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut conj_worst = f64::NEG_INFINITY;
    let mut worst = (sample.xs[0], ts[0]);
    for &x in &sample.xs {
        for &t in &ts {
            let v = checked_eval(phi, x, t)?;
            let d = phi.deriv(x, t);
            if !d.is_finite() {
                return Err(Error::Evaluation { x, t });
            }
            let r = t * d / v;
            lo = lo.min(r);
            hi = hi.max(r);
            let c = conjugate(phi, x, d)? / (t * d);
            if c > conj_worst {
                conj_worst = c;
                worst = (x, t);
            }
        }
    }
    let tol = 1e-6;
    let mut derivative_passed = lo.is_finite() && hi.is_finite() && lo >= 1.0 - tol;
    if let Some(p) = meta.p_lo {
        derivative_passed &= lo >= p / meta.constant * (1.0 - tol);
    }
    if let Some(q) = meta.q_hi {
        derivative_passed &= hi <= q * meta.constant * (1.0 + tol);
    }
    Ok(Prop0Report {
        derivative_ratio: (lo, hi),
        derivative_passed,
        conjugate_ratio: conj_worst,
        conjugate_passed: conj_worst <= 1.0 + 1e-8,
        worst_x: worst.0,
        worst_t: worst.1,
    })
}

/// Both sides of the quasiconvexity splitting inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitResidual {
    pub lhs: f64,
    pub rhs: f64,
}

impl SplitResidual {
    /// `lhs / rhs`, zero when both sides vanish.
    pub fn ratio(&self) -> f64 {
        if self.lhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `φ(|x1 - x2|)` against
/// `κ(φ(|x1|) + φ(|x2|)) + κ⁻¹ φ'(|x1| + |x2|) / (|x1| + |x2|) |x1 - x2|²`.
pub fn quasiconvexity_split<P: PhiFunction + ?Sized>(phi: &P, x1: &[f64], x2: &[f64], kappa: f64) -> SplitResidual {
    let at = [0.5, 0.5];
    let diff: Vec<f64> = x1.iter().zip(x2).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    let (n1, n2) = (norm(x1), norm(x2));
    let s = n1 + n2;
    if s == 0.0 {
        return SplitResidual { lhs: 0.0, rhs: 0.0 };
    }
    let lhs = phi.eval(at, d);
    let rhs = kappa * (phi.eval(at, n1) + phi.eval(at, n2)) + phi.deriv(at, s) / s * d * d / kappa;
    SplitResidual { lhs, rhs }
}

/// Largest `lhs / rhs` over random pairs with entries in `[-scale, scale]`.
pub fn fit_split_constant<P: PhiFunction + ?Sized>(
    phi: &P,
    kappa: f64,
    dim: usize,
    scale: f64,
    samples: usize,
    seed: u64,
) -> f64 {
    let mut rng = sampling::rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        // spread magnitudes over several decades
        let mag = scale * 10f64.powf(rng.gen_range(-3.0..=0.0));
        let a = sampling::random_vector(&mut rng, dim, mag);
        let b = sampling::random_vector(&mut rng, dim, mag);
        worst = worst.max(quasiconvexity_split(phi, &a, &b, kappa).ratio());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Profile;
    use crate::sampling::LogGrid;

    const X: Point = [0.5, 0.5];

    #[test]
    fn square_is_inc2_but_not_ainc3() {
        let g = SampleGrid::default();
        let phi = Power::new(2.0);
        let r = check_condition(&phi, Condition::Inc { gamma: 2.0 }, &g).unwrap();
        assert!(r.passed);
        assert!((r.witnessed_constant - 1.0).abs() < 1e-12);
        let r = check_condition(&phi, Condition::AInc { gamma: 3.0 }, &g).unwrap();
        assert!(!r.passed);
        let w = r.counterexample.unwrap();
        assert!(w.t < w.s);
    }

    #[test]
    fn double_phase_is_inc_p() {
        let a = Profile::Clipped {
            base: 0.0,
            slope: 1.0,
            axis: 0,
            lo: 0.0,
            hi: 1.0,
        };
        let phi = DoublePhase::new(2.0, 3.0, a.shared());
        let g = SampleGrid::with_lattice(LogGrid::default(), 4);
        assert!(check_condition(&phi, Condition::Inc { gamma: 2.0 }, &g).unwrap().passed);
        assert!(check_condition(&phi, Condition::Dec { gamma: 3.0 }, &g).unwrap().passed);
    }

    #[test]
    fn a0_uses_value_at_one() {
        let phi = Power::scaled(3.0, 2.0);
        let r = check_condition_with(&phi, Condition::A0, &SampleGrid::default(), 2.0).unwrap();
        assert!(!r.passed);
        assert!((r.witnessed_constant - 3.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let phi = FnPhi::autonomous(|t| if t > 1e3 { f64::INFINITY } else { t * t });
        let e = check_condition(&phi, Condition::Inc { gamma: 1.0 }, &SampleGrid::default());
        assert!(matches!(e, Err(Error::Evaluation { .. })));
    }

    #[test]
    fn left_inverse_examples() {
        let sq = Power::new(2.0);
        assert!((left_inverse(&sq, X, 4.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(left_inverse(&sq, X, 0.0).unwrap(), 0.0);
        let phi = FnPhi::autonomous(|t| t.powi(3) + t.powi(5));
        assert!((left_inverse(&phi, X, 2.0).unwrap() - 1.0).abs() < 1e-10);
        assert!(matches!(
            left_inverse_within(&sq, X, 1e10, 10.0),
            Err(Error::Range { .. })
        ));
    }

    #[test]
    fn conjugate_examples() {
        let half_sq = Power::normalized(2.0);
        assert!((conjugate(&half_sq, X, 3.0).unwrap() - 4.5).abs() < 1e-9);
        let lin = Power::new(1.0);
        assert!(conjugate(&lin, X, 0.7).unwrap().abs() < 1e-9);
        assert!(matches!(conjugate(&lin, X, 1.5), Err(Error::Window { .. })));
        let cube = Power::normalized(3.0);
        assert!((conjugate(&cube, X, 1.0).unwrap() - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn young_gap_examples() {
        let half_sq = Power::normalized(2.0);
        assert!(young_gap(&half_sq, X, 1.0, 1.0).unwrap().abs() < 1e-10);
        assert!((young_gap(&half_sq, X, 2.0, 1.0).unwrap() - 0.5).abs() < 1e-10);
        let cube = Power::normalized(3.0);
        assert!(young_gap(&cube, X, 1.0, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn prop0_on_power_and_double_phase() {
        let g = SampleGrid::autonomous(LogGrid::new(1e-3, 1e3, 31));
        let r = check_prop0(&Power::new(3.0), &g).unwrap();
        assert!((r.derivative_ratio.0 - 3.0).abs() < 1e-9);
        assert!((r.derivative_ratio.1 - 3.0).abs() < 1e-9);
        assert!(r.derivative_passed && r.conjugate_passed);
        let dp = DoublePhase::new(3.0, 5.0, Profile::constant(1.0).shared());
        let r = check_prop0(&dp, &g).unwrap();
        assert!(r.derivative_ratio.0 >= 3.0 - 1e-9 && r.derivative_ratio.1 <= 5.0 + 1e-9);
        assert!(r.derivative_passed && r.conjugate_passed);
    }

    #[test]
    fn split_examples() {
        let sq = Power::new(2.0);
        let r = quasiconvexity_split(&sq, &[1.0, 0.0], &[0.0, 0.0], 1.0);
        assert!((r.lhs - 1.0).abs() < 1e-12 && (r.rhs - 3.0).abs() < 1e-12);
        let r = quasiconvexity_split(&sq, &[0.3, 0.1], &[0.3, 0.1], 1.0);
        assert_eq!(r.ratio(), 0.0);
        let r = quasiconvexity_split(&sq, &[0.0, 0.0], &[0.0, 0.0], 1.0);
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    #[test]
    fn ball_envelope_orders() {
        let p = Profile::Linear {
            base: 2.0,
            slope: 0.5,
            axis: 0,
        };
        let phi = VariableExponent::new(p.shared(), false);
        let lo = BallEnvelope::inf(&phi, X, 0.1);
        let hi = BallEnvelope::sup(&phi, X, 0.1);
        for t in [0.1, 1.0, 10.0] {
            assert!(lo.eval(X, t) <= phi.eval(X, t) && phi.eval(X, t) <= hi.eval(X, t));
        }
    }
}
