//! Growth functions of nonlinearities: extraction of `ψ'`, convexification,
//! and certification of the two-sided bounds on `A` and `D_ξ A`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phi::{PhiFunction, PhiMeta};
use crate::sampling::{self, Directions, LogGrid};
use crate::structures::{norm, Lagrangian, SphereSample, VectorField};
use crate::Point;

/// Largest singular value of a 2x2 matrix.
pub(crate) fn sigma_max2(j: [[f64; 2]; 2]) -> f64 {
    let fro = j[0][0] * j[0][0] + j[0][1] * j[0][1] + j[1][0] * j[1][0] + j[1][1] * j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = (fro * fro - 4.0 * det * det).max(0.0).sqrt();
    (0.5 * (fro + disc)).sqrt()
}

/// Smallest eigenvalue of the symmetric part of a 2x2 matrix.
pub(crate) fn lambda_min2(j: [[f64; 2]; 2]) -> f64 {
    let a = j[0][0];
    let d = j[1][1];
    let b = 0.5 * (j[0][1] + j[1][0]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    mean - rad
}

pub(crate) fn operator_norm(j: &DMatrix<f64>) -> f64 {
    if j.nrows() == 2 && j.ncols() == 2 {
        return sigma_max2([[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]]);
    }
    j.singular_values().max()
}

pub(crate) fn sym_lambda_min(j: &DMatrix<f64>) -> f64 {
    if j.nrows() == 2 && j.ncols() == 2 {
        return lambda_min2([[j[(0, 0)], j[(0, 1)]], [j[(1, 0)], j[(1, 1)]]]);
    }
    ((j + j.transpose()) * 0.5).symmetric_eigenvalues().min()
}

/// `ψ'(x, t) = sup_{|ξ| = t} |ξ| |D_ξ A(x, ξ)|` over `directions` sphere points.
pub fn extract_psi_prime<V: VectorField + ?Sized>(
    a: &V,
    x: Point,
    t: f64,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    let dirs = Directions::new(a.dim(), seed);
    psi_prime_with(a, x, t, &dirs, directions)
}

fn psi_prime_with<V: VectorField + ?Sized>(a: &V, x: Point, t: f64, dirs: &Directions, count: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for k in 0..count.max(1) {
        let d = dirs.direction(k);
        let s = if a.dim() == 2 {
            sigma_max2(a.jacobian2(x, [t * d[0], t * d[1]]))
        } else {
            let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
            operator_norm(&a.jacobian(x, &xi))
        };
        if !s.is_finite() {
            return Err(Error::Evaluation { x, t });
        }
        best = best.max(t * s);
    }
    Ok(best)
}

/// Piecewise power-law function through `(t_i, ψ_i)`, extended by `t^p` below
/// and `t^{q1}` above the knots; evaluates `φ(t) = ∫_0^t ψ(s)/s ds` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawTable {
    pub t: Vec<f64>,
    pub psi: Vec<f64>,
    pub p: f64,
    pub q1: f64,
    slopes: Vec<f64>,
    cumulative: Vec<f64>,
}

fn segment_integral(psi0: f64, k: f64, ratio: f64) -> f64 {
    // ∫_{t0}^{t} psi0 (s/t0)^k ds/s with ratio = t/t0
    if k.abs() < 1e-12 {
        psi0 * ratio.ln()
    } else {
        psi0 / k * (ratio.powf(k) - 1.0)
    }
}

impl PowerLawTable {
    pub fn new(t: Vec<f64>, psi: Vec<f64>, p: f64, q1: f64) -> Self {
        let n = t.len();
        let slopes: Vec<f64> = (0..n.saturating_sub(1))
            .map(|i| (psi[i + 1] / psi[i]).ln() / (t[i + 1] / t[i]).ln())
            .collect();
        let mut cumulative = Vec::with_capacity(n);
        cumulative.push(psi[0] / p);
        for i in 0..n - 1 {
            let c = cumulative[i] + segment_integral(psi[i], slopes[i], t[i + 1] / t[i]);
            cumulative.push(c);
        }
        Self {
            t,
            psi,
            p,
            q1,
            slopes,
            cumulative,
        }
    }

    fn locate(&self, t: f64) -> Option<usize> {
        if t < self.t[0] {
            return None;
        }
        let i = self.t.partition_point(|&k| k <= t);
        Some(i.saturating_sub(1).min(self.t.len() - 1))
    }

    /// `(value, exponent)` of the local power law at `t`.
    fn local(&self, t: f64) -> (usize, f64) {
        match self.locate(t) {
            None => (0, self.p),
            Some(i) if i + 1 == self.t.len() => (i, self.q1),
            Some(i) => (i, self.slopes[i]),
        }
    }

    /// Interpolated `ψ(t)`.
    pub fn psi_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (i, k) = self.local(t);
        self.psi[i] * (t / self.t[i]).powf(k)
    }

    /// `φ'(t) = ψ(t) / t`.
    pub fn phi_prime(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.psi_at(t) / t
    }

    /// `φ''(t) = (k - 1) ψ(t) / t²` with the local exponent `k`.
    pub fn phi_second(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (_, k) = self.local(t);
        (k - 1.0) * self.psi_at(t) / (t * t)
    }

    pub fn phi(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self.locate(t) {
            None => self.psi[0] / self.p * (t / self.t[0]).powf(self.p),
            Some(i) => {
                let k = if i + 1 == self.t.len() { self.q1 } else { self.slopes[i] };
                self.cumulative[i] + segment_integral(self.psi[i], k, t / self.t[i])
            }
        }
    }

    /// Largest log-log slope between knots.
    pub fn max_slope(&self) -> f64 {
        self.slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl PhiFunction for PowerLawTable {
    fn eval(&self, _x: Point, t: f64) -> f64 {
        self.phi(t)
    }

    fn deriv(&self, _x: Point, t: f64) -> f64 {
        self.phi_prime(t)
    }

    fn meta(&self) -> PhiMeta {
        PhiMeta::bounds(self.p, self.q1, 1.0)
    }

    fn is_autonomous(&self) -> bool {
        true
    }
}

/// Output of [`convexify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convexified {
    pub table: PowerLawTable,
    /// `max ψ/ψ̃` over the knots (`ψ̃ <= ψ` by construction).
    pub constant: f64,
    pub q1: f64,
    /// Input (aInc)_1 constant.
    pub ainc1_constant: f64,
}

/// Values of the lower convex hull of `(t_i, y_i)` at the knots.
pub fn lower_hull(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    let mut hull: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // drop b when it lies on or above the chord a -> i
            let lhs = (y[b] - y[a]) * (t[i] - t[a]);
            let rhs = (y[i] - y[a]) * (t[b] - t[a]);
            if lhs >= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; n];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for k in a..=b {
            let s = (t[k] - t[a]) / (t[b] - t[a]);
            out[k] = y[a] + s * (y[b] - y[a]);
        }
    }
    if hull.len() == 1 {
        out[hull[0]] = y[hull[0]];
    }
    out
}

/// Greatest convex minorant of the samples which also satisfies (Inc)_p,
/// extrapolated as a power law; the returned table carries `q1`.
pub fn convexify(t: &[f64], psi: &[f64], p: f64, q: f64, declared_l: f64) -> Result<Convexified> {
    if t.len() != psi.len() || t.len() < 2 {
        return Err(Error::InvalidGrid("need matching t and psi with >= 2 knots".into()));
    }
    if t.windows(2).any(|w| !(w[1] > w[0])) || t[0] <= 0.0 {
        return Err(Error::InvalidGrid("knots must be positive and increasing".into()));
    }
    for (&ti, &v) in t.iter().zip(psi) {
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::Evaluation {
                x: [f64::NAN; 2],
                t: ti,
            });
        }
    }
    // (aInc)_1 constant of the input
    let mut run: f64 = 0.0;
    let mut ainc1: f64 = 1.0;
    for (&ti, &v) in t.iter().zip(psi) {
        let g = v / ti;
        run = run.max(g);
        ainc1 = ainc1.max(run / g);
    }
    if ainc1 > declared_l * (1.0 + crate::phi::CONSTANT_SLACK) {
        return Err(Error::NotConvexifiable {
            found: ainc1,
            declared: declared_l,
        });
    }
    let tp: Vec<f64> = t.iter().map(|&ti| ti.powf(p)).collect();
    let mut y = psi.to_vec();
    for _ in 0..1000 {
        let mut z = lower_hull(t, &y);
        let mut m = f64::INFINITY;
        for i in (0..z.len()).rev() {
            m = m.min(z[i] / tp[i]);
            z[i] = m * tp[i];
        }
        let change = z.iter().zip(&y).map(|(a, b)| ((a - b) / b).abs()).fold(0.0, f64::max);
        y = z;
        if change < 1e-14 {
            break;
        }
    }
    let constant = psi.iter().zip(&y).map(|(a, b)| a / b).fold(1.0, f64::max);
    let provisional = PowerLawTable::new(t.to_vec(), y.clone(), p, q);
    let q1 = q.max(provisional.max_slope());
    let table = PowerLawTable::new(t.to_vec(), y, p, q1);
    Ok(Convexified {
        table,
        constant,
        q1,
        ainc1_constant: ainc1,
    })
}

/// Replaces `φ'` by `∫_0^t φ'(s)/s ds`, which is one degree smoother.
fn smooth_table(table: &PowerLawTable) -> Vec<f64> {
    let n = table.t.len();
    let mut acc = table.psi[0] / (table.t[0] * (table.p - 1.0));
    let mut out = Vec::with_capacity(n);
    out.push(table.t[0] * acc);
    for i in 0..n - 1 {
        let k = table.slopes[i];
        let r = table.t[i + 1] / table.t[i];
        let seg = if (k - 1.0).abs() < 1e-12 {
            table.psi[i] / table.t[i] * r.ln()
        } else {
            table.psi[i] / (table.t[i] * (k - 1.0)) * (r.powf(k - 1.0) - 1.0)
        };
        acc += seg;
        out.push(table.t[i + 1] * acc);
    }
    out
}

/// Options of [`build_growth_function`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthOptions {
    /// Knots of the per-`x` tables.
    pub knots: LogGrid,
    /// Sample on which `ν`, `Λ` are fitted.
    pub sample: SphereSample,
    /// `(aInc)_1` constant accepted by convexification.
    pub declared_l: f64,
    /// Use the once-smoothed growth function.
    pub smooth: bool,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        Self {
            knots: LogGrid::per_decade(1e-6, 1e6, 10),
            sample: SphereSample {
                xs: sampling::lattice(3),
                radii: LogGrid::new(1e-3, 1e3, 25),
                directions: 32,
                seed: 0,
            },
            declared_l: 1e3,
            smooth: false,
        }
    }
}

impl GrowthOptions {
    pub fn autonomous() -> Self {
        let mut o = Self::default();
        o.sample.xs = vec![[0.5, 0.5]];
        o
    }
}

#[derive(Debug, Clone)]
struct TableEntry {
    table: PowerLawTable,
    constant: f64,
}

/// The growth function `φ` of a nonlinearity, built lazily per `x`.
pub struct GrowthFunction {
    source: Arc<dyn VectorField>,
    knots: Vec<f64>,
    p: f64,
    q: f64,
    declared_l: f64,
    directions: usize,
    seed: u64,
    smooth: bool,
    autonomous: bool,
    cache: Mutex<HashMap<[u64; 2], Arc<TableEntry>>>,
}

impl std::fmt::Debug for GrowthFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrowthFunction")
            .field("p", &self.p)
            .field("q", &self.q)
            .field("knots", &self.knots.len())
            .field("directions", &self.directions)
            .finish()
    }
}

impl GrowthFunction {
    pub fn new(source: Arc<dyn VectorField>, options: &GrowthOptions) -> Result<Self> {
        options.knots.validate()?;
        let c = source.constants();
        Ok(Self {
            autonomous: source.is_autonomous(),
            source,
            knots: options.knots.values(),
            p: c.p,
            q: c.q,
            declared_l: options.declared_l,
            directions: options.sample.directions,
            seed: options.sample.seed,
            smooth: options.smooth,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn key(&self, x: Point) -> [u64; 2] {
        if self.autonomous {
            [0, 0]
        } else {
            [x[0].to_bits(), x[1].to_bits()]
        }
    }

    fn entry(&self, x: Point) -> Result<Arc<TableEntry>> {
        let key = self.key(x);
        if let Some(e) = self.cache.lock().unwrap().get(&key) {
            return Ok(e.clone());
        }
        let dirs = Directions::new(self.source.dim(), self.seed);
        let psi: Vec<f64> = self
            .knots
            .iter()
            .map(|&t| psi_prime_with(&*self.source, x, t, &dirs, self.directions).map(|v| v * t))
            .collect::<Result<_>>()?;
        let conv = convexify(&self.knots, &psi, self.p, self.q, self.declared_l)?;
        let entry = if self.smooth {
            let smoothed = smooth_table(&conv.table);
            let again = convexify(&self.knots, &smoothed, self.p, conv.q1, f64::INFINITY)?;
            let constant = psi
                .iter()
                .zip(&again.table.psi)
                .map(|(a, b)| (a / b).max(b / a))
                .fold(1.0, f64::max);
            TableEntry {
                table: again.table,
                constant,
            }
        } else {
            TableEntry {
                table: conv.table,
                constant: conv.constant,
            }
        };
        let entry = Arc::new(entry);
        self.cache.lock().unwrap().insert(key, entry.clone());
        Ok(entry)
    }

    /// Per-`x` table, extracting it on first use.
    pub fn table(&self, x: Point) -> Result<PowerLawTable> {
        Ok(self.entry(x)?.table.clone())
    }

    /// Convexification constant at `x`.
    pub fn convexify_constant(&self, x: Point) -> Result<f64> {
        Ok(self.entry(x)?.constant)
    }

    pub fn q1(&self, x: Point) -> Result<f64> {
        Ok(self.entry(x)?.table.q1)
    }

    pub fn phi_second(&self, x: Point, t: f64) -> f64 {
        self.entry(x).map(|e| e.table.phi_second(t)).unwrap_or(f64::NAN)
    }
}

impl PhiFunction for GrowthFunction {
    fn eval(&self, x: Point, t: f64) -> f64 {
        self.entry(x).map(|e| e.table.phi(t)).unwrap_or(f64::NAN)
    }

    fn deriv(&self, x: Point, t: f64) -> f64 {
        self.entry(x).map(|e| e.table.phi_prime(t)).unwrap_or(f64::NAN)
    }

    fn meta(&self) -> PhiMeta {
        PhiMeta::bounds(self.p, self.q, 1.0)
    }

    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
}

/// Worst sample of a certified bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Point,
    pub t: f64,
    pub direction: usize,
}

/// Numerical growth-function certificate.
#[derive(Debug, Clone, Serialize)]
pub struct GrowthCertificate {
    #[serde(skip)]
    pub phi: Arc<GrowthFunction>,
    pub p1: f64,
    pub q1: f64,
    /// Smallest `D A ξ̃·ξ̃ |ξ| / (φ' |ξ̃|²)` on the sample.
    pub nu: f64,
    /// Largest `(|A| + |ξ| |D A|) / φ'`.
    pub lambda: f64,
    /// Largest `|ξ| |D A| / φ'`.
    pub lambda_jacobian: f64,
    /// `ν / Λ_jac`, the sampled eigenvalue ratio.
    pub ellipticity_ratio: f64,
    /// Convexification constant between `tψ'` and `tφ'`.
    pub equiv_constant: f64,
    pub residuals: Residuals,
    pub options: GrowthOptions,
    pub worst_nu: Sample,
    pub worst_lambda: Sample,
}

/// Relative slack of the two inequalities at the fitted `(ν, Λ)`, measured on
/// a denser validation sample; negative values mean the fit was not conservative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `min (Λ φ' - |A| - |ξ||DA|) / (Λ φ')`
    pub upper: f64,
    /// `min (λ_min |ξ| - ν φ') / (ν φ')`
    pub lower: f64,
    pub samples: usize,
}

impl GrowthCertificate {
    pub fn ellipticity_ratio(&self) -> f64 {
        self.ellipticity_ratio
    }
}

struct Extremes {
    nu: (f64, Sample),
    lambda: (f64, Sample),
    lambda_jac: (f64, Sample),
}

fn fit_constants<V: VectorField + ?Sized, P: PhiFunction + ?Sized>(
    a: &V,
    phi: &P,
    sample: &SphereSample,
) -> Result<Extremes> {
    sample.radii.validate()?;
    let radii = sample.radii.values();
    let dirs = Directions::new(a.dim(), sample.seed).take(sample.directions.max(1));
    let per_x: Vec<Result<Extremes>> = sample
        .xs
        .par_iter()
        .map(|&x| {
            let mut e = Extremes {
                nu: (
                    f64::INFINITY,
                    Sample {
                        x,
                        t: 0.0,
                        direction: 0,
                    },
                ),
                lambda: (
                    0.0,
                    Sample {
                        x,
                        t: 0.0,
                        direction: 0,
                    },
                ),
                lambda_jac: (
                    0.0,
                    Sample {
                        x,
                        t: 0.0,
                        direction: 0,
                    },
                ),
            };
            for &t in &radii {
                let dphi = phi.deriv(x, t);
                if !(dphi.is_finite() && dphi > 0.0) {
                    return Err(Error::Evaluation { x, t });
                }
                for (k, d) in dirs.iter().enumerate() {
                    let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
                    let (amag, jn, lmin) = if a.dim() == 2 {
                        let xi2 = [xi[0], xi[1]];
                        let v = a.eval2(x, xi2);
                        let j = a.jacobian2(x, xi2);
                        ((v[0] * v[0] + v[1] * v[1]).sqrt(), sigma_max2(j), lambda_min2(j))
                    } else {
                        let j = a.jacobian(x, &xi);
                        (a.eval(x, &xi).norm(), operator_norm(&j), sym_lambda_min(&j))
                    };
                    let here = Sample { x, t, direction: k };
                    if !(lmin > 0.0) {
                        return Err(Error::Ellipticity {
                            x,
                            radius: t,
                            eigenvalue: lmin,
                        });
                    }
                    let nu = lmin * t / dphi;
                    let lam = (amag + t * jn) / dphi;
                    let lj = t * jn / dphi;
                    if nu < e.nu.0 {
                        e.nu = (nu, here);
                    }
                    if lam > e.lambda.0 {
                        e.lambda = (lam, here);
                    }
                    if lj > e.lambda_jac.0 {
                        e.lambda_jac = (lj, here);
                    }
                }
            }
            Ok(e)
        })
        .collect();
    let mut out: Option<Extremes> = None;
    for r in per_x {
        let e = r?;
        out = Some(match out {
            None => e,
            Some(mut o) => {
                if e.nu.0 < o.nu.0 {
                    o.nu = e.nu;
                }
                if e.lambda.0 > o.lambda.0 {
                    o.lambda = e.lambda;
                }
                if e.lambda_jac.0 > o.lambda_jac.0 {
                    o.lambda_jac = e.lambda_jac;
                }
                o
            }
        });
    }
    out.ok_or_else(|| Error::InvalidGrid("empty x sample".into()))
}

/// Extracts, convexifies and certifies a growth function of `a`.
pub fn build_growth_function(a: Arc<dyn VectorField>, options: &GrowthOptions) -> Result<GrowthCertificate> {
    let phi = Arc::new(GrowthFunction::new(a.clone(), options)?);
    certify_against(&*a, phi, options)
}

/// Certifies `(ν, Λ)` of `a` against a given growth function.
pub fn certify_against(
    a: &dyn VectorField,
    phi: Arc<GrowthFunction>,
    options: &GrowthOptions,
) -> Result<GrowthCertificate> {
    let xs = &options.sample.xs;
    // extract tables up front (in parallel), surfacing convexification errors
    xs.par_iter()
        .map(|&x| phi.entry(x).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    let mut q1 = phi.q;
    let mut equiv: f64 = 1.0;
    for &x in xs {
        let e = phi.entry(x)?;
        q1 = q1.max(e.table.q1);
        equiv = equiv.max(e.constant);
    }
    let ex = fit_constants(a, &*phi, &options.sample)?;
    // residuals of the fitted constants on an independent, denser sample
    let r = options.sample.radii;
    let validation = SphereSample {
        xs: xs.clone(),
        radii: LogGrid::new(r.t_min, r.t_max, 2 * r.points - 1),
        directions: 2 * options.sample.directions + 1,
        seed: options.sample.seed.wrapping_add(1),
    };
    let check = fit_constants(a, &*phi, &validation)?;
    let samples = xs.len() * validation.radii.points * validation.directions;
    Ok(GrowthCertificate {
        p1: phi.p,
        q1,
        nu: ex.nu.0,
        lambda: ex.lambda.0,
        lambda_jacobian: ex.lambda_jac.0,
        ellipticity_ratio: ex.nu.0 / ex.lambda_jac.0,
        equiv_constant: equiv,
        residuals: Residuals {
            upper: 1.0 - check.lambda.0 / ex.lambda.0,
            lower: check.nu.0 / ex.nu.0 - 1.0,
            samples,
        },
        options: options.clone(),
        worst_nu: ex.nu.1,
        worst_lambda: ex.lambda.1,
        phi,
    })
}

/// Fits `ν`, `Λ` of an arbitrary nonlinearity against an arbitrary `φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBounds {
    pub nu: f64,
    pub lambda: f64,
    pub lambda_jacobian: f64,
    pub worst_nu: Sample,
    pub worst_lambda: Sample,
}

pub fn fit_growth_bounds<V: VectorField + ?Sized, P: PhiFunction + ?Sized>(
    a: &V,
    phi: &P,
    sample: &SphereSample,
) -> Result<GrowthBounds> {
    let ex = fit_constants(a, phi, sample)?;
    Ok(GrowthBounds {
        nu: ex.nu.0,
        lambda: ex.lambda.0,
        lambda_jacobian: ex.lambda_jac.0,
        worst_nu: ex.nu.1,
        worst_lambda: ex.lambda.1,
    })
}

/// Two-sided constants of `|ξ||A| ≈ φ` and `F ≈ φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `max(|ξ||A| / φ, φ / (A·ξ))`
    pub c1: Option<f64>,
    /// `max(F / φ, φ / F)`
    pub c2: Option<f64>,
    pub worst_c1: Option<Sample>,
    pub worst_c2: Option<Sample>,
}

const UNBOUNDED: f64 = 1e12;

pub fn check_equivalences(
    phi: &dyn PhiFunction,
    a: Option<&dyn VectorField>,
    f: Option<&dyn Lagrangian>,
    sample: &SphereSample,
) -> Result<EquivalenceReport> {
    sample.radii.validate()?;
    let radii = sample.radii.values();
    let mut report = EquivalenceReport {
        c1: None,
        c2: None,
        worst_c1: None,
        worst_c2: None,
    };
    let dim = a.map(|v| v.dim()).or(f.map(|l| l.dim())).unwrap_or(2);
    let dirs = Directions::new(dim, sample.seed).take(sample.directions.max(1));
    for &x in &sample.xs {
        for &t in &radii {
            let ph = phi.eval(x, t);
            for (k, d) in dirs.iter().enumerate() {
                let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
                let here = Sample { x, t, direction: k };
                if let Some(a) = a {
                    let v = a.eval(x, &xi);
                    let dot: f64 = v.iter().zip(&xi).map(|(p, q)| p * q).sum();
                    let r = (t * v.norm() / ph).max(ph / dot);
                    if !(r.is_finite() && r < UNBOUNDED) || dot <= 0.0 {
                        return Err(Error::Unbounded { x, radius: t, ratio: r });
                    }
                    if r > report.c1.unwrap_or(0.0) {
                        report.c1 = Some(r);
                        report.worst_c1 = Some(here);
                    }
                }
                if let Some(f) = f {
                    let fv = f.eval(x, &xi);
                    let r = (fv / ph).max(ph / fv);
                    if !(r.is_finite() && r < UNBOUNDED) {
                        return Err(Error::Unbounded { x, radius: t, ratio: r });
                    }
                    if r > report.c2.unwrap_or(0.0) {
                        report.c2 = Some(r);
                        report.worst_c2 = Some(here);
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Random pairs `(ξ, ξ̃)` for the monotonicity fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairSample {
    pub xs: Vec<Point>,
    pub count: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Restrict to pairs on a common line through the origin.
    pub collinear: bool,
    pub seed: u64,
}

impl Default for PairSample {
    fn default() -> Self {
        Self {
            xs: vec![[0.5, 0.5]],
            count: 2000,
            t_min: 1e-3,
            t_max: 1e3,
            collinear: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// Smallest `(A(ξ)-A(ξ̃))·(ξ-ξ̃) / (φ'(|ξ|+|ξ̃|)/(|ξ|+|ξ̃|) |ξ-ξ̃|²)`.
    pub constant: f64,
    pub largest_ratio: f64,
    pub pairs: usize,
    pub worst: Option<(Vec<f64>, Vec<f64>)>,
}

/// `(A(x,ξ) - A(x,ξ̃))·(ξ - ξ̃)` against `φ'(|ξ|+|ξ̃|)/(|ξ|+|ξ̃|) |ξ - ξ̃|²`.
pub fn monotonicity_ratio<V: VectorField + ?Sized, P: PhiFunction + ?Sized>(
    a: &V,
    phi: &P,
    x: Point,
    xi: &[f64],
    eta: &[f64],
) -> Result<Option<f64>> {
    let diff: Vec<f64> = xi.iter().zip(eta).map(|(p, q)| p - q).collect();
    let d2: f64 = diff.iter().map(|c| c * c).sum();
    if d2 == 0.0 {
        return Ok(None);
    }
    let av = a.eval(x, xi) - a.eval(x, eta);
    let lhs: f64 = av.iter().zip(&diff).map(|(p, q)| p * q).sum();
    if lhs <= 0.0 {
        return Err(Error::Monotonicity {
            xi: xi.to_vec(),
            eta: eta.to_vec(),
            lhs,
        });
    }
    let s = norm(xi) + norm(eta);
    let rhs = phi.deriv(x, s) / s * d2;
    Ok(Some(lhs / rhs))
}

pub fn check_monotonicity<V: VectorField + ?Sized, P: PhiFunction + ?Sized>(
    a: &V,
    phi: &P,
    pairs: &PairSample,
) -> Result<MonotonicityReport> {
    let mut rng = sampling::rng(pairs.seed);
    let n = a.dim();
    let (lo, hi) = (pairs.t_min.ln(), pairs.t_max.ln());
    let mut constant = f64::INFINITY;
    let mut largest: f64 = 0.0;
    let mut worst = None;
    let mut counted = 0;
    for &x in &pairs.xs {
        for _ in 0..pairs.count {
            let d1 = unit(sampling::random_vector(&mut rng, n, 1.0));
            let d2 = if pairs.collinear {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                d1.iter().map(|c| c * sign).collect()
            } else {
                unit(sampling::random_vector(&mut rng, n, 1.0))
            };
            let r1 = rng.gen_range(lo..=hi).exp();
            let r2 = rng.gen_range(lo..=hi).exp();
            let xi: Vec<f64> = d1.iter().map(|c| c * r1).collect();
            let eta: Vec<f64> = d2.iter().map(|c| c * r2).collect();
            if let Some(r) = monotonicity_ratio(a, phi, x, &xi, &eta)? {
                counted += 1;
                largest = largest.max(r);
                if r < constant {
                    constant = r;
                    worst = Some((xi, eta));
                }
            }
        }
    }
    Ok(MonotonicityReport {
        constant,
        largest_ratio: largest,
        pairs: counted,
        worst,
    })
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v).max(1e-300);
    v.into_iter().map(|c| c / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::Power;
    use crate::structures::Model;
    use approx::assert_relative_eq;

    #[test]
    fn psi_prime_of_p_laplace() {
        let m2 = Model::p_laplace(2.0, 2);
        let m3 = Model::p_laplace(3.0, 2);
        for t in [1e-3, 0.5, 7.0, 1e3] {
            assert_relative_eq!(
                extract_psi_prime(&m2, [0.5, 0.5], t, 16, 0).unwrap(),
                t,
                max_relative = 1e-12
            );
            assert_relative_eq!(
                extract_psi_prime(&m3, [0.5, 0.5], t, 16, 0).unwrap(),
                2.0 * t * t,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn hull_of_convex_data_is_identity() {
        let t: Vec<f64> = (1..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = t.iter().map(|v| v * v).collect();
        let h = lower_hull(&t, &y);
        for (a, b) in h.iter().zip(&y) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn hull_removes_bumps() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y = [0.0, 5.0, 2.0, 3.0];
        assert_eq!(lower_hull(&t, &y), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn convexify_square_is_fixed() {
        let t = LogGrid::new(1e-3, 1e3, 61).values();
        let y: Vec<f64> = t.iter().map(|v| v * v).collect();
        let c = convexify(&t, &y, 2.0, 2.0, 10.0).unwrap();
        assert_relative_eq!(c.constant, 1.0, max_relative = 1e-12);
        assert_relative_eq!(c.q1, 2.0, max_relative = 1e-9);
        assert_relative_eq!(c.table.phi(2.0), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn convexify_rejects_non_ainc1() {
        let t = LogGrid::new(1e-2, 1e2, 41).values();
        let y: Vec<f64> = t.iter().map(|v| v.sqrt()).collect();
        assert!(matches!(
            convexify(&t, &y, 1.5, 3.0, 10.0),
            Err(Error::NotConvexifiable { .. })
        ));
    }

    #[test]
    fn certificate_for_quadratic() {
        let cert = build_growth_function(Arc::new(Model::p_laplace(2.0, 2)), &GrowthOptions::autonomous()).unwrap();
        assert_relative_eq!(cert.phi.eval([0.5, 0.5], 3.0), 4.5, max_relative = 1e-12);
        assert_relative_eq!(cert.nu, 1.0, max_relative = 1e-12);
        assert_relative_eq!(cert.lambda_jacobian, 1.0, max_relative = 1e-12);
        assert_relative_eq!(cert.lambda, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn equivalence_constants() {
        let m = Model::p_laplace(2.0, 2);
        let phi = Power::normalized(2.0);
        let s = SphereSample {
            xs: vec![[0.5, 0.5]],
            ..SphereSample::default()
        };
        let r = check_equivalences(&phi, Some(&m), Some(&m), &s).unwrap();
        assert_relative_eq!(r.c1.unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(r.c2.unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn identity_is_monotone_with_constant_one() {
        let m = Model::p_laplace(2.0, 2);
        let r = check_monotonicity(&m, &Power::normalized(2.0), &PairSample::default()).unwrap();
        assert_relative_eq!(r.constant, 1.0, max_relative = 1e-10);
        assert_relative_eq!(r.largest_ratio, 1.0, max_relative = 1e-10);
        assert_eq!(
            monotonicity_ratio(&m, &Power::normalized(2.0), [0.5; 2], &[1.0, 2.0], &[1.0, 2.0]).unwrap(),
            None
        );
    }
}
