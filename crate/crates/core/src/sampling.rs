//! Sample grids in `t`, in `x` and on the unit sphere.
//!
//! Every sweep in the crate is driven by an explicit sample description so that
//! reports can record exactly which points were inspected.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Point;

/// Log-spaced grid `t_min = t_0 < ... < t_{n-1} = t_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
}

impl Default for LogGrid {
    fn default() -> Self {
        Self {
            t_min: 1e-6,
            t_max: 1e6,
            points: 121,
        }
    }
}

impl LogGrid {
    pub fn new(t_min: f64, t_max: f64, points: usize) -> Self {
        Self { t_min, t_max, points }
    }

    /// Grid with `per_decade` points per decade (both ends included).
    pub fn per_decade(t_min: f64, t_max: f64, per_decade: usize) -> Self {
        let decades = (t_max / t_min).log10();
        let points = (decades * per_decade as f64).round().max(1.0) as usize + 1;
        Self::new(t_min, t_max, points)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min > 0.0 && self.t_max.is_finite() && self.t_max > self.t_min) {
            return Err(Error::InvalidGrid(format!(
                "need 0 < t_min < t_max < inf, got [{:e}, {:e}]",
                self.t_min, self.t_max
            )));
        }
        if self.points < 2 {
            return Err(Error::InvalidGrid("need at least 2 points".into()));
        }
        Ok(())
    }

    /// Conditions are only meaningful when the grid spans two decades.
    pub fn validate_for_conditions(&self) -> Result<()> {
        self.validate()?;
        if self.t_max / self.t_min < 100.0 * (1.0 - 1e-12) {
            return Err(Error::InvalidGrid(format!(
                "t-grid must span at least two decades, got [{:e}, {:e}]",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.t_min];
        }
        let (a, b) = (self.t_min.ln(), self.t_max.ln());
        let n = self.points - 1;
        (0..self.points)
            .map(|i| {
                if i == 0 {
                    self.t_min
                } else if i == n {
                    self.t_max
                } else {
                    (a + (b - a) * i as f64 / n as f64).exp()
                }
            })
            .collect()
    }
}

/// A `t`-grid together with the `x` points at which an x-dependent object is probed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub t: LogGrid,
    pub xs: Vec<Point>,
}

impl Default for SampleGrid {
    fn default() -> Self {
        Self {
            t: LogGrid::default(),
            xs: vec![[0.5, 0.5]],
        }
    }
}

impl SampleGrid {
    pub fn autonomous(t: LogGrid) -> Self {
        Self {
            t,
            xs: vec![[0.5, 0.5]],
        }
    }

    pub fn with_lattice(t: LogGrid, per_side: usize) -> Self {
        Self {
            t,
            xs: lattice(per_side),
        }
    }
}

/// Cell-centred lattice of `per_side^2` points in the unit square.
pub fn lattice(per_side: usize) -> Vec<Point> {
    let m = per_side.max(1);
    let mut out = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            out.push([(i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64]);
        }
    }
    out
}

/// Closest point of the closed unit square.
pub fn project_to_domain(x: Point) -> Point {
    [x[0].clamp(0.0, 1.0), x[1].clamp(0.0, 1.0)]
}

/// Sample points of the disc `B_r(center)` that lie in the unit square: the
/// center plus `rays` directions at radii `r/2` and `r` (slightly inset).
pub fn ball_points(center: Point, r: f64, rays: usize) -> Vec<Point> {
    let mut pts = vec![center];
    for k in 0..rays {
        let theta = std::f64::consts::TAU * k as f64 / rays as f64;
        for frac in [0.5, 0.999] {
            let p = [center[0] + frac * r * theta.cos(), center[1] + frac * r * theta.sin()];
            if (0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]) {
                pts.push(p);
            }
        }
    }
    pts
}

/// Low-discrepancy directions on the unit sphere `S^{n-1}`.
///
/// In two dimensions the golden-angle Kronecker sequence is used; in higher
/// dimensions a Halton sequence is pushed through Box-Muller and normalized.
/// Sequences are nested: the first `k` directions of a longer sequence equal
/// the shorter sequence, so suprema over directions are monotone in the count.
/// A nonzero seed applies a Cranley-Patterson rotation.
#[derive(Debug, Clone)]
pub struct Directions {
    dim: usize,
    shift: Vec<f64>,
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

impl Directions {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        let coords = dim.div_ceil(2) * 2;
        let shift = if seed == 0 {
            vec![0.0; coords]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..coords).map(|_| rng.gen::<f64>()).collect()
        };
        Self { dim, shift }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn take(&self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|k| self.direction(k)).collect()
    }

    pub fn direction(&self, k: usize) -> Vec<f64> {
        match self.dim {
            1 => vec![if k % 2 == 0 { 1.0 } else { -1.0 }],
            2 => {
                let golden = 0.5 * (5f64.sqrt() - 1.0);
                let u = (k as f64 * golden + self.shift[0]).fract();
                let theta = std::f64::consts::TAU * u;
                vec![theta.cos(), theta.sin()]
            }
            n => {
                let mut v = Vec::with_capacity(n + 1);
                let mut c = 0;
                while v.len() < n {
                    let u1 = (radical_inverse(k as u64 + 1, PRIMES[c % PRIMES.len()]) + self.shift[c])
                        .fract()
                        .max(1e-300);
                    let u2 =
                        (radical_inverse(k as u64 + 1, PRIMES[(c + 1) % PRIMES.len()]) + self.shift[c + 1]).fract();
                    let rad = (-2.0 * u1.ln()).sqrt();
                    let ang = std::f64::consts::TAU * u2;
                    v.push(rad * ang.cos());
                    v.push(rad * ang.sin());
                    c += 2;
                }
                v.truncate(n);
                let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                if norm == 0.0 {
                    let mut e = vec![0.0; n];
                    e[0] = 1.0;
                    return e;
                }
                v.into_iter().map(|a| a / norm).collect()
            }
        }
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// Seeded generator used wherever random pairs or perturbations are sampled.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random vector of given dimension with entries uniform in `[-scale, scale]`.
pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.gen_range(-scale..=scale)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_grid_endpoints_exact() {
        let g = LogGrid::new(1e-3, 1e3, 13).values();
        assert_eq!(g[0], 1e-3);
        assert_eq!(*g.last().unwrap(), 1e3);
        assert!((g[6] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_must_span_two_decades() {
        assert!(LogGrid::new(1.0, 50.0, 10).validate_for_conditions().is_err());
        assert!(LogGrid::new(1.0, 100.0, 2).validate_for_conditions().is_ok());
    }

    #[test]
    fn directions_are_unit_and_nested() {
        for dim in [2, 3, 5] {
            let d = Directions::new(dim, 7);
            let long = d.take(40);
            let short = d.take(10);
            assert_eq!(&long[..10], &short[..]);
            for v in &long {
                let n: f64 = v.iter().map(|a| a * a).sum();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seeds_reproduce_directions() {
        let a = Directions::new(3, 42).take(16);
        let b = Directions::new(3, 42).take(16);
        assert_eq!(a, b);
        assert_ne!(a, Directions::new(3, 43).take(16));
    }

    #[test]
    fn ball_points_stay_in_domain() {
        for p in ball_points([0.02, 0.5], 0.1, 8) {
            assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
        }
    }
}
