//! Regularity probes on solved grid functions: oscillation and excess-decay
//! exponents, higher integrability ratios and the energy comparison suite.

use serde::{Deserialize, Serialize};

use crate::conditions::ball_volume;
use crate::phi::{BallEnvelope, PhiFunction};
use crate::sampling::ball_points;
use crate::solver::GridFunction;
use crate::{Error, Point, Result};

/// Log-log fit of an oscillation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// Fitted exponent clamped to `[0, 1]`.
    pub alpha: f64,
    pub alpha_raw: f64,
    /// Two standard errors of the slope.
    pub band: f64,
    /// RMS residual of the fit in `ln osc`.
    pub residual: f64,
    pub out_of_range: bool,
    pub zero_oscillation: bool,
    pub dropped_largest: bool,
    /// `(ρ, osc)` rows, increasing in `ρ`.
    pub table: Vec<(f64, f64)>,
}

fn check_radii(u: &GridFunction, radii: &[f64]) -> Result<Vec<f64>> {
    let mut r = radii.to_vec();
    r.sort_by(f64::total_cmp);
    if r.len() < 4 {
        return Err(Error::Unresolvable(format!("need at least 4 radii, got {}", r.len())));
    }
    if r[r.len() - 1] / r[0] < 10.0 * (1.0 - 1e-12) {
        return Err(Error::Unresolvable(format!(
            "radii must span a decade, got [{}, {}]",
            r[0],
            r[r.len() - 1]
        )));
    }
    if r[0] < 4.0 * u.h * (1.0 - 1e-12) {
        return Err(Error::Unresolvable(format!(
            "smallest radius {} is below 4h = {}",
            r[0],
            4.0 * u.h
        )));
    }
    Ok(r)
}

fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - icpt - slope * a).collect();
    let sse: f64 = res.iter().map(|e| e * e).sum();
    let se = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, icpt, res, se)
}

fn fit_table(table: Vec<(f64, f64)>) -> HolderFit {
    if table.iter().all(|&(_, o)| o == 0.0) {
        return HolderFit {
            alpha: 1.0,
            alpha_raw: 1.0,
            band: 0.0,
            residual: 0.0,
            out_of_range: false,
            zero_oscillation: true,
            dropped_largest: false,
            table,
        };
    }
    let rows: Vec<(f64, f64)> = table.iter().copied().filter(|&(_, o)| o > 0.0).collect();
    let x: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let (mut slope, _, mut res, mut se) = line_fit(&x, &y);
    let mut dropped = false;
    if x.len() > 4 {
        let last = res[res.len() - 1].abs();
        let others = res[..res.len() - 1].iter().fold(0.0f64, |m, e| m.max(e.abs()));
        if last > 3.0 * others {
            let k = x.len() - 1;
            (slope, _, res, se) = line_fit(&x[..k], &y[..k]);
            dropped = true;
        }
    }
    let rms = (res.iter().map(|e| e * e).sum::<f64>() / res.len() as f64).sqrt();
    HolderFit {
        alpha: slope.clamp(0.0, 1.0),
        alpha_raw: slope,
        band: 2.0 * se,
        residual: rms,
        out_of_range: !(0.0..=1.0).contains(&slope),
        zero_oscillation: false,
        dropped_largest: dropped,
        table,
    }
}

/// Exponent of `ρ ↦ osc_{B_ρ(center)} u`, the oscillation taken over the nodes
/// within distance `ρ` of `center`.
pub fn holder_exponent(u: &GridFunction, center: Point, radii: &[f64]) -> Result<HolderFit> {
    let radii = check_radii(u, radii)?;
    let n = u.n;
    let mut nodes: Vec<(f64, f64)> = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let x = u.node(i, j);
            nodes.push(((x[0] - center[0]).hypot(x[1] - center[1]), u.at(i, j)));
        }
    }
    let table = radii
        .iter()
        .map(|&rho| {
            let (lo, hi) = nodes
                .iter()
                .filter(|(d, _)| *d <= rho)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| {
                    (lo.min(v), hi.max(v))
                });
            (rho, if hi >= lo { hi - lo } else { 0.0 })
        })
        .collect();
    Ok(fit_table(table))
}

/// Exponent of the gradient excess `ρ ↦ ⨍_{B_ρ} |∇u - ⨍_{B_ρ} ∇u|` over the
/// cells whose centers lie within `ρ` of `center`.
pub fn excess_decay(u: &GridFunction, center: Point, radii: &[f64]) -> Result<HolderFit> {
    let radii = check_radii(u, radii)?;
    let n = u.n;
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let x = u.cell_center(i, j);
            cells.push(((x[0] - center[0]).hypot(x[1] - center[1]), u.cell_gradient(i, j)));
        }
    }
    let table = radii
        .iter()
        .map(|&rho| {
            let inside: Vec<[f64; 2]> = cells.iter().filter(|(d, _)| *d <= rho).map(|c| c.1).collect();
            if inside.is_empty() {
                return (rho, 0.0);
            }
            let k = inside.len() as f64;
            let m = inside.iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
            let m = [m[0] / k, m[1] / k];
            let ex = inside.iter().map(|g| (g[0] - m[0]).hypot(g[1] - m[1])).sum::<f64>() / k;
            (rho, ex)
        })
        .collect();
    Ok(fit_table(table))
}

/// Cells of `u` whose centers lie in the square inscribed in `B_ρ(center)`.
fn square_cells(u: &GridFunction, center: Point, rho: f64) -> Vec<(Point, f64)> {
    let half = rho / std::f64::consts::SQRT_2 * (1.0 + 1e-12);
    let mut out = Vec::new();
    for j in 0..u.n {
        for i in 0..u.n {
            let x = u.cell_center(i, j);
            if (x[0] - center[0]).abs() <= half && (x[1] - center[1]).abs() <= half {
                let g = u.cell_gradient(i, j);
                out.push((x, g[0].hypot(g[1])));
            }
        }
    }
    out
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HigherIntegrability {
    pub sigma_grid: Vec<f64>,
    /// `(⨍_{B_r} φ(x,|∇u|)^{1+σ})^{1/(1+σ)}` per `σ`.
    pub lhs: Vec<f64>,
    /// `φ⁻_{B_{2r}}(⨍_{B_{2r}} |∇u|) + 1`
    pub rhs: f64,
    pub ratios: Vec<f64>,
    /// Largest grid `σ` up to which every ratio stays below the cap.
    pub sigma_measured: f64,
    pub ratio_at_sigma: f64,
    /// `∫_{B_{2r}} φ(x,|∇u|)`; at most 1 exactly when the Luxemburg norm is.
    pub modular: f64,
    pub cap: f64,
}

/// Higher integrability ratio of `u` on `B_r(center)`, balls realized as
/// inscribed squares.
pub fn higher_integrability(
    phi: &dyn PhiFunction,
    u: &GridFunction,
    center: Point,
    r: f64,
    sigma_grid: &[f64],
    cap: f64,
) -> Result<HigherIntegrability> {
    let half = std::f64::consts::SQRT_2 * r;
    let slack = 1e-9 * u.h;
    let end = [u.origin[0] + u.side(), u.origin[1] + u.side()];
    let inside = (0..2).all(|k| center[k] - half >= u.origin[k] - slack && center[k] + half <= end[k] + slack);
    if !inside {
        return Err(Error::HigherIntegrability(format!("B_2r with r = {r} leaves the grid")));
    }
    if ball_volume(2, 2.0 * r) > 1.0 {
        return Err(Error::HigherIntegrability(format!(
            "|B_2r| = {} exceeds 1",
            ball_volume(2, 2.0 * r)
        )));
    }
    let outer = square_cells(u, center, 2.0 * r);
    let inner = square_cells(u, center, r);
    if inner.is_empty() {
        return Err(Error::HigherIntegrability(format!("B_r with r = {r} contains no cell")));
    }
    let cell_area = u.h * u.h;
    let modular: f64 = outer.iter().map(|&(x, t)| phi.eval(x, t)).sum::<f64>() * cell_area;
    if modular > 1.0 {
        return Err(Error::HigherIntegrability(format!(
            "norm of the gradient on B_2r exceeds 1 (modular {modular:e})"
        )));
    }
    let mut sigmas = sigma_grid.to_vec();
    sigmas.sort_by(f64::total_cmp);
    let lower = BallEnvelope {
        phi,
        points: ball_points(center, 2.0 * r, 16),
        upper: false,
    };
    let rhs = lower.eval(center, mean(outer.iter().map(|c| c.1))) + 1.0;
    let values: Vec<f64> = inner.iter().map(|&(x, t)| phi.eval(x, t)).collect();
    let lhs: Vec<f64> = sigmas
        .iter()
        .map(|&s| mean(values.iter().map(|v| v.powf(1.0 + s))).powf(1.0 / (1.0 + s)))
        .collect();
    for w in lhs.windows(2) {
        if w[1] < w[0] * (1.0 - 1e-12) {
            return Err(Error::Assertion(format!(
                "power mean decreased in sigma: {} then {}",
                w[0], w[1]
            )));
        }
    }
    let ratios: Vec<f64> = lhs.iter().map(|l| l / rhs).collect();
    let mut sigma_measured = 0.0;
    let mut ratio_at_sigma = ratios.first().copied().unwrap_or(f64::NAN);
    for (s, q) in sigmas.iter().zip(&ratios) {
        if *q > cap {
            break;
        }
        sigma_measured = *s;
        ratio_at_sigma = *q;
    }
    Ok(HigherIntegrability {
        sigma_grid: sigmas,
        lhs,
        rhs,
        ratios,
        sigma_measured,
        ratio_at_sigma,
        modular,
        cap,
    })
}

/// Both sides of the three energy comparisons between `u` on the square of
/// `B_{2r}` and `ū` on the square of `B_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma61Report {
    pub sigma: f64,
    /// `⨍_{B_r} φ(x,|∇u|)`
    pub item1_lhs: f64,
    /// `(⨍_{B_r} φ(x,|∇u|)^{1+σ})^{1/(1+σ)}`
    pub item1_mean: f64,
    /// `φ⁻_{B_{2r}}(⨍_{B_{2r}} |∇u|) + 1`
    pub item1_rhs_lower: f64,
    /// `φ̄(⨍_{B_{2r}} |∇u|) + 1`
    pub item1_rhs_bar: f64,
    /// `item1_lhs / item1_mean`; at most 1.
    pub item1_jensen: f64,
    pub item1_constant: f64,
    pub item1_constant_bar: f64,
    pub item2_lhs: f64,
    pub item2_mean: f64,
    pub item2_rhs: f64,
    pub item2_constant: f64,
    pub item3_lhs: f64,
    pub item3_rhs: f64,
    pub item3_constant: f64,
}

pub fn lemma61_suite(
    phi: &dyn PhiFunction,
    phibar: &dyn PhiFunction,
    u: &GridFunction,
    ubar: &GridFunction,
    center: Point,
    r: f64,
    sigma: f64,
) -> Result<Lemma61Report> {
    let outer = square_cells(u, center, 2.0 * r);
    let inner = square_cells(u, center, r);
    let bar = square_cells(ubar, center, r);
    if inner.is_empty() || bar.is_empty() {
        return Err(Error::HigherIntegrability(format!("B_r with r = {r} contains no cell")));
    }
    let phi_u: Vec<f64> = inner.iter().map(|&(x, t)| phi.eval(x, t)).collect();
    let phi_ubar: Vec<f64> = bar.iter().map(|&(x, t)| phi.eval(x, t)).collect();
    let power_mean = |v: &[f64], e: f64| mean(v.iter().map(|a| a.powf(e))).powf(1.0 / e);

    let item1_lhs = mean(phi_u.iter().copied());
    let item1_mean = power_mean(&phi_u, 1.0 + sigma);
    let mean_du_2r = mean(outer.iter().map(|c| c.1));
    let lower = BallEnvelope {
        phi,
        points: ball_points(center, 2.0 * r, 16),
        upper: false,
    };
    let item1_rhs_lower = lower.eval(center, mean_du_2r) + 1.0;
    let item1_rhs_bar = phibar.eval(center, mean_du_2r) + 1.0;
    let item1_jensen = item1_lhs / item1_mean;
    if item1_jensen > 1.0 + 1e-12 {
        return Err(Error::Assertion(format!(
            "power-mean inequality violated: ratio {item1_jensen}"
        )));
    }

    let item2_lhs = mean(phi_ubar.iter().copied());
    let item2_mean = power_mean(&phi_ubar, 1.0 + 0.5 * sigma);
    if item2_lhs > item2_mean * (1.0 + 1e-12) {
        return Err(Error::Assertion(format!(
            "power-mean inequality violated for the approximant: {item2_lhs} > {item2_mean}"
        )));
    }
    let item2_rhs = (mean(phi_u.iter().map(|a| a.powf(1.0 + 0.5 * sigma))) + 1.0).powf(2.0 / (2.0 + sigma));

    let item3_lhs = mean(bar.iter().map(|c| c.1));
    let item3_rhs = mean_du_2r + 1.0;
    Ok(Lemma61Report {
        sigma,
        item1_lhs,
        item1_mean,
        item1_rhs_lower,
        item1_rhs_bar,
        item1_jensen,
        item1_constant: item1_mean / item1_rhs_lower,
        item1_constant_bar: item1_mean / item1_rhs_bar,
        item2_lhs,
        item2_mean,
        item2_rhs,
        item2_constant: item2_mean / item2_rhs,
        item3_lhs,
        item3_rhs,
        item3_constant: item3_lhs / item3_rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phi::Power;

    fn radii() -> Vec<f64> {
        vec![0.02, 0.04, 0.08, 0.12, 0.2]
    }

    #[test]
    fn recovers_synthetic_exponents() {
        let c = [0.5, 0.5];
        for alpha in [0.3, 0.5, 1.0] {
            let u = GridFunction::unit(256, |x| (x[0] - c[0]).hypot(x[1] - c[1]).powf(alpha));
            let fit = holder_exponent(&u, c, &radii()).unwrap();
            assert!((fit.alpha - alpha).abs() < 0.05, "alpha {alpha}: {}", fit.alpha);
            assert!(fit.table.windows(2).all(|w| w[0].1 <= w[1].1));
        }
    }

    #[test]
    fn constant_field_flags_zero_oscillation() {
        let u = GridFunction::unit(256, |_| 3.0);
        let fit = holder_exponent(&u, [0.5, 0.5], &radii()).unwrap();
        assert!(fit.zero_oscillation);
        assert_eq!(fit.alpha, 1.0);
    }

    #[test]
    fn rejects_unresolvable_radii() {
        let u = GridFunction::unit(16, |x| x[0]);
        assert!(matches!(
            holder_exponent(&u, [0.5, 0.5], &radii()),
            Err(Error::Unresolvable(_))
        ));
        assert!(holder_exponent(&u, [0.5, 0.5], &[0.3, 0.35, 0.4, 0.45]).is_err());
    }

    #[test]
    fn affine_field_keeps_top_sigma() {
        let u = GridFunction::unit(32, |x| 0.5 * x[0] + 0.25 * x[1]);
        let grid: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64).collect();
        let hi = higher_integrability(&Power::normalized(2.0), &u, [0.5, 0.5], 0.15, &grid, 10.0).unwrap();
        assert_eq!(hi.sigma_measured, 1.0);
        let first = hi.ratios[0];
        assert!(hi.ratios.iter().all(|q| (q - first).abs() < 1e-12));
    }

    #[test]
    fn norm_cap_is_enforced() {
        let u = GridFunction::unit(32, |x| 20.0 * x[0]);
        let err = higher_integrability(&Power::normalized(2.0), &u, [0.5, 0.5], 0.2, &[0.0, 0.5], 10.0);
        assert!(matches!(err, Err(Error::HigherIntegrability(_))));
    }
}
