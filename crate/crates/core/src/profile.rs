//! Scalar coefficient fields on the unit square: exponents `p(x)`, double phase
//! weights `a(x)` and multiplicative weights `gamma(x)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::sampling::project_to_domain;
use crate::Point;

/// A scalar field on the closed unit square, extended outside by nearest-point projection.
pub trait ScalarField: Send + Sync {
    fn value(&self, x: Point) -> f64;

    /// `(min, max)` over a dense lattice of the unit square.
    fn range_on_domain(&self) -> (f64, f64) {
        let m = 64;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..=m {
            for i in 0..=m {
                let v = self.value([i as f64 / m as f64, j as f64 / m as f64]);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    fn is_constant(&self) -> bool {
        false
    }
}

impl<F> ScalarField for F
where
    F: Fn(Point) -> f64 + Send + Sync,
{
    fn value(&self, x: Point) -> f64 {
        self(project_to_domain(x))
    }
}

pub type SharedField = Arc<dyn ScalarField>;

/// Built-in coefficient profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `base + slope * x[axis]`
    Linear {
        base: f64,
        slope: f64,
        #[serde(default)]
        axis: usize,
    },
    /// `clamp(base + slope * x[axis], lo, hi)`
    Clipped {
        base: f64,
        slope: f64,
        #[serde(default)]
        axis: usize,
        lo: f64,
        hi: f64,
    },
    /// `base + amplitude * |x - center|^beta`; Hölder continuous with exponent `beta`.
    HolderBump {
        base: f64,
        amplitude: f64,
        beta: f64,
        #[serde(default = "default_center")]
        center: Point,
    },
    /// Cubic smoothstep from `from` to `to` as `x[axis]` runs over `[lo, hi]`.
    Smoothstep {
        from: f64,
        to: f64,
        #[serde(default)]
        axis: usize,
        lo: f64,
        hi: f64,
    },
}

fn default_center() -> Point {
    [0.5, 0.5]
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Profile::Constant { value }
    }

    /// Hölder exponent of the profile when it is the limiting regularity.
    pub fn holder_exponent(&self) -> f64 {
        match self {
            Profile::HolderBump { beta, amplitude, .. } if *amplitude != 0.0 => *beta,
            _ => 1.0,
        }
    }

    /// Modulus of continuity `r -> sup_{|x-y| <= r} |f(x) - f(y)|` as a closed form bound.
    pub fn modulus(&self, r: f64) -> f64 {
        match *self {
            Profile::Constant { .. } => 0.0,
            Profile::Linear { slope, .. } => slope.abs() * r,
            Profile::Clipped { slope, lo, hi, .. } => (slope.abs() * r).min(hi - lo),
            Profile::HolderBump { amplitude, beta, .. } => amplitude.abs() * r.powf(beta),
            Profile::Smoothstep { from, to, lo, hi, .. } => {
                ((to - from).abs() * 1.5 * r / (hi - lo)).min((to - from).abs())
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match *self {
            Profile::Constant { value } if !value.is_finite() => Err("value must be finite".into()),
            Profile::Linear { axis, .. } | Profile::Clipped { axis, .. } | Profile::Smoothstep { axis, .. }
                if axis > 1 =>
            {
                Err(format!("axis must be 0 or 1, got {axis}"))
            }
            Profile::Clipped { lo, hi, .. } if lo > hi => Err("lo must not exceed hi".into()),
            Profile::Smoothstep { lo, hi, .. } if lo >= hi => Err("lo must be below hi".into()),
            Profile::HolderBump { beta, .. } if !(beta > 0.0 && beta <= 1.0) => {
                Err(format!("beta must lie in (0, 1], got {beta}"))
            }
            _ => Ok(()),
        }
    }

    pub fn shared(self) -> SharedField {
        Arc::new(self)
    }
}

impl ScalarField for Profile {
    fn value(&self, x: Point) -> f64 {
        let x = project_to_domain(x);
        match *self {
            Profile::Constant { value } => value,
            Profile::Linear { base, slope, axis } => base + slope * x[axis],
            Profile::Clipped {
                base,
                slope,
                axis,
                lo,
                hi,
            } => (base + slope * x[axis]).clamp(lo, hi),
            Profile::HolderBump {
                base,
                amplitude,
                beta,
                center,
            } => {
                let d = ((x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2)).sqrt();
                base + amplitude * d.powf(beta)
            }
            Profile::Smoothstep { from, to, axis, lo, hi } => {
                let s = ((x[axis] - lo) / (hi - lo)).clamp(0.0, 1.0);
                from + (to - from) * s * s * (3.0 - 2.0 * s)
            }
        }
    }

    fn is_constant(&self) -> bool {
        match *self {
            Profile::Constant { .. } => true,
            Profile::Linear { slope, .. } | Profile::Clipped { slope, .. } => slope == 0.0,
            Profile::HolderBump { amplitude, .. } => amplitude == 0.0,
            Profile::Smoothstep { from, to, .. } => from == to,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipped_profile_matches_example() {
        let a = Profile::Clipped {
            base: 0.0,
            slope: 1.0,
            axis: 0,
            lo: 0.0,
            hi: 1.0,
        };
        assert_eq!(a.value([0.5, 0.0]), 0.5);
        assert_eq!(a.value([1.7, 0.0]), 1.0);
    }

    #[test]
    fn holder_bump_modulus_bounds_increments() {
        let p = Profile::HolderBump {
            base: 2.0,
            amplitude: 0.3,
            beta: 0.5,
            center: [0.5, 0.5],
        };
        let r = 0.01;
        let x = [0.5, 0.5];
        let y = [0.5 + r, 0.5];
        assert!((p.value(y) - p.value(x)).abs() <= p.modulus(r) + 1e-15);
    }

    #[test]
    fn serde_shape_is_tagged() {
        let p: Profile = serde_json::from_str(r#"{"kind":"linear","base":2.0,"slope":0.3}"#).unwrap();
        assert_eq!(
            p,
            Profile::Linear {
                base: 2.0,
                slope: 0.3,
                axis: 0
            }
        );
    }
}
