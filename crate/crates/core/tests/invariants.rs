use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use orlicz::approx::*;
use orlicz::growth::*;
use orlicz::phi::*;
use orlicz::probes::holder_exponent;
use orlicz::profile::Profile;
use orlicz::sampling::{LogGrid, SampleGrid};
use orlicz::solver::*;
use orlicz::structures::*;
use proptest::prelude::*;

struct Scaled(Model, f64);

impl VectorField for Scaled {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: [f64; 2], xi: &[f64]) -> DVector<f64> {
        VectorField::eval(&self.0, x, xi) * self.1
    }
    fn jacobian(&self, x: [f64; 2], xi: &[f64]) -> DMatrix<f64> {
        VectorField::jacobian(&self.0, x, xi) * self.1
    }
    fn constants(&self) -> StructureConstants {
        VectorField::constants(&self.0)
    }
    fn is_autonomous(&self) -> bool {
        true
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn left_inverse_undoes_eval(p in 1.2f64..4.0, dq in 0.0f64..2.0, a in 0.0f64..3.0, t in 1e-3f64..1e3) {
        let phi = DoublePhase::new(p, p + dq, Profile::constant(a).shared());
        let s = phi.eval([0.5, 0.5], t);
        let back = left_inverse(&phi, [0.5, 0.5], s).unwrap();
        prop_assert!((back - t).abs() <= 1e-9 * t);
    }

    #[test]
    fn young_gap_is_nonnegative(p in 1.3f64..4.0, t in 1e-2f64..1e2, s in 1e-2f64..1e2) {
        let gap = young_gap(&Power::normalized(p), [0.5, 0.5], t, s).unwrap();
        prop_assert!(gap >= -1e-8);
    }

    #[test]
    fn double_phase_is_inc_p_dec_q(p in 1.2f64..3.0, dq in 0.0f64..2.0, a in 0.0f64..5.0) {
        let q = p + dq;
        let phi = DoublePhase::new(p, q, Profile::constant(a).shared());
        let grid = SampleGrid::autonomous(LogGrid::new(1e-3, 1e3, 31));
        let inc = Condition::Inc { gamma: p };
        let dec = Condition::Dec { gamma: q };
        let weaker = Condition::AInc { gamma: 0.5 * (1.0 + p) };
        for c in [inc, dec, weaker] {
            prop_assert!(check_condition(&phi, c, &grid).unwrap().passed, "{}", c);
        }
    }

    #[test]
    fn certificate_is_one_homogeneous(c in 0.1f64..10.0) {
        let base = build_growth_function(Arc::new(Model::p_laplace(2.5, 2)), &GrowthOptions::autonomous()).unwrap();
        let scaled = build_growth_function(Arc::new(Scaled(Model::p_laplace(2.5, 2), c)), &GrowthOptions::autonomous()).unwrap();
        for t in [1e-2, 1.0, 1e2] {
            let r = scaled.phi.deriv([0.5, 0.5], t) / base.phi.deriv([0.5, 0.5], t);
            prop_assert!((r / c - 1.0).abs() < 1e-6);
        }
        prop_assert!((scaled.nu / base.nu - 1.0).abs() < 1e-6);
        prop_assert!((scaled.lambda / base.lambda - 1.0).abs() < 1e-6);
    }

    #[test]
    fn phibar_derivative_is_continuous_at_anchors(t1 in 0.01f64..0.5, t2 in 2.0f64..100.0) {
        let a = Profile::Clipped { base: 0.0, slope: 1.0, axis: 0, lo: 0.0, hi: 1.0 };
        let m = Model::double_phase(2.0, 3.0, a.shared(), 2);
        let cert = build_growth_function(Arc::new(m), &GrowthOptions::default()).unwrap();
        let pb = build_phibar(&cert, [0.5, 0.5], t1, t2).unwrap();
        prop_assert!(pb.derivative_jump() < 1e-12);
        for t in [t1, t2] {
            let lo = pb.deriv([0.5, 0.5], t * (1.0 - 1e-13));
            let hi = pb.deriv([0.5, 0.5], t * (1.0 + 1e-13));
            prop_assert!((lo - hi).abs() <= 1e-9 * hi);
        }
    }

    #[test]
    fn fbar_gradient_matches_differences(t in 1e-3f64..1e3, th in 0.0f64..std::f64::consts::TAU) {
        let a = Profile::Clipped { base: 0.0, slope: 1.0, axis: 0, lo: 0.0, hi: 1.0 };
        let m = Model::double_phase(2.0, 3.0, a.shared(), 2);
        let f: Arc<dyn Lagrangian> = Arc::new(m.clone());
        let cert = build_growth_function(Arc::new(m), &GrowthOptions::default()).unwrap();
        let params = ApproxParams { x0: [0.5, 0.5], t1: 0.05, t2: 20.0 };
        let fbar = build_fbar(f, &cert, &params, &Calibration::default()).unwrap();
        let xi = [t * th.cos(), t * th.sin()];
        let g = fbar.gradient([0.5, 0.5], &xi);
        for k in 0..2 {
            let h = 1e-6 * t;
            let mut up = xi;
            let mut dn = xi;
            up[k] += h;
            dn[k] -= h;
            let fd = (fbar.eval([0.5, 0.5], &up) - fbar.eval([0.5, 0.5], &dn)) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-5 * g.norm().max(1e-300));
        }
    }

    #[test]
    fn holder_fit_ignores_affine_rescaling(scale in -5.0f64..5.0, shift in -3.0f64..3.0) {
        prop_assume!(scale.abs() > 0.1);
        let u = GridFunction::unit(128, |x| ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).powf(0.25));
        let v = GridFunction::unit(128, |x| scale * ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).powf(0.25) + shift);
        let radii = [0.04, 0.08, 0.16, 0.32, 0.4];
        let a = holder_exponent(&u, [0.5, 0.5], &radii).unwrap();
        let b = holder_exponent(&v, [0.5, 0.5], &radii).unwrap();
        prop_assert!((a.alpha - b.alpha).abs() < 1e-9);
    }
}

#[test]
fn minimizer_energy_decreases() {
    let a = Profile::Clipped {
        base: 0.0,
        slope: 1.0,
        axis: 0,
        lo: 0.0,
        hi: 1.0,
    };
    let m = Model::double_phase(2.0, 3.0, a.shared(), 2);
    let g = Boundary::saddle();
    let (u, rep) = minimize(&m, &g, 32, &SolveOptions::default()).unwrap();
    for w in rep.energy_trajectory.windows(2) {
        assert!(w[1] <= w[0]);
    }
    let start = harmonic_extension(&with_boundary(32, &g));
    assert!(energy(&m, &u).unwrap() <= energy(&m, &start).unwrap());
}

#[test]
fn harmonic_quadratic_is_exact_at_every_resolution() {
    for n in [8, 16, 32] {
        let (u, _) = minimize(
            &Model::p_laplace(2.0, 2),
            &Boundary::saddle(),
            n,
            &SolveOptions::default(),
        )
        .unwrap();
        for j in 0..=n {
            for i in 0..=n {
                let x = u.node(i, j);
                assert!((u.at(i, j) - (x[0] * x[0] - x[1] * x[1])).abs() < 1e-8);
            }
        }
    }
}
