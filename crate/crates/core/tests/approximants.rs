use std::sync::Arc;

use orlicz::approx::*;
use orlicz::growth::*;
use orlicz::phi::VariableExponent;
use orlicz::profile::Profile;
use orlicz::structures::*;

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(0.0, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

#[test]
fn constants_are_stable_across_thresholds() {
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let a: Arc<dyn VectorField> = Arc::new(m.clone());
        let f: Arc<dyn Lagrangian> = Arc::new(m);
        let cert = build_growth_function(a.clone(), &GrowthOptions::default()).unwrap();
        let (mut an, mut al, mut fnu, mut fl) = (vec![], vec![], vec![], vec![]);
        for t1 in [0.005, 0.05, 0.5] {
            for t2 in [2.0, 20.0, 200.0] {
                let params = ApproxParams { x0: [0.5, 0.5], t1, t2 };
                let abar = build_abar(a.clone(), &cert, &params).unwrap();
                let ca = verify_growth_of_approx(&abar, &abar.phibar, &ApproxSample::default()).unwrap();
                let fbar = build_fbar(f.clone(), &cert, &params, &Calibration::default()).unwrap();
                let cf =
                    verify_growth_of_approx(&GradientField(&fbar), &fbar.phibar, &ApproxSample::default()).unwrap();
                an.push(ca.nu);
                al.push(ca.lambda);
                fnu.push(cf.nu);
                fl.push(cf.lambda);
            }
        }
        for (label, v) in [("A nu", &an), ("A lambda", &al), ("F nu", &fnu), ("F lambda", &fl)] {
            assert!(spread(v) < 2.0, "{} {label}: {v:?}", fam.name);
        }
    }
}

#[test]
fn annulus_identity_is_exact() {
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let a: Arc<dyn VectorField> = Arc::new(m.clone());
        let cert = build_growth_function(a.clone(), &GrowthOptions::default()).unwrap();
        let params = ApproxParams {
            x0: [0.4, 0.6],
            t1: 0.1,
            t2: 20.0,
        };
        let abar = build_abar(a, &cert, &params).unwrap();
        for k in 0..=20 {
            let t = 0.2 * 50f64.powf(k as f64 / 20.0);
            let th = 0.3 * k as f64;
            let xi = [t * th.cos(), t * th.sin()];
            assert_eq!(
                abar.eval([0.9, 0.1], &xi),
                VectorField::eval(&m, params.x0, &xi),
                "{} at {t}",
                fam.name
            );
        }
    }
}

#[test]
fn phibar_properties_for_variable_exponent() {
    let p = Profile::HolderBump {
        base: 2.0,
        amplitude: 1.0,
        beta: 0.3,
        center: [0.5, 0.5],
    };
    let m = Model::variable_exponent(p.clone().shared(), 2);
    let cert = build_growth_function(Arc::new(m), &GrowthOptions::default()).unwrap();
    let phi = VariableExponent::new(p.shared(), true);
    for r in [0.05, 0.1, 0.2] {
        for (t1, t2) in [(0.5, 2.0), (0.1, 10.0)] {
            let pb = build_phibar(&cert, [0.5, 0.5], t1, t2).unwrap();
            let rep = check_prop_phibar(
                &phi,
                &pb,
                None,
                &PhiBarSample {
                    radius: r,
                    ..Default::default()
                },
            )
            .unwrap();
            assert!(rep.passed, "r {r}: {rep:?}");
            assert!((rep.inc_constant - 1.0).abs() < 1e-12 && (rep.dec_constant - 1.0).abs() < 1e-12);
            assert!(rep.item3_factor <= rep.item3_bound);
        }
    }
}
