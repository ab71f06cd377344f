use orlicz::conditions::*;
use orlicz::profile::Profile;
use orlicz::sampling::LogGrid;
use orlicz::structures::*;

#[test]
fn sqrt_log_modulus_for_holder_exponent() {
    let p = Profile::HolderBump {
        base: 2.0,
        amplitude: 1.0,
        beta: 0.5,
        center: [0.5, 0.5],
    };
    let g = a_minus_one(Model::variable_exponent(p.shared(), 2));
    let s = ContinuitySample {
        radii: LogGrid::new(1e-4, 1e-2, 6).values(),
        ..Default::default()
    };
    let rep = check_continuity(&g, Continuity::WVA1, 1.0, 0.1, &s).unwrap();
    let fit = rep.fit_reference(sqrt_log_shape);
    assert!(fit.residual < 0.1, "{fit:?}");
    assert!(fit.bound.is_finite() && fit.bound > 0.0);
}

fn quartic(q: f64) -> Model {
    let a = Profile::HolderBump {
        base: 0.0,
        amplitude: 1.0,
        beta: 0.5,
        center: [0.5, 0.5],
    };
    Model::aniso_quartic(2.0, q, a.shared(), Profile::constant(1.0).shared(), 1.0, false, 2)
}

#[test]
fn weighted_quartic_gap_threshold() {
    let s = ContinuitySample::default();
    let ok = check_chain(&EnergyMap(&quartic(2.5)), 1.0, 0.5, &s, &FitOptions::default()).unwrap();
    assert!(ok.wva1.passed && ok.a1.passed);
    assert!(ok.chain_holds);

    let m = quartic(3.0);
    let bad = check_chain(&EnergyMap(&m), 1.0, 0.5, &s, &FitOptions::default()).unwrap();
    assert!(!bad.wva1.passed);
    assert!(bad.wva1.violation_count > 0);
    assert!(bad.wva1.violations_reproduce(&EnergyMap(&m)));
    assert!(bad.chain_holds);
}

#[test]
fn chain_holds_for_every_family() {
    let s = ContinuitySample {
        radii: LogGrid::new(1e-3, 0.2, 5).values(),
        magnitudes: 10,
        ..Default::default()
    };
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let ch = check_chain(&a_minus_one(m.clone()), 1.0, 0.5, &s, &FitOptions::default()).unwrap();
        assert!(ch.chain_holds, "{}", fam.name);
        if ch.va1.passed {
            assert!(ch.wva1.passed, "{}", fam.name);
        }
        if ch.wva1.passed {
            assert!(ch.a1.passed, "{}", fam.name);
        }
    }
}
