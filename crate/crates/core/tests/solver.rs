use std::sync::Arc;

use orlicz::conditions::Modulus;
use orlicz::growth::*;
use orlicz::phi::VariableExponent;
use orlicz::profile::Profile;
use orlicz::solver::*;
use orlicz::structures::*;

fn max_error(u: &GridFunction, g: impl Fn([f64; 2]) -> f64) -> f64 {
    let mut err = 0.0f64;
    for j in 0..=u.n {
        for i in 0..=u.n {
            err = err.max((u.at(i, j) - g(u.node(i, j))).abs());
        }
    }
    err
}

#[test]
fn saddle_is_reproduced() {
    let (u, _) = minimize(
        &Model::p_laplace(2.0, 2),
        &Boundary::saddle(),
        64,
        &SolveOptions::default(),
    )
    .unwrap();
    assert!(max_error(&u, |x| x[0] * x[0] - x[1] * x[1]) < 1e-8);
}

#[test]
fn affine_data_for_every_frozen_family() {
    let g = Boundary::affine(0.2, [1.3, -0.6]);
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let fr = Frozen {
            inner: m,
            x0: [0.3, 0.7],
        };
        let (u, _) = minimize(&fr, &g, 64, &SolveOptions::default()).unwrap();
        assert!(max_error(&u, |x| g.eval(x)) < 1e-8, "{}", fam.name);
    }
}

#[test]
fn equation_and_minimizer_agree() {
    let a = Profile::Clipped {
        base: 0.0,
        slope: 1.0,
        axis: 0,
        lo: 0.0,
        hi: 1.0,
    };
    let m = Model::double_phase(2.0, 3.0, a.shared(), 2);
    let g = Boundary::affine(0.0, [1.0, -1.0]);
    let opts = SolveOptions {
        residual_tol: 1e-9,
        ..Default::default()
    };
    let (u1, r1) = minimize(&m, &g, 64, &opts).unwrap();
    let eq = EquationOptions {
        potential: Some(&m),
        force_gauss_seidel: true,
    };
    let (u2, r2) = solve_equation(&m, &g, 64, &opts, eq).unwrap();
    assert_eq!(r1.method, Method::Newton);
    assert_eq!(r2.method, Method::GaussSeidel);
    assert!(gradient_l1_distance(&u1, &u2) < 1e-5);
}

#[test]
fn comparison_gap_decays() {
    let p = Profile::HolderBump {
        base: 2.0,
        amplitude: 1.0,
        beta: 0.3,
        center: [0.5, 0.5],
    };
    let m = Model::variable_exponent(p.clone().shared(), 2);
    let cert = build_growth_function(Arc::new(m.clone()), &GrowthOptions::default()).unwrap();
    let phi = VariableExponent::new(p.shared(), true);
    let op = Operator::Energy(Arc::new(m));
    let records: Vec<_> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&r| {
            comparison_experiment(
                &op,
                &phi,
                &cert,
                &Modulus::power(0.3),
                [0.5, 0.5],
                r,
                &ComparisonOptions::default(),
            )
            .unwrap()
        })
        .collect();
    for w in records.windows(2) {
        assert!(w[1].normalized_gap < w[0].normalized_gap);
    }
    let slope = comparison_slope(&records).unwrap();
    assert!(slope > 0.0, "{slope}");
    assert!(fit_comparison_constant(&records).is_finite());
    for rec in &records {
        assert!(rec.lemma61.item1_jensen <= 1.0);
        assert!(!rec.warnings.is_empty());
    }
}

#[test]
fn strict_admissibility_rejects_desk_scale() {
    let m = Model::p_laplace(2.0, 2);
    let cert = build_growth_function(Arc::new(m.clone()), &GrowthOptions::autonomous()).unwrap();
    let opts = ComparisonOptions {
        admissibility: Admissibility::Strict,
        cells: 16,
        ..Default::default()
    };
    let r = comparison_experiment(
        &Operator::Energy(Arc::new(m)),
        cert.phi.as_ref(),
        &cert,
        &Modulus::power(0.3),
        [0.5, 0.5],
        0.2,
        &opts,
    );
    assert!(matches!(r, Err(orlicz::Error::Admissibility(_))));
}
