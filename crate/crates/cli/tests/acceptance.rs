//! End-to-end acceptance checks. Each check prints one PASS/FAIL line with
//! its measured values and pinned tolerances; the test fails if any check does.

use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use orlicz::approx::*;
use orlicz::conditions::*;
use orlicz::growth::*;
use orlicz::phi::{Power, VariableExponent};
use orlicz::probes::{higher_integrability, holder_exponent};
use orlicz::profile::Profile;
use orlicz::sampling::LogGrid;
use orlicz::solver::*;
use orlicz::structures::*;

const X0: [f64; 2] = [0.5, 0.5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn spread(v: &[f64]) -> f64 {
    v.iter().cloned().fold(0.0, f64::max) / v.iter().cloned().fold(f64::INFINITY, f64::min)
}

fn max_node_error(u: &GridFunction, g: impl Fn([f64; 2]) -> f64) -> f64 {
    let mut err = 0.0f64;
    for j in 0..=u.n {
        for i in 0..=u.n {
            err = err.max((u.at(i, j) - g(u.node(i, j))).abs());
        }
    }
    err
}

fn holder_bump(beta: f64, base: f64) -> Profile {
    Profile::HolderBump {
        base,
        amplitude: 1.0,
        beta,
        center: X0,
    }
}

fn growth_certificate() -> Outcome {
    let t0 = Instant::now();
    let m = Model::p_laplace(3.0, 2);
    let mut worst = 0.0f64;
    for t in LogGrid::new(1e-3, 1e3, 25).values() {
        let psi = extract_psi_prime(&m, X0, t, 32, 0).unwrap();
        worst = worst.max((psi / (2.0 * t * t) - 1.0).abs());
    }
    let cert = build_growth_function(Arc::new(m), &GrowthOptions::autonomous()).unwrap();
    let ratio = cert.nu / cert.lambda_jacobian;
    let ratio_err = (ratio / 0.5 - 1.0).abs();
    let elapsed = t0.elapsed();
    check(
        worst <= 1e-2 && ratio_err <= 0.05 && elapsed < Duration::from_secs(10),
        format!(
            "p-Laplace p=3: max |psi'/(2t^2) - 1| = {worst:.2e} (tol 1e-2); nu/Lambda = {ratio:.6} vs 0.5 (tol 5%); {} (tol 10s)",
            secs(elapsed)
        ),
    )
}

fn equivalence_constants() -> Outcome {
    let m = Model::p_laplace(2.0, 2);
    let r = check_equivalences(&Power::normalized(2.0), Some(&m), Some(&m), &SphereSample::default()).unwrap();
    let (c1, c2) = (r.c1.unwrap(), r.c2.unwrap());
    check(
        (c1 / 2.0 - 1.0).abs() <= 0.01 && (c2 - 1.0).abs() <= 0.01,
        format!("p=2 with phi = t^2/2: c1 = {c1:.6} (2 +- 1%), c2 = {c2:.6} (1 +- 1%)"),
    )
}

fn approximant_lemmas() -> Outcome {
    let mut worst_spread = 0.0f64;
    let mut worst_label = String::new();
    let mut annulus = 0.0f64;
    let mut failures = Vec::new();
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let a: Arc<dyn VectorField> = Arc::new(m.clone());
        let f: Arc<dyn Lagrangian> = Arc::new(m.clone());
        let cert = build_growth_function(a.clone(), &GrowthOptions::default()).unwrap();
        let mut cols: [Vec<f64>; 4] = Default::default();
        for t1 in [0.005, 0.05, 0.5] {
            for t2 in [2.0, 20.0, 200.0] {
                let params = ApproxParams { x0: X0, t1, t2 };
                let abar = build_abar(a.clone(), &cert, &params).unwrap();
                let ca = verify_growth_of_approx(&abar, &abar.phibar, &ApproxSample::default());
                let cf = build_fbar(f.clone(), &cert, &params, &Calibration::default())
                    .and_then(|fb| verify_growth_of_approx(&GradientField(&fb), &fb.phibar, &ApproxSample::default()));
                match (ca, cf) {
                    (Ok(ca), Ok(cf)) => {
                        cols[0].push(ca.nu);
                        cols[1].push(ca.lambda);
                        cols[2].push(cf.nu);
                        cols[3].push(cf.lambda);
                    }
                    (ca, cf) => failures.push(format!("{} ({t1}, {t2}): {:?} {:?}", fam.name, ca.err(), cf.err())),
                }
                if 2.0 * t1 <= 0.5 * t2 {
                    for k in 0..=16 {
                        let t = 2.0 * t1 * (t2 / (4.0 * t1)).powf(k as f64 / 16.0);
                        let th = 0.7 * k as f64;
                        let xi = [t * th.cos(), t * th.sin()];
                        let lhs = abar.eval([0.1, 0.9], &xi);
                        let rhs = VectorField::eval(&m, X0, &xi);
                        annulus = annulus.max((lhs - &rhs).norm() / rhs.norm());
                    }
                }
            }
        }
        for (label, col) in ["A nu", "A Lambda", "F nu", "F Lambda"].iter().zip(&cols) {
            if !col.is_empty() && spread(col) > worst_spread {
                worst_spread = spread(col);
                worst_label = format!("{} {label}", fam.name);
            }
        }
    }
    check(
        failures.is_empty() && worst_spread < 2.0 && annulus <= 4.0 * f64::EPSILON,
        format!(
            "5 families x 9 (t1, t2): {} verification failures; worst constant spread {worst_spread:.3} ({worst_label}) (tol < 2); annulus max rel deviation {annulus:.1e} (tol 4 eps)",
            failures.len()
        ),
    )
}

fn phibar_properties() -> Outcome {
    let p = holder_bump(0.3, 2.0);
    let m = Model::variable_exponent(p.clone().shared(), 2);
    let cert = build_growth_function(Arc::new(m.clone()), &GrowthOptions::default()).unwrap();
    let phi = VariableExponent::new(p.clone().shared(), true);
    let mut all = true;
    let mut worst_inc = 0.0f64;
    let mut worst_item3 = 0.0f64;
    for r in [0.05, 0.1, 0.2] {
        let pb = build_phibar(&cert, X0, 0.1, 10.0).unwrap();
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
        all &= rep.item1 && rep.item2 && rep.item3 && rep.item4 && rep.hypothesis_holds;
        worst_inc = worst_inc
            .max((rep.inc_constant - 1.0).abs())
            .max((rep.dec_constant - 1.0).abs());
        worst_item3 = worst_item3.max(rep.item3_factor / rep.item3_bound);
    }
    // the power-mean side of the first comparison inequality
    let rec = comparison_experiment(
        &Operator::Energy(Arc::new(m)),
        &phi,
        &cert,
        &Modulus::power(0.3),
        X0,
        0.1,
        &ComparisonOptions::default(),
    )
    .unwrap();
    let jensen = rec.lemma61.item1_jensen;
    check(
        all && worst_inc <= 1e-12 && worst_item3 <= 1.0 && jensen <= 1.0,
        format!(
            "variable exponent, r in {{0.05, 0.1, 0.2}}: items 1-4 {}; |Inc/Dec constant - 1| = {worst_inc:.1e} (tol 1e-12); max factor / (q1/p)L~ = {worst_item3:.3} (tol <= 1); power-mean ratio {jensen:.6} (tol <= 1)",
            if all { "pass" } else { "FAIL" }
        ),
    )
}

fn quartic(q: f64) -> Model {
    Model::aniso_quartic(
        2.0,
        q,
        holder_bump(0.5, 0.0).shared(),
        Profile::constant(1.0).shared(),
        1.0,
        false,
        2,
    )
}

fn condition_chain() -> Outcome {
    let t0 = Instant::now();
    let mut broken = Vec::new();
    for seed in [0, 1] {
        let s = ContinuitySample {
            radii: LogGrid::new(1e-3, 0.2, 5).values(),
            magnitudes: 10,
            seed,
            ..Default::default()
        };
        let mut models: Vec<(String, Model)> = registry()
            .into_iter()
            .map(|f| (f.name.to_string(), build_model(&f.example).unwrap()))
            .collect();
        models.push(("quartic q=2.5".into(), quartic(2.5)));
        models.push(("quartic q=3".into(), quartic(3.0)));
        for (name, m) in models {
            let ch = check_chain(&a_minus_one(m), 1.0, 0.5, &s, &FitOptions::default()).unwrap();
            if !ch.chain_holds {
                broken.push(format!("{name} seed {seed}"));
            }
        }
    }

    let g = a_minus_one(Model::variable_exponent(holder_bump(0.5, 2.0).shared(), 2));
    let s = ContinuitySample {
        radii: LogGrid::new(1e-4, 1e-2, 6).values(),
        ..Default::default()
    };
    let rep = check_continuity(&g, Continuity::WVA1, 1.0, 0.1, &s).unwrap();
    let fit = rep.fit_reference(sqrt_log_shape);

    let s = ContinuitySample::default();
    let ok = check_chain(&EnergyMap(&quartic(2.5)), 1.0, 0.5, &s, &FitOptions::default()).unwrap();
    let m3 = quartic(3.0);
    let bad = check_chain(&EnergyMap(&m3), 1.0, 0.5, &s, &FitOptions::default()).unwrap();
    let reproduce = bad.wva1.violations_reproduce(&EnergyMap(&m3));
    check(
        broken.is_empty()
            && rep.passed
            && fit.residual < 0.1
            && ok.wva1.passed
            && !bad.wva1.passed
            && bad.wva1.violation_count > 0
            && reproduce,
        format!(
            "chain VA1=>wVA1=>A1 on 7 models x 2 sample sets: {} broken; r^0.5 exponent: wVA1 {} with omega <= {:.3} r^0.5 ln(1/r), fit residual {:.1}% (tol < 10%); q/p = 1+b/n: wVA1 {}; q/p = 1+2b/n: wVA1 {} with {} violations (reproduced: {reproduce}); {}",
            broken.len(),
            if rep.passed { "passes" } else { "fails" },
            fit.bound,
            100.0 * fit.residual,
            if ok.wva1.passed { "passes" } else { "fails" },
            if bad.wva1.passed { "passes" } else { "fails" },
            bad.wva1.violation_count,
            secs(t0.elapsed())
        ),
    )
}

fn solver_exactness() -> Outcome {
    let t0 = Instant::now();
    let (u, _) = minimize(
        &Model::p_laplace(2.0, 2),
        &Boundary::saddle(),
        64,
        &SolveOptions::default(),
    )
    .unwrap();
    let saddle = max_node_error(&u, |x| x[0] * x[0] - x[1] * x[1]);
    let g = Boundary::affine(0.2, [1.3, -0.6]);
    let mut affine = 0.0f64;
    for fam in registry() {
        let m = build_model(&fam.example).unwrap();
        let frozen = Frozen {
            inner: m.clone(),
            x0: [0.3, 0.7],
        };
        let (u, _) = minimize(&frozen, &g, 64, &SolveOptions::default()).unwrap();
        affine = affine.max(max_node_error(&u, |x| g.eval(x)));
        if VectorField::is_autonomous(&m) {
            let (u, _) = minimize(&m, &g, 64, &SolveOptions::default()).unwrap();
            affine = affine.max(max_node_error(&u, |x| g.eval(x)));
        }
    }
    let elapsed = t0.elapsed();
    check(
        saddle <= 1e-8 && affine <= 1e-8 && elapsed < Duration::from_secs(30),
        format!(
            "N=64: saddle max nodal error {saddle:.1e} (tol 1e-8); affine data, 5 families, max error {affine:.1e} (tol 1e-8); {} (tol 30s)",
            secs(elapsed)
        ),
    )
}

fn solver_agreement() -> Outcome {
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
    let d = gradient_l1_distance(&u1, &u2);
    check(
        d <= 1e-5 && r2.method == Method::GaussSeidel,
        format!(
            "double phase N=64: Newton ({} its) vs Gauss-Seidel ({} sweeps) L1 gradient gap {d:.2e} (tol 1e-5)",
            r1.iterations, r2.iterations
        ),
    )
}

fn comparison_decay() -> Outcome {
    let t0 = Instant::now();
    let p = holder_bump(0.3, 2.0);
    let m = Model::variable_exponent(p.clone().shared(), 2);
    let cert = build_growth_function(Arc::new(m.clone()), &GrowthOptions::default()).unwrap();
    let phi = VariableExponent::new(p.shared(), true);
    let op = Operator::Energy(Arc::new(m));
    let records: Vec<ComparisonRecord> = [0.2, 0.1, 0.05]
        .iter()
        .map(|&r| {
            comparison_experiment(
                &op,
                &phi,
                &cert,
                &Modulus::power(0.3),
                X0,
                r,
                &ComparisonOptions::default(),
            )
            .unwrap()
        })
        .collect();
    let gaps: Vec<f64> = records.iter().map(|r| r.normalized_gap).collect();
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let slope = comparison_slope(&records).unwrap_or(f64::NAN);
    let elapsed = t0.elapsed();
    check(
        monotone && slope > 0.0 && elapsed < Duration::from_secs(300),
        format!(
            "variable exponent, omega = r^0.3: normalized gaps {:.3e} > {:.3e} > {:.3e} ({}), log-log slope {slope:.3} (tol > 0); {} (tol 300s)",
            gaps[0],
            gaps[1],
            gaps[2],
            if monotone { "monotone" } else { "NOT monotone" },
            secs(elapsed)
        ),
    )
}

fn probe_calibration() -> Outcome {
    let radii = [0.02, 0.04, 0.08, 0.12, 0.2];
    let mut worst = 0.0f64;
    let mut fitted = Vec::new();
    for alpha in [0.3, 0.5, 1.0] {
        let u = GridFunction::unit(256, |x| ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).powf(0.5 * alpha));
        let fit = holder_exponent(&u, X0, &radii).unwrap();
        worst = worst.max((fit.alpha - alpha).abs());
        fitted.push(format!("{alpha} -> {:.3}", fit.alpha));
    }
    let (u, _) = minimize(
        &Model::p_laplace(2.0, 2),
        &Boundary::saddle(),
        128,
        &SolveOptions::default(),
    )
    .unwrap();
    let sigma: Vec<f64> = (0..=20).map(|k| 0.05 * k as f64).collect();
    let hi = higher_integrability(&Power::normalized(2.0), &u, X0, 0.1, &sigma, 10.0).unwrap();
    let monotone = hi.lhs.windows(2).all(|w| w[1] >= w[0]);
    check(
        worst <= 0.05 && monotone,
        format!(
            "synthetic |x-c|^a: {} (max error {worst:.3}, tol 0.05); higher integrability LHS nondecreasing in sigma: {monotone}, sigma_measured {:.2}",
            fitted.join(", "),
            hi.sigma_measured
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    let config = serde_json::json!({
        "model": { "family": "double_phase", "p": 2.0, "q": 2.5,
                   "a": { "kind": "linear", "base": 0.0, "slope": 1.0 } },
        "pipeline": "full",
        "conditions": { "sample": { "radii": [0.001, 0.01, 0.1], "magnitudes": 8 } },
        "comparison": { "balls": [{ "center": [0.5, 0.5], "r": 0.1 }], "options": { "cells": 16 } }
    });
    std::fs::write(&cfg, config.to_string()).unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_orlicz"))
            .args([
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                "5",
            ])
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        outputs.push(files);
    }
    let same = outputs[0] == outputs[1];
    let bytes: usize = outputs[0].iter().map(|f| f.1.len()).sum();
    check(
        same && outputs[0].len() >= 8,
        format!(
            "two runs, same config and seed: {} CSV files, {bytes} bytes, byte-identical: {same}",
            outputs[0].len()
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 10] = [
        ("growth certificate", growth_certificate),
        ("equivalence constants", equivalence_constants),
        ("approximant lemmas", approximant_lemmas),
        ("phi-bar properties", phibar_properties),
        ("condition chain", condition_chain),
        ("solver exactness", solver_exactness),
        ("solver agreement", solver_agreement),
        ("comparison decay", comparison_decay),
        ("probe calibration", probe_calibration),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (k, (name, f)) in checks.iter().enumerate() {
        let out = f();
        println!(
            "[{}] {:>2} {name}: {}",
            if out.pass { "PASS" } else { "FAIL" },
            k + 1,
            out.detail
        );
        if !out.pass {
            failed.push(*name);
        }
    }
    if failed.is_empty() {
        println!("acceptance: 10 of 10 criteria pass");
    } else {
        println!("acceptance: failed {failed:?}");
        std::process::exit(1);
    }
}
