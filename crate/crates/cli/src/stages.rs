use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use orlicz::approx::{build_abar, build_fbar, build_phibar, check_prop_phibar, verify_growth_of_approx, ApproxParams};
use orlicz::conditions::{check_chain, sqrt_log_shape, ChainReport};
use orlicz::growth::{build_growth_function, check_equivalences, GrowthCertificate};
use orlicz::phi::{check_condition, Condition, PhiFunction};
use orlicz::probes::{excess_decay, higher_integrability, holder_exponent};
use orlicz::sampling::{Directions, LogGrid, SampleGrid};
use orlicz::solver::{
    comparison_experiment, comparison_slope, fit_comparison_constant, minimize, solve_equation, weak_residual,
    EquationOptions, Frozen, GridFunction, Operator, SolveReport,
};
use orlicz::structures::{a_minus_one, build_model, GradientField, Lagrangian, Model, VectorField};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, OperatorKind, SolveMethod, Stage};
use crate::{CliError, REPORT_VERSION};

#[derive(Debug, Clone, Serialize)]
pub struct StageStatus {
    pub stage: &'static str,
    pub ok: bool,
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub stages: Vec<StageStatus>,
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    model: Model,
    out: PathBuf,
    cert: Option<GrowthCertificate>,
    solution: Option<(GridFunction, SolveReport)>,
}

fn stage_err(stage: Stage) -> impl Fn(orlicz::Error) -> CliError {
    move |source| CliError::Stage {
        stage: stage.name(),
        source,
    }
}

/// Runs the configured pipeline, or only `only`, writing into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, only: Option<Stage>) -> Result<RunSummary, CliError> {
    let model = build_model(&cfg.model).map_err(|e| CliError::Validation {
        path: "model".into(),
        message: e.to_string(),
    })?;
    fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    let mut ctx = Context {
        cfg,
        model,
        out: out.to_path_buf(),
        cert: None,
        solution: None,
    };
    let stages = match only {
        Some(s) => vec![s],
        None => cfg.pipeline.stages(),
    };
    let mut summary = RunSummary { stages: Vec::new() };
    for stage in stages {
        let mut files = Vec::new();
        let outcome = ctx.run_stage(stage, &mut files);
        let (result, error) = match &outcome {
            Ok(v) => (v.clone(), Value::Null),
            Err(e) => (Value::Null, Value::String(e.to_string())),
        };
        let report = json!({
            "version": REPORT_VERSION,
            "stage": stage.name(),
            "family": cfg.model.family(),
            "seed": cfg.seed,
            "status": if outcome.is_ok() { "ok" } else { "failed" },
            "error": error,
            "files": files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect::<Vec<_>>(),
            "result": result,
        });
        let path = ctx.out.join(format!("{}.json", stage.name()));
        write_json(&path, &report)?;
        files.insert(0, path);
        summary.stages.push(StageStatus {
            stage: stage.name(),
            ok: outcome.is_ok(),
            files,
        });
        outcome?;
    }
    Ok(summary)
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::output(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::output(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::output(path, e))?;
    w.write_record(header).map_err(|e| CliError::output(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}

fn to_value(v: &impl Serialize) -> Value {
    serde_json::to_value(v).expect("reports serialize")
}

macro_rules! row {
    ($($v:expr),* $(,)?) => { vec![$($v.to_string()),*] };
}

impl Context<'_> {
    fn csv(
        &self,
        files: &mut Vec<PathBuf>,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let path = self.out.join(name);
        write_csv(&path, header, rows)?;
        files.push(path);
        Ok(())
    }

    fn field(&self) -> Arc<dyn VectorField> {
        Arc::new(self.model.clone())
    }

    fn lagrangian(&self) -> Arc<dyn Lagrangian> {
        Arc::new(self.model.clone())
    }

    fn ensure_cert(&mut self, stage: Stage) -> Result<&GrowthCertificate, CliError> {
        if self.cert.is_none() {
            let cert = build_growth_function(self.field(), &self.cfg.certificate).map_err(stage_err(stage))?;
            self.cert = Some(cert);
        }
        Ok(self.cert.as_ref().unwrap())
    }

    fn ensure_solution(&mut self, stage: Stage) -> Result<&(GridFunction, SolveReport), CliError> {
        if self.solution.is_none() {
            let s = &self.cfg.solve;
            let m = &self.model;
            let solved = match (s.frozen_at, s.method) {
                (Some(x0), SolveMethod::Minimize) => {
                    minimize(&Frozen { inner: m.clone(), x0 }, &s.boundary, s.cells, &s.options)
                }
                (Some(x0), SolveMethod::Equation) => {
                    let fr = Frozen { inner: m.clone(), x0 };
                    let eq = EquationOptions {
                        potential: Some(&fr),
                        force_gauss_seidel: false,
                    };
                    solve_equation(&fr, &s.boundary, s.cells, &s.options, eq)
                }
                (None, SolveMethod::Minimize) => minimize(m, &s.boundary, s.cells, &s.options),
                (None, SolveMethod::Equation) => {
                    let eq = EquationOptions {
                        potential: Some(m),
                        force_gauss_seidel: false,
                    };
                    solve_equation(m, &s.boundary, s.cells, &s.options, eq)
                }
            }
            .map_err(stage_err(stage))?;
            self.solution = Some(solved);
        }
        Ok(self.solution.as_ref().unwrap())
    }

    fn run_stage(&mut self, stage: Stage, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        match stage {
            Stage::Certificate => self.certificate(files),
            Stage::Conditions => self.conditions(files),
            Stage::ApproxVerify => self.approx_verify(files),
            Stage::Solve => self.solve(files),
            Stage::Probes => self.probes(files),
            Stage::Comparison => self.comparison(files),
        }
    }

    fn certificate(&mut self, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        let stage = Stage::Certificate;
        let err = stage_err(stage);
        let cert = self.ensure_cert(stage)?.clone();
        let model = self.model.clone();
        let eq =
            check_equivalences(cert.phi.as_ref(), Some(&model), Some(&model), &cert.options.sample).map_err(&err)?;
        let grid = SampleGrid::with_lattice(LogGrid::new(1e-3, 1e3, 31), 3);
        let mut conditions = Vec::new();
        for c in [
            Condition::A0,
            Condition::AInc { gamma: cert.p1 },
            Condition::ADec { gamma: cert.q1 },
        ] {
            conditions.push(check_condition(cert.phi.as_ref(), c, &grid).map_err(&err)?);
        }
        let x = [0.5, 0.5];
        let rows = cert
            .options
            .sample
            .radii
            .values()
            .into_iter()
            .map(|t| row![t, cert.phi.eval(x, t), cert.phi.deriv(x, t)]);
        self.csv(files, "growth.csv", &["t", "phi", "phi_prime"], rows)?;
        Ok(json!({
            "certificate": to_value(&cert),
            "equivalences": to_value(&eq),
            "phi_conditions": to_value(&conditions),
        }))
    }

    fn conditions(&mut self, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        let c = &self.cfg.conditions;
        let g = a_minus_one(self.model.clone());
        let chain: ChainReport =
            check_chain(&g, c.k, c.epsilon, &c.sample, &c.fit).map_err(stage_err(Stage::Conditions))?;
        let mut rows = Vec::new();
        for rep in [&chain.va1, &chain.wva1, &chain.a1] {
            for p in &rep.omega_fit {
                rows.push(row![
                    p.r,
                    p.omega,
                    rep.lbar,
                    rep.condition,
                    p.omega_tight,
                    p.ceiling,
                    p.violations
                ]);
            }
        }
        self.csv(
            files,
            "moduli.csv",
            &[
                "r",
                "omega",
                "Lbar",
                "condition",
                "omega_tight",
                "ceiling",
                "violations",
            ],
            rows,
        )?;
        let sqrt_log = chain.wva1.fit_reference(sqrt_log_shape);
        Ok(json!({
            "chain": to_value(&chain),
            "wva1_sqrt_log_fit": to_value(&sqrt_log),
        }))
    }

    fn approx_verify(&mut self, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        let stage = Stage::ApproxVerify;
        let err = stage_err(stage);
        let cert = self.ensure_cert(stage)?.clone();
        let a = &self.cfg.approx;
        let params = ApproxParams {
            x0: a.x0,
            t1: a.t1,
            t2: a.t2,
        };
        let abar = build_abar(self.field(), &cert, &params).map_err(&err)?;
        let abar_cert = verify_growth_of_approx(&abar, &abar.phibar, &a.sample).map_err(&err)?;
        let fbar = build_fbar(self.lagrangian(), &cert, &params, &a.calibration).map_err(&err)?;
        let fbar_cert = verify_growth_of_approx(&GradientField(&fbar), &fbar.phibar, &a.sample).map_err(&err)?;
        let phibar = build_phibar(&cert, a.x0, a.t1, a.t2).map_err(&err)?;
        let prop = check_prop_phibar(cert.phi.as_ref(), &phibar, None, &a.phibar).map_err(&err)?;

        // annulus identity, evaluated away from x0
        let away = [1.0 - a.x0[0], 1.0 - a.x0[1]];
        let dirs = Directions::new(2, self.cfg.seed).take(8);
        let mut annulus = 0.0f64;
        for t in LogGrid::new(2.0 * a.t1, 0.5 * a.t2, 9).values() {
            for d in &dirs {
                let xi: Vec<f64> = d.iter().map(|c| c * t).collect();
                let dev = (abar.eval(away, &xi) - VectorField::eval(&self.model, a.x0, &xi)).norm();
                annulus = annulus.max(dev);
            }
        }
        let rows = LogGrid::new(1e-3, 1e3, 61)
            .values()
            .into_iter()
            .map(|t| row![t, cert.phi.eval(a.x0, t), phibar.eval(a.x0, t)]);
        self.csv(files, "phibar.csv", &["t", "phi_x0", "phibar"], rows)?;
        Ok(json!({
            "abar": { "bundle": to_value(&abar.bundle), "certificate": to_value(&abar_cert) },
            "fbar": { "bundle": to_value(&fbar.bundle), "certificate": to_value(&fbar_cert) },
            "phibar": to_value(&prop),
            "annulus_max_deviation": annulus,
        }))
    }

    fn solve(&mut self, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        let (u, report) = self.ensure_solution(Stage::Solve)?.clone();
        let g = &self.cfg.solve.boundary;
        let residual = match self.cfg.solve.frozen_at {
            Some(x0) => weak_residual(
                &Frozen {
                    inner: self.model.clone(),
                    x0,
                },
                &u,
            ),
            None => weak_residual(&self.model, &u),
        };
        let mut deviation = 0.0f64;
        let mut nodes = Vec::with_capacity((u.n + 1) * (u.n + 1));
        for j in 0..=u.n {
            for i in 0..=u.n {
                let x = u.node(i, j);
                deviation = deviation.max((u.at(i, j) - g.eval(x)).abs());
                nodes.push(row![i, j, x[0], x[1], u.at(i, j)]);
            }
        }
        self.csv(files, "solution.csv", &["i", "j", "x", "y", "u"], nodes)?;
        let mut cells = Vec::with_capacity(u.n * u.n);
        for j in 0..u.n {
            for i in 0..u.n {
                let c = u.cell_center(i, j);
                let d = u.cell_gradient(i, j);
                cells.push(row![i, j, c[0], c[1], d[0], d[1]]);
            }
        }
        self.csv(files, "gradient.csv", &["i", "j", "x", "y", "du_x", "du_y"], cells)?;
        Ok(json!({
            "report": to_value(&report),
            "cells": u.n,
            "weak_residual": residual,
            "max_deviation_from_boundary_data": deviation,
        }))
    }

    fn probes(&mut self, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        let stage = Stage::Probes;
        let err = stage_err(stage);
        let cert = self.ensure_cert(stage)?.clone();
        let u = self.ensure_solution(stage)?.0.clone();
        let p = &self.cfg.probes;
        let holder = holder_exponent(&u, p.center, &p.radii).map_err(&err)?;
        let excess = excess_decay(&u, p.center, &p.radii).map_err(&err)?;
        let integrability =
            higher_integrability(cert.phi.as_ref(), &u, p.center, p.r, &p.sigma_grid, p.cap).map_err(&err)?;
        self.csv(
            files,
            "oscillation.csv",
            &["rho", "osc"],
            holder.table.iter().map(|(r, o)| row![r, o]),
        )?;
        self.csv(
            files,
            "excess.csv",
            &["rho", "excess"],
            excess.table.iter().map(|(r, o)| row![r, o]),
        )?;
        Ok(json!({
            "holder": to_value(&holder),
            "excess_decay": to_value(&excess),
            "higher_integrability": to_value(&integrability),
        }))
    }

    fn comparison(&mut self, files: &mut Vec<PathBuf>) -> Result<Value, CliError> {
        let stage = Stage::Comparison;
        let err = stage_err(stage);
        let cert = self.ensure_cert(stage)?.clone();
        let c = &self.cfg.comparison;
        let op = match c.operator {
            OperatorKind::Energy => Operator::Energy(self.lagrangian()),
            OperatorKind::Field => Operator::Field(self.field()),
        };
        let mut records = Vec::new();
        for b in &c.balls {
            let rec = comparison_experiment(&op, cert.phi.as_ref(), &cert, &c.omega, b.center, b.r, &c.options)
                .map_err(&err)?;
            records.push(rec);
        }
        let rows = records.iter().map(|r| {
            row![
                r.r,
                r.l1_gap,
                r.predicted_rhs,
                r.normalized_gap,
                r.sigma,
                r.eps,
                r.t1,
                r.t2,
                r.x0[0],
                r.x0[1]
            ]
        });
        self.csv(
            files,
            "comparison.csv",
            &[
                "r",
                "l1_gap",
                "predicted_rhs",
                "normalized_gap",
                "sigma",
                "eps",
                "t1",
                "t2",
                "x",
                "y",
            ],
            rows,
        )?;
        let mut by_r: Vec<&_> = records.iter().collect();
        by_r.sort_by(|a, b| b.r.total_cmp(&a.r));
        let decreasing = by_r.windows(2).all(|w| w[1].normalized_gap < w[0].normalized_gap);
        Ok(json!({
            "records": to_value(&records),
            "comparison_constant": fit_comparison_constant(&records),
            "log_log_slope": comparison_slope(&records),
            "decreasing_in_r": decreasing,
        }))
    }
}
