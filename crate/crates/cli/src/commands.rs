use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::{json, Value};
use vnlearn::pbt::{
    closed_form_fidelity, dpbt_entanglement_fidelity_qubit, integer_grid, ppbt_avg_fidelity_exact,
    ppbt_success_probability, scheme_slope, SchemeId,
};
use vnlearn::pgls::{
    check_effect, check_lemmas_exact, exact_float_gap, pgls_avg_fidelity, pgls_avg_fidelity_exact, rational_string,
    retrieval_residual, PglsSimulator,
};
use vnlearn::quantum::{
    fidelity, haar_measurement, mean_and_stderr, seeded_rng, validate_povm, vn_effects, VonNeumannMeasurement,
};
use vnlearn::sdp::SolverOptions;
use vnlearn::tester::{pgls_tester, solve_tester, TesterKind, DEFAULT_MAX_USES};
use vnlearn::twirl::{dephasing_twirl_closed_form, objective_operator, twirl_u_ubar};

use crate::output::{emit, fixed4, RunConfig, Table};
use crate::{Common, Outcome};

const TWIRL_SPECNORM_TOL: f64 = 0.02;
const TWIRL_RESIDUAL_TOL: f64 = 1e-8;

fn config(c: &Common, command: &str) -> RunConfig {
    RunConfig {
        command: command.to_string(),
        n: None,
        n_range: None,
        samples: c.samples,
        seed: c.seed,
        eps: c.eps,
        max_iter: c.max_iter,
        out: c.out.clone(),
        format: c.format,
        exact: c.exact,
        options: Default::default(),
    }
}

fn solver_options(c: &Common) -> SolverOptions {
    SolverOptions { eps: c.eps, max_iter: c.max_iter, ..Default::default() }
}

#[derive(Serialize)]
struct Cell {
    value: f64,
    rounded: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<BTreeMap<String, f64>>,
}

fn exact_value(scheme: SchemeId, n: usize) -> anyhow::Result<Option<String>> {
    Ok(match scheme {
        SchemeId::Pgls => Some(rational_string(&pgls_avg_fidelity_exact(n)?)),
        SchemeId::Ppbt => Some(rational_string(&ppbt_avg_fidelity_exact(n)?)),
        _ => None,
    })
}

pub fn table(c: &Common, max_n: usize, schemes: &[SchemeId], allow_large: bool) -> anyhow::Result<Outcome> {
    if max_n == 0 {
        bail!(vnlearn::Error::InvalidArgument("--max-n must be at least 1".into()));
    }
    let mut cfg = config(c, "table").with("schemes", schemes).with("allow_large", allow_large);
    cfg.n_range = Some((1, max_n));
    let opts = solver_options(c);
    let mut outcome = Outcome::Ok;
    let mut rows: Vec<(SchemeId, Vec<Option<Cell>>)> = Vec::new();
    for &scheme in schemes {
        let mut cells = Vec::with_capacity(max_n);
        for n in 1..=max_n {
            let cell = if scheme.is_closed_form() {
                let value = closed_form_fidelity(scheme, n)?;
                let exact = if c.exact { exact_value(scheme, n)? } else { None };
                Some(Cell { value, rounded: fixed4(value), exact, solver: None })
            } else if n <= DEFAULT_MAX_USES || allow_large {
                let kind = if scheme == SchemeId::ParallelSdp { TesterKind::Parallel } else { TesterKind::Adaptive };
                let sol = solve_tester(kind, n, &opts, allow_large)?;
                if !sol.solver.converged {
                    outcome = Outcome::NotConverged;
                }
                let v = sol.report.value;
                Some(Cell { value: v, rounded: fixed4(v), exact: None, solver: Some(sol.report.diagnostics) })
            } else {
                None
            };
            cells.push(cell);
        }
        rows.push((scheme, cells));
    }
    let body = json!({
        "columns": (1..=max_n).collect::<Vec<_>>(),
        "rows": rows.iter().map(|(s, cells)| json!({ "scheme": s, "cells": cells })).collect::<Vec<_>>(),
    });
    emit(&cfg, body, || {
        let mut header = vec!["scheme".to_string()];
        header.extend((1..=max_n).map(|n| format!("N={n}")));
        let mut notes = Vec::new();
        for (s, cells) in &rows {
            for (k, cell) in cells.iter().enumerate() {
                if let Some(Cell { exact: Some(e), .. }) = cell {
                    notes.push(format!("exact {s} N={}: {e}", k + 1));
                }
                if let Some(Cell { solver: Some(d), .. }) = cell {
                    notes.push(format!(
                        "solver {s} N={}: primal={:.2e} dual={:.2e} gap={:.2e} converged={}",
                        k + 1,
                        d["primal_residual"],
                        d["dual_residual"],
                        d["gap"],
                        d["converged"] == 1.0
                    ));
                }
            }
        }
        let rows = rows
            .iter()
            .map(|(s, cells)| {
                let mut row = vec![s.to_string()];
                row.extend(cells.iter().map(|c| c.as_ref().map_or("null".to_string(), |c| c.rounded.clone())));
                row
            })
            .collect();
        Table { header, rows, notes }
    })?;
    Ok(outcome)
}

#[derive(Serialize)]
struct Check {
    name: String,
    residual: Option<f64>,
    tol: Option<f64>,
    pass: bool,
}

impl Check {
    fn exact(name: String, pass: bool) -> Self {
        Check { name, residual: None, tol: None, pass }
    }

    fn within(name: String, residual: f64, tol: f64) -> Self {
        Check { name, residual: Some(residual), tol: Some(tol), pass: residual <= tol }
    }
}

fn pgls_checks(c: &Common, max_n: usize, perturb: i64, checks: &mut Vec<Check>) -> anyhow::Result<()> {
    for n in 1..=max_n {
        let r = check_lemmas_exact(n, perturb);
        checks.push(Check::exact(format!("pgls.square n={n}"), r.square));
        checks.push(Check::exact(format!("pgls.symmetric n={n}"), r.symmetric));
        checks.push(Check::exact(format!("pgls.generating-function n={n}"), r.generating_function));
    }
    for n0 in 1..=max_n.min(8) {
        let e = check_effect(n0, 1e-9)?;
        checks.push(Check::within(format!("pgls.orthonormal n0={n0}"), e.gram_residual, 1e-10));
        let worst = e.povm.completeness_error.max(-e.povm.min_eigenvalues.iter().cloned().fold(0.0, f64::min));
        checks.push(Check { name: format!("pgls.effect-povm n0={n0}"), residual: Some(worst), tol: Some(1e-9), pass: e.povm.pass });
    }
    let mut rng = seeded_rng(c.seed);
    let ms: Vec<VonNeumannMeasurement> = (0..100).map(|_| haar_measurement(2, &mut rng)).collect();
    for n0 in 1..=max_n.min(6) {
        checks.push(Check::within(format!("pgls.retrieval n0={n0}"), retrieval_residual(&ms, n0)?, 1e-10));
    }
    if c.exact {
        for n in 1..=max_n {
            checks.push(Check::within(format!("pgls.float-vs-exact n={n}"), exact_float_gap(n)?, 1e-12));
        }
    }
    Ok(())
}

fn emit_checks(cfg: RunConfig, checks: Vec<Check>) -> anyhow::Result<Outcome> {
    let pass = checks.iter().all(|k| k.pass);
    let body = json!({ "pass": pass, "checks": &checks });
    emit(&cfg, body, || Table {
        header: vec!["check".into(), "residual".into(), "tol".into(), "pass".into()],
        rows: checks
            .iter()
            .map(|k| {
                let f = |x: Option<f64>| x.map_or("exact".to_string(), |v| format!("{v:.3e}"));
                vec![k.name.clone(), f(k.residual), f(k.tol), k.pass.to_string()]
            })
            .collect(),
        notes: vec![format!("all pass: {pass}")],
    })?;
    Ok(if pass { Outcome::Ok } else { Outcome::CheckFailed })
}

pub fn verify(c: &Common, max_n: usize, inject_fault: bool) -> anyhow::Result<Outcome> {
    let mut cfg = config(c, "verify").with("inject_fault", inject_fault);
    cfg.n_range = Some((1, max_n));
    let mut checks = Vec::new();
    pgls_checks(c, max_n, i64::from(inject_fault), &mut checks)?;

    for d in [2, 3] {
        let t = twirl_u_ubar(&vnlearn::quantum::dephasing_choi(d).matrix, d)?;
        checks.push(Check::within(format!("twirl.dephasing d={d}"), (&t - &dephasing_twirl_closed_form(d)).max_abs(), 1e-10));
    }
    for n in 1..=2 {
        let obj = objective_operator(n)?;
        checks.push(Check::within(format!("twirl.relabeling N={n}"), obj.relabeling_residual()?, 1e-10));
        let tester = pgls_tester(n)?;
        checks.push(Check::within(format!("tester.pgls-feasible N={n}"), tester.feasibility()?.max_violation(), 1e-8));
        let gap = (tester.score(&obj)? - pgls_avg_fidelity(n)?).abs();
        checks.push(Check::within(format!("tester.pgls-score N={n}"), gap, 1e-10));
    }
    let mut rng = seeded_rng(c.seed.wrapping_add(1));
    for d in [2, 3] {
        let report = validate_povm(&vn_effects(&haar_measurement(d, &mut rng)), 1e-10);
        checks.push(Check::within(format!("quantum.vn-povm d={d}"), report.completeness_error, 1e-10));
    }
    emit_checks(cfg, checks)
}

pub fn pgls_verify(c: &Common, max_n: usize) -> anyhow::Result<Outcome> {
    let mut cfg = config(c, "pgls verify");
    cfg.n_range = Some((1, max_n));
    let mut checks = Vec::new();
    pgls_checks(c, max_n, 0, &mut checks)?;
    emit_checks(cfg, checks)
}

pub fn asymptotics(c: &Common, schemes: &[SchemeId], from: usize, to: usize) -> anyhow::Result<Outcome> {
    let mut cfg = config(c, "asymptotics").with("schemes", schemes);
    cfg.n_range = Some((from, to));
    let grid = integer_grid(from, to)?;
    let mut fits = BTreeMap::new();
    let mut points = Vec::new();
    for &s in schemes {
        if !s.is_closed_form() {
            bail!(vnlearn::Error::InvalidArgument(format!("`{s}` has no closed form to fit")));
        }
        let fit = scheme_slope(s, from, to)?;
        fits.insert(s.to_string(), json!({ "slope": fit.slope, "intercept": fit.intercept }));
        for &n in &grid {
            points.push((s, n, 1.0 - closed_form_fidelity(s, n)?));
        }
    }
    let body = json!({
        "fits": fits,
        "points": points.iter().map(|(s, n, e)| json!({ "scheme": s, "n": n, "one_minus_f": e })).collect::<Vec<_>>(),
    });
    emit(&cfg, body, || Table {
        header: vec!["scheme".into(), "N".into(), "one_minus_f".into()],
        rows: points.iter().map(|(s, n, e)| vec![s.to_string(), n.to_string(), format!("{e:.12e}")]).collect(),
        notes: fits.iter().map(|(s, f)| format!("slope {s}: {:.6}", f["slope"].as_f64().unwrap_or(f64::NAN))).collect(),
    })?;
    Ok(Outcome::Ok)
}

pub fn twirl_check(c: &Common, n: usize) -> anyhow::Result<Outcome> {
    let samples = c.samples.unwrap_or(100_000);
    let mut cfg = config(c, "twirl-check");
    cfg.n = Some(n);
    cfg.samples = Some(samples);
    let mut rng = seeded_rng(c.seed);
    let r = vnlearn::twirl::twirl_check(n, samples, &mut rng)?;
    let pass = r.exact_vs_mc_specnorm <= TWIRL_SPECNORM_TOL
        && r.invariance_residual <= TWIRL_RESIDUAL_TOL
        && r.idempotence_residual <= TWIRL_RESIDUAL_TOL;
    let body = json!({
        "exact_vs_mc_specnorm": r.exact_vs_mc_specnorm,
        "invariance_residual": r.invariance_residual,
        "idempotence_residual": r.idempotence_residual,
        "pass": pass,
    });
    emit(&cfg, body, || Table {
        header: vec!["n".into(), "samples".into(), "exact_vs_mc_specnorm".into(), "invariance_residual".into(), "idempotence_residual".into(), "pass".into()],
        rows: vec![vec![
            n.to_string(),
            samples.to_string(),
            format!("{:.6e}", r.exact_vs_mc_specnorm),
            format!("{:.3e}", r.invariance_residual),
            format!("{:.3e}", r.idempotence_residual),
            pass.to_string(),
        ]],
        notes: vec![],
    })?;
    Ok(if pass { Outcome::Ok } else { Outcome::CheckFailed })
}

pub fn sdp(c: &Common, kind: TesterKind, n: usize, dump_vars: Option<PathBuf>, allow_large: bool) -> anyhow::Result<Outcome> {
    let mut cfg = config(c, "sdp").with("kind", kind).with("allow_large", allow_large).with("dump_vars", &dump_vars);
    cfg.n = Some(n);
    if n > DEFAULT_MAX_USES && allow_large {
        eprintln!("warning: N = {n} builds blocks of dimension {} and may take a long time", 1usize << (n + 1));
    }
    let sol = solve_tester(kind, n, &solver_options(c), allow_large)?;
    let feas = sol.vars.feasibility()?;
    if let Some(path) = &dump_vars {
        std::fs::write(path, serde_json::to_string(&sol.vars)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let s = &sol.solver;
    let body = json!({
        "report": sol.report,
        "feasibility": feas,
    });
    emit(&cfg, body, || Table {
        header: ["kind", "n", "value", "primal_residual", "dual_residual", "gap", "iterations", "converged"]
            .map(String::from)
            .to_vec(),
        rows: vec![vec![
            kind.to_string(),
            n.to_string(),
            format!("{:.10}", s.value),
            format!("{:.3e}", s.primal_residual),
            format!("{:.3e}", s.dual_residual),
            format!("{:.3e}", s.gap),
            s.iterations.to_string(),
            s.converged.to_string(),
        ]],
        notes: vec![format!("feasibility violation: {:.3e}", feas.max_violation())],
    })?;
    Ok(if s.converged { Outcome::Ok } else { Outcome::NotConverged })
}

pub fn pgls_avg(c: &Common, n: usize) -> anyhow::Result<Outcome> {
    let mut cfg = config(c, "pgls avg");
    cfg.n = Some(n);
    let value = pgls_avg_fidelity(n)?;
    let exact = if c.exact { Some(rational_string(&pgls_avg_fidelity_exact(n)?)) } else { None };
    let body = json!({ "n": n, "value": value, "exact": exact });
    emit(&cfg, body, || Table {
        header: vec!["n".into(), "value".into(), "exact".into()],
        rows: vec![vec![n.to_string(), format!("{value:.12}"), exact.clone().unwrap_or_default()]],
        notes: vec![],
    })?;
    Ok(Outcome::Ok)
}

pub fn pgls_simulate(c: &Common, n: usize) -> anyhow::Result<Outcome> {
    let samples = c.samples.unwrap_or(10_000);
    let mut cfg = config(c, "pgls simulate");
    cfg.n = Some(n);
    cfg.samples = Some(samples);
    if samples < 2 {
        bail!(vnlearn::Error::InvalidArgument("--samples must be at least 2".into()));
    }
    let mut rng = seeded_rng(c.seed);
    let mut sim = PglsSimulator::new();
    let mut values = Vec::with_capacity(samples);
    let mut majority = vec![0usize; n + 1];
    for _ in 0..samples {
        let m = haar_measurement(2, &mut rng);
        let (rec, povm) = sim.run(&m, n, &mut rng)?;
        majority[rec.n_major] += 1;
        values.push(fidelity(&vn_effects(&m), &povm)?);
    }
    let (mean, stderr) = mean_and_stderr(&values);
    let closed = pgls_avg_fidelity(n)?;
    let z = if stderr > 0.0 { (mean - closed) / stderr } else { 0.0 };
    let body = json!({
        "n": n, "samples": samples, "mean": mean, "stderr": stderr, "closed_form": closed, "z": z,
        "majority_counts": majority,
    });
    emit(&cfg, body, || Table {
        header: ["n", "samples", "mean", "stderr", "closed_form", "z"].map(String::from).to_vec(),
        rows: vec![vec![
            n.to_string(),
            samples.to_string(),
            format!("{mean:.8}"),
            format!("{stderr:.3e}"),
            format!("{closed:.8}"),
            format!("{z:.3}"),
        ]],
        notes: vec![],
    })?;
    Ok(Outcome::Ok)
}

pub fn pbt(c: &Common, scheme: SchemeId, n: usize) -> anyhow::Result<Outcome> {
    let mut cfg = config(c, &format!("pbt {scheme}"));
    cfg.n = Some(n);
    let value = closed_form_fidelity(scheme, n)?;
    let mut extra: BTreeMap<&str, Value> = BTreeMap::new();
    match scheme {
        SchemeId::Dpbt => {
            extra.insert("entanglement_fidelity", json!(dpbt_entanglement_fidelity_qubit(n)?));
        }
        SchemeId::Ppbt => {
            extra.insert("success_probability", json!(ppbt_success_probability(n)?));
            if c.exact {
                extra.insert("exact", json!(rational_string(&ppbt_avg_fidelity_exact(n)?)));
            }
        }
        _ => unreachable!("only port-based schemes are dispatched here"),
    }
    let body = json!({ "scheme": scheme, "n": n, "value": value, "details": &extra });
    emit(&cfg, body, || {
        let mut header = vec!["scheme".to_string(), "n".into(), "value".into()];
        let mut row = vec![scheme.to_string(), n.to_string(), format!("{value:.12}")];
        for (k, v) in &extra {
            header.push(k.to_string());
            row.push(v.as_str().map_or_else(|| v.to_string(), str::to_string));
        }
        Table { header, rows: vec![row], notes: vec![] }
    })?;
    Ok(Outcome::Ok)
}
