use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use serde_json::json;

use bilinear_sweep::ensemble::{self, EnsembleSolution};
use bilinear_sweep::oracle::{self, ShootingOptions, ShootingResult};
use bilinear_sweep::solver::{self, contraction_ratios, Outcome, Solution};
use bilinear_sweep::validation::{self, Fixtures, Scope};
use bilinear_sweep::{Error, VectorPath};

use crate::config::{Overrides, ProblemConfig};
use crate::output::{numbered, vec_fields, Bundle, Csv};
use crate::RunArgs;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NOT_CONVERGED: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub err: anyhow::Error,
}

type CmdResult = std::result::Result<u8, Failure>;

fn config_failure(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_CONFIG, err }
}

fn solver_failure(e: Error) -> Failure {
    let code = match e.root() {
        Error::DimensionMismatch { .. }
        | Error::InvalidInput { .. }
        | Error::BadSpec(_)
        | Error::DimensionTooLarge { .. }
        | Error::BadInitialTrajectory { .. } => EXIT_CONFIG,
        Error::NotConverged { .. } | Error::Diverged { .. } => EXIT_NOT_CONVERGED,
        _ => EXIT_NUMERICAL,
    };
    Failure { code, err: e.into() }
}

fn write_failure(err: anyhow::Error) -> Failure {
    Failure { code: EXIT_CONFIG, err }
}

fn load(path: &Path, overrides: Option<&Overrides>) -> std::result::Result<ProblemConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(config_failure)?;
    let mut cfg = ProblemConfig::from_json(&text).map_err(config_failure)?;
    if let Some(o) = overrides {
        cfg.apply(o);
    }
    Ok(cfg)
}

fn overrides(a: &RunArgs) -> Overrides {
    Overrides {
        n_t: a.n_t,
        tol: a.tol,
        max_iter: a.max_iter,
        alpha: a.alpha,
        mode: a.mode.clone(),
        eps: a.eps,
        rcond: a.rcond,
        n_beta: a.n_beta,
    }
}

fn path_csv(prefix: &str, path: &VectorPath) -> Csv {
    let dim = path.first().len();
    let mut header = vec!["t".to_string()];
    header.extend(numbered(prefix, dim));
    let mut csv = Csv::new(&header);
    let g = *path.grid();
    for (i, v) in path.iter().enumerate() {
        csv.row(std::iter::once(Some(g.t(i))).chain(vec_fields(v)));
    }
    csv
}

const CONVERGENCE_HEADER: [&str; 7] = ["iter", "terminal_error", "dx", "dK", "dSnu", "cost", "cond_P0"];

fn outcome_name(o: Outcome) -> &'static str {
    match o {
        Outcome::Converged => "converged",
        Outcome::MaxIterations => "max-iterations",
        Outcome::Diverged => "diverged",
    }
}

fn single_bundle(out: &Path, cfg: &ProblemConfig, run: &crate::config::SingleRun, sol: &Solution) -> anyhow::Result<Bundle> {
    let mut b = Bundle::new(out);
    b.add_csv("control.csv", path_csv("u", &sol.u_path));
    b.add_csv("trajectory.csv", path_csv("x", &sol.x_path));
    b.add_csv("costate.csv", path_csv("lambda", &sol.reported_costate()));
    let mut conv = Csv::with_header(&CONVERGENCE_HEADER);
    for r in &sol.records {
        conv.indexed_row(r.k, [
            Some(r.terminal_error),
            Some(r.dx),
            Some(r.dk),
            Some(r.dsnu),
            Some(r.cost),
            Some(r.cond_p0),
        ]);
    }
    b.add_csv("convergence.csv", conv);
    let contraction = contraction_ratios(&sol.records);
    let summary = json!({
        "kind": "single",
        "converged": sol.converged(),
        "outcome": outcome_name(sol.outcome),
        "iterations": sol.iterations,
        "cost": sol.cost(),
        "terminal_error": sol.terminal_error(),
        "mode": run.config.rule.name(),
        "gauge": sol.gauge,
        "hamiltonian_spread": sol.last_record().hamiltonian_spread,
        // V(tf, x_f) = x_fᵀν under K(tf) = 0, S(tf) = I, P(tf) = 0.
        "value_at_tf": run.bc.xf.dot(&sol.nu),
        "empirically_contractive": contraction.empirically_contractive,
        "two_step_contractive": contraction.two_step_contractive,
        "config": cfg.resolved_single(run),
    });
    b.add_json("summary.json", &summary)?;
    Ok(b)
}

pub fn solve(a: &RunArgs) -> CmdResult {
    let cfg = load(&a.config, Some(&overrides(a)))?;
    let run = cfg.single().map_err(config_failure)?;
    let start = Instant::now();
    let sol = solver::solve_report(&run.sys, &run.cost, &run.bc, &run.config).map_err(solver_failure)?;
    single_bundle(&a.out, &cfg, &run, &sol)
        .and_then(|b| b.write())
        .map_err(write_failure)?;
    println!(
        "{} after {} iterations: terminal error {:.3e}, cost {:.9}",
        outcome_name(sol.outcome),
        sol.iterations,
        sol.terminal_error(),
        sol.cost()
    );
    eprintln!("elapsed {:.2?}", start.elapsed());
    match sol.outcome {
        Outcome::Converged => Ok(EXIT_OK),
        Outcome::MaxIterations => Err(solver_failure(Error::NotConverged {
            iterations: sol.iterations,
            terminal_error: sol.terminal_error(),
        })),
        Outcome::Diverged => Err(solver_failure(Error::Diverged {
            iteration: sol.iterations,
            patience: run.config.divergence_patience,
        })),
    }
}

fn beta_header(d: usize) -> Vec<String> {
    if d == 1 {
        vec!["beta".to_string()]
    } else {
        numbered("beta", d)
    }
}

fn ensemble_bundle(
    out: &Path,
    cfg: &ProblemConfig,
    run: &crate::config::EnsembleRun,
    sol: &EnsembleSolution,
) -> anyhow::Result<(Bundle, f64, f64)> {
    let prob = &run.problem;
    let n = prob.family.n();
    let m = prob.family.m();
    let d = prob.grid.dim();
    let mut b = Bundle::new(out);

    let mut header = vec!["t".to_string()];
    header.extend(numbered("u", m));
    let mut ctrl = Csv::new(&header);
    let width = sol.control.width();
    for (c, u) in sol.control.values.iter().enumerate() {
        ctrl.row(std::iter::once(Some(c as f64 * width)).chain(vec_fields(u)));
    }
    b.add_csv("control.csv", ctrl);

    let mut header = beta_header(d);
    header.push("t".into());
    header.extend(numbered("x", n));
    let mut traj = Csv::new(&header);
    for (beta, x) in prob.grid.samples.iter().zip(&sol.trajectories) {
        for (i, v) in x.iter().enumerate() {
            traj.row(vec_fields(beta).chain(std::iter::once(Some(sol.state_grid.t(i)))).chain(vec_fields(v)));
        }
    }
    b.add_csv("trajectory.csv", traj);

    let mut conv = Csv::with_header(&CONVERGENCE_HEADER);
    let mut iters = Csv::with_header(&["iter", "weighted_l2", "sup", "residual", "n_eps", "energy", "sigma1"]);
    for r in &sol.records {
        let err = if run.config.norm == ensemble::TerminalNorm::Sup { r.sup } else { r.weighted_l2 };
        conv.indexed_row(r.k, [Some(err), Some(r.dx), None, None, Some(0.5 * r.energy), None]);
        iters.indexed_row(r.k, [
            Some(r.weighted_l2),
            Some(r.sup),
            Some(r.residual),
            Some(r.n_eps as f64),
            Some(r.energy),
            r.sigma_head.first().copied(),
        ]);
    }
    b.add_csv("convergence.csv", conv);
    b.add_csv("ensemble.csv", iters);

    let mut spectrum = Csv::with_header(&["index", "sigma", "coef", "partial_residual"]);
    for (k, s) in sol.svd.sigma.iter().enumerate() {
        spectrum.indexed_row(k + 1, [Some(*s), Some(sol.svd.coef[k]), Some(sol.svd.partial_residual[k])]);
    }
    b.add_csv("spectrum.csv", spectrum);

    let eval = prob.grid.eval_samples.clone().unwrap_or_else(|| prob.grid.samples.clone());
    let finals = ensemble::evaluate_on(prob, &sol.control, &sol.state_grid, &eval)?;
    let xf = &prob.bc_at(0).xf;
    let mut header = beta_header(d);
    header.push("terminal_error".into());
    header.extend(numbered("x", n));
    let mut table = Csv::new(&header);
    let mut worst = 0.0f64;
    let mut min_x1 = f64::INFINITY;
    for (beta, x) in eval.iter().zip(&finals) {
        let e = (x - xf).norm();
        worst = worst.max(e);
        min_x1 = min_x1.min(x[0]);
        table.row(vec_fields(beta).chain(std::iter::once(Some(e))).chain(vec_fields(x)));
    }
    b.add_csv("eval_errors.csv", table);

    let energy = sol.control.energy(prob.cost.r());
    let summary = json!({
        "kind": "ensemble",
        "converged": sol.converged,
        "iterations": sol.iterations,
        "cost": 0.5 * energy,
        "energy": energy,
        "terminal_error": sol.terminal_error(run.config.norm),
        "weighted_l2": sol.errors.weighted_l2,
        "sup": sol.errors.sup,
        "mode": run.config.mode.name(),
        "norm": run.config.norm.name(),
        "n_beta": prob.grid.len(),
        "n_eps": sol.svd.n_eps,
        "eval_samples": eval.len(),
        "eval_max_terminal_error": worst,
        "eval_min_x1": min_x1,
        "config": cfg.resolved_ensemble(run),
    });
    b.add_json("summary.json", &summary)?;
    Ok((b, worst, min_x1))
}

pub fn ensemble(a: &RunArgs) -> CmdResult {
    let cfg = load(&a.config, Some(&overrides(a)))?;
    let run = cfg.ensemble().map_err(config_failure)?;
    let start = Instant::now();
    let sol = ensemble::ensemble_solve(&run.problem, &run.config).map_err(solver_failure)?;
    let (bundle, worst, min_x1) = ensemble_bundle(&a.out, &cfg, &run, &sol).map_err(|e| match e.downcast::<Error>() {
        Ok(se) => solver_failure(se),
        Err(e) => write_failure(e),
    })?;
    bundle.write().map_err(write_failure)?;
    println!(
        "{} after {} iterations: {} terminal error {:.3e}; evaluation grid max error {:.3e}, min x1 {:.6}",
        if sol.converged { "converged" } else { "max-iterations" },
        sol.iterations,
        run.config.norm.name(),
        sol.terminal_error(run.config.norm),
        worst,
        min_x1
    );
    eprintln!("elapsed {:.2?}", start.elapsed());
    if sol.converged {
        Ok(EXIT_OK)
    } else {
        Err(solver_failure(Error::NotConverged {
            iterations: sol.iterations,
            terminal_error: sol.terminal_error(run.config.norm),
        }))
    }
}

/// Largest difference between a stored `t, v1..` table and a path.
fn table_diff(path: &Path, reference: &VectorPath) -> anyhow::Result<f64> {
    let (_, rows) = crate::output::read_table(path)?;
    let mut worst = 0.0f64;
    for row in rows {
        let v = reference.interpolate(row[0])?;
        if row.len() != v.len() + 1 {
            return Err(anyhow!("{}: column count differs from the oracle", path.display()));
        }
        for (k, x) in v.iter().enumerate() {
            worst = worst.max((row[k + 1] - x).abs());
        }
    }
    Ok(worst)
}

fn oracle_diff(out: &Path, shot: &ShootingResult) -> anyhow::Result<Option<serde_json::Value>> {
    let control = out.join("control.csv");
    let traj = out.join("trajectory.csv");
    let summary = out.join("summary.json");
    if !(control.exists() && traj.exists() && summary.exists()) {
        return Ok(None);
    }
    let prior: serde_json::Value = serde_json::from_str(&fs::read_to_string(&summary)?)?;
    if prior.get("kind").and_then(|k| k.as_str()) != Some("single") {
        return Ok(None);
    }
    let du = table_diff(&control, &shot.u_path)?;
    let dx = table_diff(&traj, &shot.x_path)?;
    let dj = prior.get("cost").and_then(|c| c.as_f64()).map(|c| (c - shot.cost).abs());
    Ok(Some(json!({
        "control_sup_diff": du,
        "state_sup_diff": dx,
        "cost_abs_diff": dj,
    })))
}

pub fn oracle(config: &Path, out: &Path, n_t: Option<usize>) -> CmdResult {
    let cfg = load(config, None)?;
    let run = cfg.single().map_err(config_failure)?;
    let opts = ShootingOptions {
        n_t: n_t.unwrap_or(2 * run.config.n_t),
        ..Default::default()
    };
    let n = run.sys.n();
    let shot = oracle::shooting_multistart(&run.sys, &run.cost, &run.bc, &oracle::default_guesses(n), &opts).map_err(solver_failure)?;
    let diff = oracle_diff(out, &shot).map_err(config_failure)?;
    let mut b = Bundle::new(out);
    b.add_csv("oracle_control.csv", path_csv("u", &shot.u_path));
    b.add_csv("oracle_trajectory.csv", path_csv("x", &shot.x_path));
    b.add_csv("oracle_costate.csv", path_csv("lambda", &shot.lambda_path));
    let summary = json!({
        "kind": "oracle",
        "terminal_defect": shot.terminal_defect,
        "newton_iterations": shot.newton_iters,
        "cost": shot.cost,
        "lambda0": shot.lambda0.iter().cloned().collect::<Vec<f64>>(),
        "n_t": opts.n_t,
        "config": cfg.resolved_single(&run),
    });
    b.add_json("oracle_summary.json", &summary).map_err(write_failure)?;
    if let Some(d) = &diff {
        b.add_json("oracle_diff.json", d).map_err(write_failure)?;
    }
    b.write().map_err(write_failure)?;
    println!(
        "shooting: defect {:.3e} after {} Newton steps, cost {:.9}",
        shot.terminal_defect, shot.newton_iters, shot.cost
    );
    if let Some(d) = diff {
        println!("diff against previous solve: {d}");
    }
    Ok(EXIT_OK)
}

pub fn validate(scope: &str, seed: Option<u64>) -> CmdResult {
    let scopes: Vec<Scope> = if scope == "all" {
        Scope::ALL.to_vec()
    } else {
        vec![Scope::parse(scope).ok_or_else(|| config_failure(anyhow!("unknown scope '{scope}'")))?]
    };
    let start = Instant::now();
    let results = validation::run(&scopes, seed.unwrap_or(validation::DEFAULT_SEED), &Fixtures::new());
    print!("{}", validation::format_table(&results));
    eprintln!("elapsed {:.2?}", start.elapsed());
    if results.iter().all(|r| r.passed) {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_VALIDATION)
    }
}
