//! Acceptance criteria. Prints one PASS/FAIL line per criterion, then fails
//! only if something outside the known-red list is failing. Runs without the
//! libtest harness so the lines appear in plain `cargo test` output.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use bilinear_sweep::ensemble::{self, TerminalNorm};
use bilinear_sweep::model::matrix;
use bilinear_sweep::ode::{rk4_integrate, Direction, Path};
use bilinear_sweep::oracle::{self, ShootingOptions};
use bilinear_sweep::solver::{self, SolverConfig};
use bilinear_sweep::sweep::{self, FrozenLinearSystem};
use bilinear_sweep::validation::{self, sup_path_diff, CheckResult, DEFAULT_SEED};
use bilinear_sweep::{problems, Result, TimeGrid};
use nalgebra::{DMatrix, DVector};

/// Criteria expected to be red, with the checks allowed to fail inside them.
/// The HJB residual of the costate-extremal iteration does not vanish on the
/// bilinear built-ins; see the project notes.
const KNOWN_RED: &[(usize, &[&str])] = &[(5, &["population: HJB residual", "Bloch: HJB residual"])];

struct Outcome {
    passed: bool,
    detail: String,
    /// Names of failing sub-checks, where the criterion has any.
    failing: Vec<String>,
}

impl Outcome {
    fn from(checks: &[(&str, bool, String)]) -> Self {
        let failing: Vec<String> = checks.iter().filter(|c| !c.1).map(|c| c.0.to_string()).collect();
        Self {
            passed: failing.is_empty(),
            detail: checks.iter().map(|c| format!("{} {}", c.0, c.2)).collect::<Vec<_>>().join("; "),
            failing,
        }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self {
            passed: false,
            detail: format!("error: {e}"),
            failing: vec!["error".into()],
        }
    }
}

fn le(name: &'static str, v: f64, bound: f64) -> (&'static str, bool, String) {
    (name, v <= bound, format!("{v:.3e} <= {bound:.0e}"))
}

fn count(name: &'static str, v: usize, bound: usize) -> (&'static str, bool, String) {
    (name, v <= bound, format!("{v} <= {bound}"))
}

fn ge(name: &'static str, v: f64, bound: f64) -> (&'static str, bool, String) {
    (name, v >= bound, format!("{v:.6} >= {bound}"))
}

fn secs(name: &'static str, d: Duration, bound: f64) -> (&'static str, bool, String) {
    (name, d.as_secs_f64() < bound, format!("{:.2}s < {bound}s", d.as_secs_f64()))
}

fn population() -> Result<Outcome> {
    let p = problems::population();
    let cfg = SolverConfig {
        n_t: 2000,
        tol_terminal: 1e-6,
        max_iter: 50,
        ..Default::default()
    };
    let start = Instant::now();
    let sol = solver::solve(&p.sys, &p.cost, &p.bc, &cfg)?;
    let elapsed = start.elapsed();
    let shot = oracle::shooting_multistart(&p.sys, &p.cost, &p.bc, &oracle::default_guesses(1), &ShootingOptions::default())?;
    Ok(Outcome::from(&[
        le("terminal", sol.terminal_error(), 1e-6),
        count("iterations", sol.iterations, 50),
        le("|u - u_shoot|", sup_path_diff(&sol.u_path, &shot.u_path)?, 1e-3),
        le("|J - J_shoot|", (sol.cost() - shot.cost).abs(), 1e-3),
        secs("time", elapsed, 5.0),
    ]))
}

fn bloch_single() -> Result<Outcome> {
    let p = problems::bloch(0.5, 1.0);
    let cfg = SolverConfig {
        tol_terminal: 1e-5,
        max_iter: 40,
        ..problems::bloch_solver_config()
    };
    let start = Instant::now();
    let sol = solver::solve(&p.sys, &p.cost, &p.bc, &cfg)?;
    let elapsed = start.elapsed();
    // Independent re-propagation on a 4x finer grid.
    let fine = TimeGrid::new(p.cost.tf(), 4 * cfg.n_t)?;
    let u_fine = Path::from_fn(fine, |_, t| sol.u_path.interpolate(t).expect("t within the horizon"));
    let x = solver::propagate(&p.sys, &u_fine, &p.bc.x0)?;
    let drift = x.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    Ok(Outcome::from(&[
        count("iterations", sol.iterations, 40),
        le("re-propagated endpoint", (x.last() - &p.bc.xf).norm(), 1e-4),
        le("norm drift", drift, 1e-6),
        secs("time", elapsed, 10.0),
    ]))
}

fn bloch_ensemble() -> Result<Outcome> {
    let prob = problems::bloch_ensemble(-1.0, 1.0, 21, 10.0)?;
    let cfg = problems::bloch_ensemble_config();
    let start = Instant::now();
    let sol = ensemble::ensemble_solve(&prob, &cfg)?;
    let elapsed = start.elapsed();
    let eval = prob.grid.eval_samples.clone().expect("built-in has an evaluation grid");
    let ends = ensemble::evaluate_on(&prob, &sol.control, &sol.state_grid, &eval)?;
    let min_x1 = ends.iter().map(|x| x[0]).fold(f64::INFINITY, f64::min);
    Ok(Outcome::from(&[
        le("weighted-l2", sol.terminal_error(TerminalNorm::WeightedL2), 1e-2),
        count("iterations", sol.iterations, 300),
        ge("min x1 on 141 samples", min_x1, 0.95),
        secs("time", elapsed, 600.0),
    ]))
}

fn linear_degeneration() -> Result<Outcome> {
    let p = problems::harmonic_oscillator_default();
    let sol = solver::solve(&p.sys, &p.cost, &p.bc, &SolverConfig::default())?;
    let b = Path::constant(*sol.u_path.grid(), p.sys.b().clone());
    let g = oracle::gramian_min_energy(&sol.frozen.a_path, &b, p.cost.r(), &p.bc)?;
    Ok(Outcome::from(&[
        count("iterations", sol.iterations, 2),
        le("|u - u_gramian|", sup_path_diff(&sol.u_path, &g.u_path)?, 1e-6),
    ]))
}

fn identity_suite() -> Outcome {
    let start = Instant::now();
    let results: Vec<CheckResult> = validation::run_all(DEFAULT_SEED);
    let elapsed = start.elapsed();
    let mut failing: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| r.name.clone()).collect();
    let in_time = elapsed.as_secs_f64() < 120.0;
    if !in_time {
        failing.push("time".into());
    }
    Outcome {
        passed: failing.is_empty(),
        detail: format!(
            "{} checks, {} failed [{}]; time {:.2}s < 120s",
            results.len(),
            failing.len(),
            failing.join(", "),
            elapsed.as_secs_f64()
        ),
        failing,
    }
}

fn rk4_halving_ratio(rhs: impl Fn(f64, &DVector<f64>) -> DVector<f64> + Copy, y0: &DVector<f64>, tf: f64, exact: &DVector<f64>) -> Result<f64> {
    let err = |n_t: usize| -> Result<f64> {
        let g = TimeGrid::new(tf, n_t)?;
        let p = rk4_integrate(|s, y: &DVector<f64>| rhs(s * g.dt(), y), y0.clone(), &g, Direction::Forward)?;
        Ok((p.last() - exact).norm())
    };
    Ok(err(16)? / err(32)?)
}

fn numerical_order() -> Result<Outcome> {
    let r1 = rk4_halving_ratio(
        |t, y| y * t.cos(),
        &DVector::from_element(1, 1.0),
        2.0,
        &DVector::from_element(1, 2f64.sin().exp()),
    )?;
    let r2 = rk4_halving_ratio(
        |_, y| DVector::from_vec(vec![-y[1], y[0]]),
        &DVector::from_vec(vec![1.0, 0.0]),
        3.0,
        &DVector::from_vec(vec![3f64.cos(), 3f64.sin()]),
    )?;
    let ratio_ok = (8.0..=32.0).contains(&r1) && (8.0..=32.0).contains(&r2);

    // K̇ = −1 + K², K(tf) = 0 gives K(0) = tanh(tf).
    let mut tanh_err = 0.0f64;
    for tf in [0.5, 1.0, 2.0, 4.0] {
        let g = TimeGrid::new(tf, 1000)?;
        let c = |v: f64| Path::constant(g, matrix(1, 1, &[v]));
        let k = sweep::riccati_backward(&FrozenLinearSystem::new(c(0.0), c(1.0), c(1.0))?)?;
        tanh_err = tanh_err.max((k.first()[(0, 0)] - tf.tanh()).abs());
    }

    // Q = 0 oscillator: P(0) = −Φ(tf,0) W Φ(tf,0)ᵀ.
    let osc = problems::harmonic_oscillator_default();
    let g = TimeGrid::new(osc.cost.tf(), 2000)?;
    let a = Path::constant(g, osc.sys.a().clone());
    let b = osc.sys.b().clone();
    let frozen = FrozenLinearSystem::new(a.clone(), Path::constant(g, &b * b.transpose()), Path::constant(g, DMatrix::zeros(2, 2)))?;
    let s_path = sweep::s_backward(&frozen, &sweep::trivial_riccati(&frozen))?;
    let p0 = sweep::p_backward(&frozen, &s_path)?.first().clone();
    let w = oracle::gramian_min_energy(&a, &Path::constant(g, b), osc.cost.r(), &osc.bc)?.w;
    let phi = (osc.sys.a() * osc.cost.tf()).exp();
    let p_err = (p0 + &phi * w * phi.transpose()).amax();

    Ok(Outcome::from(&[
        ("RK4 halving ratios", ratio_ok, format!("{r1:.2}, {r2:.2} in [8, 32]")),
        le("|K(0) - tanh(tf)|", tanh_err, 1e-6),
        le("|P(0) + Phi W Phi^T|", p_err, 1e-6),
    ]))
}

fn main() -> ExitCode {
    let wrap = |r: Result<Outcome>| r.unwrap_or_else(Outcome::error);
    let criteria: Vec<(usize, &str, Outcome)> = vec![
        (1, "population transfer vs shooting", wrap(population())),
        (2, "single Bloch pi/2 pulse", wrap(bloch_single())),
        (3, "Bloch ensemble over omega in [-1, 1]", wrap(bloch_ensemble())),
        (4, "linear degeneration vs Gramian", wrap(linear_degeneration())),
        (5, "identity suite (validate)", identity_suite()),
        (6, "numerical order checks", wrap(numerical_order())),
    ];

    let mut unexpected = Vec::new();
    for (id, title, o) in &criteria {
        println!("{}  criterion {id}: {title} | {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        let allowed: &[&str] = KNOWN_RED.iter().find(|k| k.0 == *id).map(|k| k.1).unwrap_or(&[]);
        for f in &o.failing {
            if !allowed.contains(&f.as_str()) {
                unexpected.push(format!("criterion {id}: {f}"));
            }
        }
    }
    let passed = criteria.iter().filter(|c| c.2.passed).count();
    println!("{passed}/{} criteria pass", criteria.len());
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
