//! Single-system iteration: freeze along the previous iterate, sweep, extract
//! the control, re-propagate the true dynamics, repeat.

pub mod diagnostics;
pub mod freeze;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    straight_line, trapezoid, BilinearSystem, BoundaryConditions, ControlSignal, CostateTrajectory,
    QuadraticCost, TimeGrid, Trajectory,
};
use crate::ode::{rk4_integrate, Direction, MatrixPath, Path};
use crate::sweep::{self, FrozenLinearSystem, SweepSolution};

pub use diagnostics::{contraction_ratios, hjb_residual, ContractionRatio, ContractionReport};
pub use freeze::{build_frozen, gauge_project, FreezeRule};

/// Endpoint tolerance for user-supplied initial trajectories.
pub const INIT_ENDPOINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    StraightLine,
    /// One sweep on the linear part `(A, B)`; straight line if that pair is
    /// uncontrollable.
    LqrLinearPart,
    /// Constant-speed arc on the sphere (norm-preserving plants).
    GreatCircle,
    User {
        x: Trajectory,
        lambda: Option<CostateTrajectory>,
    },
}

impl InitStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            InitStrategy::StraightLine => "straight-line",
            InitStrategy::LqrLinearPart => "lqr-linear-part",
            InitStrategy::GreatCircle => "great-circle",
            InitStrategy::User { .. } => "user-supplied",
        }
    }
}

/// Whether to remove the `λ·x` gauge freedom of norm-preserving plants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GaugeMode {
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub n_t: usize,
    pub tol_terminal: f64,
    pub tol_iterate: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub init: InitStrategy,
    pub divergence_patience: usize,
    pub rule: FreezeRule,
    pub gauge: GaugeMode,
    /// Weight of the new iterate when forming the next freezing point;
    /// 1 is the plain fixed-point iteration.
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_t: 2000,
            tol_terminal: 1e-5,
            tol_iterate: 1e-7,
            max_iter: 500,
            alpha: 0.0,
            init: InitStrategy::StraightLine,
            divergence_patience: 3,
            rule: FreezeRule::Extremal,
            gauge: GaugeMode::Auto,
            relaxation: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what, reason: &str| Err(Error::InvalidInput { what, reason: reason.into() });
        if !(self.tol_terminal > 0.0) {
            return bad("tol_terminal", "must be positive");
        }
        if !(self.tol_iterate > 0.0) {
            return bad("tol_iterate", "must be positive");
        }
        if self.max_iter < 1 {
            return bad("max_iter", "must be at least 1");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha", "must be finite and >= 0");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation", "must lie in (0, 1]");
        }
        if self.n_t < 2 {
            return bad("n_t", "need at least 2 intervals");
        }
        Ok(())
    }

    fn gauge_for(&self, sys: &BilinearSystem) -> bool {
        match self.gauge {
            GaugeMode::On => true,
            GaugeMode::Off => false,
            GaugeMode::Auto => self.rule == FreezeRule::Extremal && sys.is_norm_preserving(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    /// ‖x(tf) − x_f‖₂ when the true bilinear dynamics are driven by this
    /// iterate's control.
    pub terminal_error: f64,
    /// ‖x(tf) − x_f‖₂ of the frozen closed-loop pass.
    pub sweep_defect: f64,
    pub dx: f64,
    pub dk: f64,
    pub dsnu: f64,
    pub cost: f64,
    pub hamiltonian_spread: f64,
    pub cond_p0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x_path: Trajectory,
    pub u_path: ControlSignal,
    pub lambda_path: CostateTrajectory,
    pub k_path: MatrixPath,
    pub s_path: MatrixPath,
    pub p_path: MatrixPath,
    pub nu: DVector<f64>,
    /// True dynamics re-propagated under `u_path`.
    pub x_true: Trajectory,
    /// The frozen system of the final iteration.
    pub frozen: FrozenLinearSystem,
    pub records: Vec<IterationRecord>,
    pub outcome: Outcome,
    pub iterations: usize,
    pub gauge: bool,
}

impl Solution {
    pub fn converged(&self) -> bool {
        self.outcome == Outcome::Converged
    }

    pub fn last_record(&self) -> &IterationRecord {
        self.records.last().expect("at least one iteration")
    }

    pub fn cost(&self) -> f64 {
        self.last_record().cost
    }

    pub fn terminal_error(&self) -> f64 {
        self.last_record().terminal_error
    }

    /// Costate with the gauge component removed when the run used it.
    pub fn reported_costate(&self) -> CostateTrajectory {
        if self.gauge {
            self.lambda_path.map(|i, l| gauge_project(&self.x_path[i], l))
        } else {
            self.lambda_path.clone()
        }
    }
}

/// Iterate carried between steps.
#[derive(Debug, Clone)]
pub struct IterState {
    pub x_path: Trajectory,
    pub lambda_path: CostateTrajectory,
    pub k_path: MatrixPath,
    pub s_nu: Trajectory,
}

impl IterState {
    pub fn new(x_path: Trajectory, lambda_path: CostateTrajectory) -> Self {
        let n = x_path.first().len();
        let grid = *x_path.grid();
        Self {
            k_path: Path::constant(grid, DMatrix::zeros(n, n)),
            s_nu: lambda_path.clone(),
            x_path,
            lambda_path,
        }
    }
}

/// Result of one iteration.
#[derive(Debug, Clone)]
pub struct Step {
    pub state: IterState,
    pub sweep: SweepSolution,
    pub frozen: FrozenLinearSystem,
    pub u_path: ControlSignal,
    pub x_true: Trajectory,
    pub record: IterationRecord,
}

fn check_problem(sys: &BilinearSystem, cost: &QuadraticCost, bc: &BoundaryConditions) -> Result<()> {
    cost.check_against(sys)?;
    bc.check_against(sys)
}

/// Initial `(x⁰, λ⁰)`.
pub fn initial_guess(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    grid: TimeGrid,
    strategy: &InitStrategy,
) -> Result<(Trajectory, CostateTrajectory)> {
    check_problem(sys, cost, bc)?;
    let zero = Path::constant(grid, DVector::zeros(sys.n()));
    match strategy {
        InitStrategy::StraightLine => Ok((straight_line(grid, &bc.x0, &bc.xf), zero)),
        InitStrategy::GreatCircle => Ok((crate::problems::great_circle(grid, &bc.x0, &bc.xf), zero)),
        InitStrategy::LqrLinearPart => {
            let frozen = FrozenLinearSystem::time_invariant(grid, sys.a(), sys.b(), cost.r_inv(), cost.q())?;
            match sweep::sweep(&frozen, bc, cost.q_is_zero()) {
                Ok(sol) => Ok((sol.x_path, sol.lambda_path)),
                Err(Error::NotControllable { .. }) | Err(Error::FiniteEscape { .. }) => {
                    Ok((straight_line(grid, &bc.x0, &bc.xf), zero))
                }
                Err(e) => Err(e),
            }
        }
        InitStrategy::User { x, lambda } => {
            if x.len() != grid.len() {
                return Err(Error::dims("user initial trajectory", grid.len(), x.len()));
            }
            sys.check_state(x.first(), "user initial trajectory")?;
            let defect = (x.first() - &bc.x0).amax().max((x.last() - &bc.xf).amax());
            if !(defect <= INIT_ENDPOINT_TOL) {
                return Err(Error::BadInitialTrajectory { defect });
            }
            let x = Path::new(grid, x.values().to_vec())?;
            let lambda = match lambda {
                Some(l) if l.len() == grid.len() => Path::new(grid, l.values().to_vec())?,
                Some(l) => return Err(Error::dims("user initial costate", grid.len(), l.len())),
                None => zero,
            };
            Ok((x, lambda))
        }
    }
}

/// `u(t) = −R⁻¹(B + N(x(t)))ᵀλ(t)` per node.
pub fn extract_control(
    sys: &BilinearSystem,
    r_inv: &DMatrix<f64>,
    x_path: &Trajectory,
    lambda_path: &CostateTrajectory,
) -> Result<ControlSignal> {
    if x_path.len() != lambda_path.len() {
        return Err(Error::dims("control extraction paths", x_path.len(), lambda_path.len()));
    }
    if r_inv.nrows() != sys.m() {
        return Err(Error::dims("R inverse", sys.m(), r_inv.nrows()));
    }
    Ok(x_path.map(|i, x| -(r_inv * sys.input_matrix(x).transpose() * &lambda_path[i])))
}

/// Trapezoidal `½∫(xᵀQx + uᵀRu)dt`.
pub fn cost_value(cost: &QuadraticCost, x_path: &Trajectory, u_path: &ControlSignal) -> Result<f64> {
    if x_path.len() != u_path.len() {
        return Err(Error::dims("cost paths", x_path.len(), u_path.len()));
    }
    let vals: Vec<f64> = (0..x_path.len())
        .map(|i| cost.running(&x_path[i], &u_path[i]))
        .collect();
    Ok(trapezoid(&vals, x_path.grid().dt()))
}

/// True bilinear dynamics driven by a node-sampled control, linearly
/// interpolated between nodes.
pub fn propagate(sys: &BilinearSystem, u_path: &ControlSignal, x0: &DVector<f64>) -> Result<Trajectory> {
    sys.check_state(x0, "x0")?;
    sys.check_control(u_path.first())?;
    rk4_integrate(
        |s, x: &DVector<f64>| sys.rhs_unchecked(x, &u_path.at_position(s)),
        x0.clone(),
        u_path.grid(),
        Direction::Forward,
    )
}

fn diff_state(a: &Trajectory, b: &Trajectory) -> Trajectory {
    a.map(|i, v| v - &b[i])
}

/// One pass: freeze, sweep, extract, re-propagate, measure.
#[allow(clippy::too_many_arguments)]
pub fn iterate_once(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    state: &IterState,
    k: usize,
    rule: FreezeRule,
    gauge: bool,
    alpha: f64,
) -> Result<Step> {
    let run = || -> Result<Step> {
        let frozen = build_frozen(sys, cost, &state.x_path, &state.lambda_path, rule, gauge)?;
        let sol = sweep::sweep(&frozen, bc, frozen.q_is_zero())?;
        let u_path = extract_control(sys, cost.r_inv(), &sol.x_path, &sol.lambda_path)?;
        let x_true = propagate(sys, &u_path, &bc.x0)?;
        let terminal_error = (x_true.last() - &bc.xf).norm();
        let s_nu = sol.s_nu();
        let dx = diagnostics::alpha_norm_state(&diff_state(&sol.x_path, &state.x_path), alpha);
        let dk_path = sol.k_path.map(|i, m| m - &state.k_path[i]);
        let dk = diagnostics::alpha_norm_matrix(&dk_path, alpha);
        let dsnu_path = if gauge {
            s_nu.map(|i, v| {
                gauge_project(&sol.x_path[i], v) - gauge_project(&state.x_path[i], &state.s_nu[i])
            })
        } else {
            diff_state(&s_nu, &state.s_nu)
        };
        let dsnu = diagnostics::alpha_norm_backward(&dsnu_path, alpha);
        let cost_j = cost_value(cost, &sol.x_path, &u_path)?;
        let h = diagnostics::hamiltonian_path(sys, cost, &sol.x_path, &u_path, &sol.lambda_path)?;
        let record = IterationRecord {
            k,
            terminal_error,
            sweep_defect: sol.terminal_defect,
            dx,
            dk,
            dsnu,
            cost: cost_j,
            hamiltonian_spread: diagnostics::spread(&h),
            cond_p0: sol.cond_p0,
        };
        let next = IterState {
            x_path: sol.x_path.clone(),
            lambda_path: sol.lambda_path.clone(),
            k_path: sol.k_path.clone(),
            s_nu,
        };
        Ok(Step {
            state: next,
            sweep: sol,
            frozen,
            u_path,
            x_true,
            record,
        })
    };
    run().map_err(|e| e.at_iteration(k))
}

fn blend(new: &Trajectory, old: &Trajectory, theta: f64) -> Trajectory {
    new.map(|i, v| v * theta + &old[i] * (1.0 - theta))
}

/// Runs the iteration and reports the outcome without treating
/// non-convergence as an error. Numerical failures are returned as errors.
pub fn solve_report(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    check_problem(sys, cost, bc)?;
    let grid = TimeGrid::new(cost.tf(), config.n_t)?;
    let (x0, l0) = initial_guess(sys, cost, bc, grid, &config.init)?;
    let gauge = config.gauge_for(sys);
    let mut state = IterState::new(x0, l0);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut growth = 0usize;
    let mut outcome = Outcome::MaxIterations;
    let mut last: Option<Step> = None;
    for k in 1..=config.max_iter {
        let step = iterate_once(sys, cost, bc, &state, k, config.rule, gauge, config.alpha)?;
        let rec = step.record;
        if let Some(prev) = records.last() {
            if rec.dx > prev.dx {
                growth += 1;
            } else {
                growth = 0;
            }
        }
        records.push(rec);
        let diff = rec.dx.max(rec.dk).max(rec.dsnu);
        state = if config.relaxation < 1.0 {
            let theta = config.relaxation;
            IterState {
                x_path: blend(&step.state.x_path, &state.x_path, theta),
                lambda_path: blend(&step.state.lambda_path, &state.lambda_path, theta),
                k_path: step.state.k_path.clone(),
                s_nu: step.state.s_nu.clone(),
            }
        } else {
            step.state.clone()
        };
        last = Some(step);
        if rec.terminal_error <= config.tol_terminal && diff <= config.tol_iterate {
            outcome = Outcome::Converged;
            break;
        }
        if growth >= config.divergence_patience && config.divergence_patience > 0 {
            outcome = Outcome::Diverged;
            break;
        }
    }
    let step = last.expect("max_iter >= 1");
    let iterations = records.len();
    Ok(Solution {
        x_path: step.sweep.x_path,
        u_path: step.u_path,
        lambda_path: step.sweep.lambda_path,
        k_path: step.sweep.k_path,
        s_path: step.sweep.s_path,
        p_path: step.sweep.p_path,
        nu: step.sweep.nu,
        x_true: step.x_true,
        frozen: step.frozen,
        records,
        outcome,
        iterations,
        gauge,
    })
}

/// Runs the iteration; non-convergence and divergence are errors.
pub fn solve(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    config: &SolverConfig,
) -> Result<Solution> {
    let sol = solve_report(sys, cost, bc, config)?;
    match sol.outcome {
        Outcome::Converged => Ok(sol),
        Outcome::MaxIterations => Err(Error::NotConverged {
            iterations: sol.iterations,
            terminal_error: sol.terminal_error(),
        }),
        Outcome::Diverged => Err(Error::Diverged {
            iteration: sol.iterations,
            patience: config.divergence_patience,
        }),
    }
}
