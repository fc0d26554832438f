//! Minimum-energy control of bilinear ensembles through the singular system
//! of the frozen input-to-state operator.

pub mod grid;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BilinearSystem, BoundaryConditions, QuadraticCost, TimeGrid, Trajectory};
use crate::ode::{rk4_forward_stepwise, MatrixPath, Path};
use crate::solver::freeze::{self, FreezeRule};

pub use grid::{sample_parameters, Axis, ParameterGrid};

/// Relative residual above which the target is declared outside the
/// numerical range of the operator.
pub const UNREACHABLE_RATIO: f64 = 0.5;

/// `A(β) = A₀ + Σₗ βₗAₗ`, and likewise for `B` and every `Nⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemFamily {
    pub base: BilinearSystem,
    pub terms: Vec<BilinearSystem>,
}

impl SystemFamily {
    pub fn new(base: BilinearSystem, terms: Vec<BilinearSystem>) -> Result<Self> {
        for t in &terms {
            if t.n() != base.n() || t.m() != base.m() {
                return Err(Error::dims(
                    "affine family term",
                    format!("n={}, m={}", base.n(), base.m()),
                    format!("n={}, m={}", t.n(), t.m()),
                ));
            }
        }
        Ok(Self { base, terms })
    }

    pub fn constant(sys: BilinearSystem) -> Self {
        Self {
            base: sys,
            terms: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn m(&self) -> usize {
        self.base.m()
    }

    pub fn at(&self, beta: &DVector<f64>) -> Result<BilinearSystem> {
        if beta.len() != self.terms.len() && !(self.terms.is_empty()) {
            return Err(Error::dims("parameter", self.terms.len(), beta.len()));
        }
        let mut a = self.base.a().clone();
        let mut b = self.base.b().clone();
        let mut n_mats = self.base.n_mats().to_vec();
        for (bl, t) in beta.iter().zip(&self.terms) {
            a += t.a() * *bl;
            b += t.b() * *bl;
            for (nj, tj) in n_mats.iter_mut().zip(t.n_mats()) {
                *nj += tj * *bl;
            }
        }
        BilinearSystem::new(a, b, n_mats)
    }
}

#[derive(Debug, Clone)]
pub struct EnsembleProblem {
    pub family: SystemFamily,
    pub cost: QuadraticCost,
    /// One entry shared by all samples, or one per sample.
    pub bc: Vec<BoundaryConditions>,
    pub grid: ParameterGrid,
}

impl EnsembleProblem {
    pub fn new(
        family: SystemFamily,
        cost: QuadraticCost,
        bc: Vec<BoundaryConditions>,
        grid: ParameterGrid,
    ) -> Result<Self> {
        if !cost.q_is_zero() {
            return Err(Error::InvalidInput {
                what: "ensemble cost",
                reason: "state weight Q must be zero".into(),
            });
        }
        cost.check_against(&family.base)?;
        if grid.is_empty() {
            return Err(Error::BadSpec("empty parameter grid".into()));
        }
        if bc.len() != 1 && bc.len() != grid.len() {
            return Err(Error::dims("ensemble boundary conditions", grid.len(), bc.len()));
        }
        for c in &bc {
            c.check_against(&family.base)?;
        }
        for s in &grid.samples {
            family.at(s)?;
        }
        Ok(Self { family, cost, bc, grid })
    }

    pub fn bc_at(&self, idx: usize) -> &BoundaryConditions {
        if self.bc.len() == 1 {
            &self.bc[0]
        } else {
            &self.bc[idx]
        }
    }

    pub fn systems(&self) -> Result<Vec<BilinearSystem>> {
        self.grid.samples.iter().map(|b| self.family.at(b)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleMode {
    /// `Ã = A(β)`, `B̃ = B(β) + N(X(t,β))`.
    #[default]
    Picard,
    /// As picard, with the costate correction of `Ã` built from per-sample
    /// costates recovered from the minimum-norm solution.
    Costate,
}

impl EnsembleMode {
    pub fn name(&self) -> &'static str {
        match self {
            EnsembleMode::Picard => "picard",
            EnsembleMode::Costate => "costate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "picard" => Some(EnsembleMode::Picard),
            "costate" => Some(EnsembleMode::Costate),
            _ => None,
        }
    }
}

/// Norm over the parameter set used for the stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TerminalNorm {
    #[default]
    WeightedL2,
    Sup,
}

impl TerminalNorm {
    pub fn name(&self) -> &'static str {
        match self {
            TerminalNorm::WeightedL2 => "weighted-l2",
            TerminalNorm::Sup => "sup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnsembleInit {
    #[default]
    StraightLine,
    GreatCircle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_t_ctrl: usize,
    /// State-grid intervals per control knot.
    pub substeps: usize,
    pub tol_terminal: f64,
    pub max_iter: usize,
    pub eps: f64,
    pub rcond: f64,
    pub mode: EnsembleMode,
    pub norm: TerminalNorm,
    pub init: EnsembleInit,
    /// Update the iterate with the frozen linear trajectory instead of the
    /// true bilinear one.
    pub frozen_update: bool,
    /// Weight of the new trajectory in the next freezing point.
    pub relaxation: f64,
    /// Relative residual outside the numerical range that aborts the run.
    pub reach_threshold: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_t_ctrl: 256,
            substeps: 8,
            tol_terminal: 1e-5,
            max_iter: 500,
            eps: 1e-6,
            rcond: 1e-8,
            mode: EnsembleMode::Picard,
            norm: TerminalNorm::WeightedL2,
            init: EnsembleInit::StraightLine,
            frozen_update: false,
            relaxation: 1.0,
            reach_threshold: UNREACHABLE_RATIO,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what, reason: &str| Err(Error::InvalidInput { what, reason: reason.into() });
        if self.n_t_ctrl < 1 {
            return bad("n_t_ctrl", "need at least one control knot");
        }
        if self.substeps < 1 || self.n_t_ctrl * self.substeps < 2 {
            return bad("substeps", "state grid needs at least 2 intervals");
        }
        if !(self.tol_terminal > 0.0) {
            return bad("tol_terminal", "must be positive");
        }
        if self.max_iter < 1 {
            return bad("max_iter", "must be at least 1");
        }
        if !(self.eps >= 0.0) {
            return bad("eps", "must be >= 0");
        }
        if !(self.rcond > 0.0 && self.rcond < 1.0) {
            return bad("rcond", "must lie in (0, 1)");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation", "must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn state_grid(&self, tf: f64) -> Result<TimeGrid> {
        TimeGrid::new(tf, self.n_t_ctrl * self.substeps)
    }
}

/// Piecewise-constant control on `n_knots` equal intervals of `[0, tf]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotControl {
    pub tf: f64,
    pub values: Vec<DVector<f64>>,
}

impl KnotControl {
    pub fn zeros(tf: f64, n_knots: usize, m: usize) -> Self {
        Self {
            tf,
            values: vec![DVector::zeros(m); n_knots],
        }
    }

    pub fn n_knots(&self) -> usize {
        self.values.len()
    }

    pub fn width(&self) -> f64 {
        self.tf / self.values.len() as f64
    }

    /// `∫uᵀRu dt`.
    pub fn energy(&self, r: &DMatrix<f64>) -> f64 {
        self.values.iter().map(|u| u.dot(&(r * u))).sum::<f64>() * self.width()
    }

    /// Value on the state-grid interval `[t_i, t_{i+1}]` with `substeps`
    /// intervals per knot.
    fn on_interval(&self, i: usize, substeps: usize) -> &DVector<f64> {
        &self.values[(i / substeps).min(self.values.len() - 1)]
    }

    /// Sample on the state grid, taking the value of the knot that starts at
    /// each node (the last node repeats the final knot).
    pub fn to_nodes(&self, grid: &TimeGrid) -> Path<DVector<f64>> {
        let substeps = grid.n_t() / self.values.len();
        Path::from_fn(*grid, |i, _| self.on_interval(i.min(grid.n_t() - 1), substeps).clone())
    }
}

/// Frozen linear data of one sample.
#[derive(Debug, Clone)]
pub struct FrozenSample {
    pub a_path: MatrixPath,
    pub b_path: MatrixPath,
}

impl FrozenSample {
    fn a_is_constant(&self) -> bool {
        let a0 = self.a_path.first();
        self.a_path.iter().all(|a| a == a0)
    }
}

/// Frozen coefficients of one sample along its trajectory (and costate in
/// costate mode).
pub fn freeze_sample(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x_path: &Trajectory,
    lambda_path: Option<&Trajectory>,
    mode: EnsembleMode,
) -> FrozenSample {
    let b_path = x_path.map(|_, x| sys.input_matrix(x));
    let a_path = match (mode, lambda_path) {
        (EnsembleMode::Costate, Some(lp)) => {
            x_path.map(|i, x| freeze::freeze_node(sys, cost, x, &lp[i], FreezeRule::Symmetric, false).a)
        }
        _ => Path::constant(*x_path.grid(), sys.a().clone()),
    };
    FrozenSample { a_path, b_path }
}

/// `Φ(0, tᵢ)` per node of the state grid.
pub fn psi_path(frozen: &FrozenSample) -> Result<MatrixPath> {
    let grid = *frozen.a_path.grid();
    if frozen.a_is_constant() {
        let a = frozen.a_path.first();
        // exp(−A·t) on a uniform grid is the power of one step.
        let step = (a * -grid.dt()).exp();
        let mut out = Vec::with_capacity(grid.len());
        let mut cur = DMatrix::identity(a.nrows(), a.nrows());
        for i in 0..grid.len() {
            if i > 0 {
                cur = if i % 64 == 0 { (a * -grid.t(i)).exp() } else { &cur * &step };
            }
            out.push(cur.clone());
        }
        return Path::new(grid, out);
    }
    crate::ode::inverse_transition_path(&frozen.a_path)
}

/// Scaled operator and target.
#[derive(Debug, Clone)]
pub struct LOperator {
    /// `(n·n_β) × (m·n_knots)`.
    pub matrix: DMatrix<f64>,
    pub xi: DVector<f64>,
    pub sqrt_weights: Vec<f64>,
    pub knot_width: f64,
    pub r_inv_sqrt: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    /// `Φ(0, t)` per sample, kept for costate recovery.
    pub psi: Vec<MatrixPath>,
}

impl LOperator {
    /// Physical knot control from scaled coordinates: `u = R^{−½}v/√Δ`.
    pub fn unscale(&self, v: &DVector<f64>, tf: f64) -> KnotControl {
        let s = 1.0 / self.knot_width.sqrt();
        let values = (0..v.len() / self.m)
            .map(|c| &self.r_inv_sqrt * v.rows(c * self.m, self.m) * s)
            .collect();
        KnotControl { tf, values }
    }

    /// Scaled coordinates of a physical control: `v = √Δ R^{½}u`.
    pub fn scale(&self, u: &KnotControl) -> DVector<f64> {
        let r_sqrt = self.r_inv_sqrt.clone().try_inverse().expect("R^{-1/2} invertible");
        let s = self.knot_width.sqrt();
        let mut out = DVector::zeros(self.m * u.n_knots());
        for (c, uc) in u.values.iter().enumerate() {
            out.rows_mut(c * self.m, self.m).copy_from(&(&r_sqrt * uc * s));
        }
        out
    }
}

/// Assemble the scaled input-to-state operator. Each block integrates
/// `Φ(0,σ)B̃(σ)` over a control knot by the composite trapezoid rule on the
/// state substeps.
pub fn assemble_l(
    frozen: &[FrozenSample],
    prob: &EnsembleProblem,
    n_knots: usize,
) -> Result<LOperator> {
    let n = prob.family.n();
    let m = prob.family.m();
    let nb = frozen.len();
    let grid = *frozen[0].a_path.grid();
    if grid.n_t() % n_knots != 0 {
        return Err(Error::dims("state grid intervals per knot", "integer multiple", grid.n_t()));
    }
    let sub = grid.n_t() / n_knots;
    let dt = grid.dt();
    let width = grid.tf() / n_knots as f64;
    let r_inv_sqrt = prob.cost.r_inv_sqrt().clone();
    let col_scale = &r_inv_sqrt / width.sqrt();
    let sqrt_w: Vec<f64> = prob.grid.weights.iter().map(|w| w.sqrt()).collect();
    let blocks: Vec<Result<(DMatrix<f64>, DVector<f64>, MatrixPath)>> = frozen
        .par_iter()
        .enumerate()
        .map(|(b, fs)| {
            let psi = psi_path(fs)?;
            let mut rows = DMatrix::zeros(n, m * n_knots);
            let integrand: Vec<DMatrix<f64>> = (0..grid.len()).map(|i| &psi[i] * &fs.b_path[i]).collect();
            for c in 0..n_knots {
                let mut acc = DMatrix::zeros(n, m);
                for s in 0..=sub {
                    let i = c * sub + s;
                    let wt = if s == 0 || s == sub { 0.5 } else { 1.0 };
                    acc += &integrand[i] * (wt * dt);
                }
                let blk = acc * &col_scale * sqrt_w[b];
                rows.view_mut((0, c * m), (n, m)).copy_from(&blk);
            }
            let bc = prob.bc_at(b);
            let xi = (psi.last() * &bc.xf - &bc.x0) * sqrt_w[b];
            if !(linalg::all_finite_mat(&rows) && linalg::all_finite_vec(&xi)) {
                return Err(Error::NonFiniteState {
                    what: "input-to-state operator",
                    t: grid.tf(),
                });
            }
            Ok((rows, xi, psi))
        })
        .collect();
    let mut matrix = DMatrix::zeros(n * nb, m * n_knots);
    let mut xi = DVector::zeros(n * nb);
    let mut psis = Vec::with_capacity(nb);
    for (b, blk) in blocks.into_iter().enumerate() {
        let (rows, x, psi) = blk?;
        matrix.view_mut((b * n, 0), (n, m * n_knots)).copy_from(&rows);
        xi.rows_mut(b * n, n).copy_from(&x);
        psis.push(psi);
    }
    Ok(LOperator {
        matrix,
        xi,
        sqrt_weights: sqrt_w,
        knot_width: width,
        r_inv_sqrt,
        n,
        m,
        psi: psis,
    })
}

#[derive(Debug, Clone)]
pub struct SvdSystem {
    pub sigma: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v_t: DMatrix<f64>,
    /// `⟨ξ, uₙ⟩`.
    pub coef: Vec<f64>,
    /// `‖ξ − L·u_N‖₂` after keeping `N = index + 1` terms.
    pub partial_residual: Vec<f64>,
    pub xi_norm: f64,
    pub n_eps: usize,
    /// Number of terms allowed by the `rcond` cap.
    pub n_rank: usize,
}

impl SvdSystem {
    pub fn residual(&self) -> f64 {
        if self.n_eps == 0 {
            self.xi_norm
        } else {
            self.partial_residual[self.n_eps - 1]
        }
    }
}

/// Truncated minimum-norm solve in scaled coordinates.
pub fn svd_synthesize(l: &DMatrix<f64>, xi: &DVector<f64>, eps: f64, rcond: f64) -> Result<(SvdSystem, DVector<f64>)> {
    svd_synthesize_with(l, xi, eps, rcond, UNREACHABLE_RATIO)
}

/// As [`svd_synthesize`] with an explicit reachability threshold.
pub fn svd_synthesize_with(
    l: &DMatrix<f64>,
    xi: &DVector<f64>,
    eps: f64,
    rcond: f64,
    reach_threshold: f64,
) -> Result<(SvdSystem, DVector<f64>)> {
    if l.nrows() != xi.len() {
        return Err(Error::dims("operator rows", l.nrows(), xi.len()));
    }
    let svd = l.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    // nalgebra does not guarantee ordering; sort descending.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let coef: Vec<f64> = (0..sigma.len()).map(|k| u.column(k).dot(xi)).collect();
    let xi2 = xi.norm_squared();
    // Residual after k terms is the part of ξ outside range(U) plus the
    // remaining coefficients; summing the tail avoids the cancellation in
    // ‖ξ‖² − Σc².
    let outside = (xi - &u * DVector::from_column_slice(&coef)).norm_squared();
    let mut tail = vec![0.0; coef.len()];
    let mut acc = outside;
    for k in (0..coef.len()).rev() {
        tail[k] = acc.sqrt();
        acc += coef[k] * coef[k];
    }
    let partial_residual = tail;
    let s1 = sigma.first().copied().unwrap_or(0.0);
    let n_rank = sigma.iter().take_while(|s| s1 > 0.0 && **s > rcond * s1).count();
    let xi_norm = xi2.sqrt();
    let n_eps = if xi_norm <= eps {
        0
    } else {
        (0..n_rank)
            .find(|&k| partial_residual[k] <= eps)
            .map_or(n_rank, |k| k + 1)
    };
    let sys = SvdSystem {
        sigma,
        u,
        v_t,
        coef,
        partial_residual,
        xi_norm,
        n_eps,
        n_rank,
    };
    if xi_norm > 0.0 {
        let full = if n_rank == 0 { xi_norm } else { sys.partial_residual[n_rank - 1] };
        let ratio = full / xi_norm;
        if ratio > reach_threshold {
            return Err(Error::TargetNotReachable { relative_residual: ratio });
        }
    }
    let mut v = DVector::zeros(l.ncols());
    for k in 0..sys.n_eps {
        v += sys.v_t.row(k).transpose() * (sys.coef[k] / sys.sigma[k]);
    }
    Ok((sys, v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    /// `Σ_{n≤N} |⟨ξ,uₙ⟩|²/σₙ²` for `N = 1..=n_rank`.
    pub partial_energy: Vec<f64>,
    /// Relative residual of `ξ` outside the numerical range.
    pub relative_residual: f64,
    pub flagged: bool,
}

pub fn controllability_diagnostics(svd: &SvdSystem, threshold: f64) -> ControllabilityReport {
    let mut acc = 0.0;
    let partial_energy = (0..svd.n_rank)
        .map(|k| {
            acc += (svd.coef[k] / svd.sigma[k]).powi(2);
            acc
        })
        .collect();
    let relative_residual = if svd.xi_norm == 0.0 {
        0.0
    } else if svd.n_rank == 0 {
        1.0
    } else {
        svd.partial_residual[svd.n_rank - 1] / svd.xi_norm
    };
    ControllabilityReport {
        partial_energy,
        relative_residual,
        flagged: relative_residual > threshold,
    }
}

/// True bilinear dynamics of one sample under a piecewise-constant control.
/// Each knot is advanced exactly with the exponential of the augmented
/// generator `[[A + Σuᵢ Bᵢ, Bu], [0, 0]]`, so large intermediate controls do
/// not destabilize the integration and norm-preserving plants stay on the
/// sphere to rounding.
pub fn propagate_sample(
    sys: &BilinearSystem,
    u: &KnotControl,
    x0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Trajectory> {
    let n = sys.n();
    if grid.n_t() % u.n_knots() != 0 {
        return Err(Error::dims("state grid intervals per knot", "integer multiple", grid.n_t()));
    }
    let sub = grid.n_t() / u.n_knots();
    let dt = grid.dt();
    let mut out = Vec::with_capacity(grid.len());
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(x0);
    z[n] = 1.0;
    out.push(x0.clone());
    for uc in &u.values {
        let mut gen = DMatrix::zeros(n + 1, n + 1);
        gen.view_mut((0, 0), (n, n)).copy_from(&sys.generator(uc));
        gen.view_mut((0, n), (n, 1)).copy_from(&(sys.b() * uc));
        let step = (gen * dt).exp();
        for _ in 0..sub {
            z = &step * &z;
            out.push(z.rows(0, n).into_owned());
        }
    }
    if !linalg::all_finite_vec(&z) {
        return Err(Error::NonFiniteState {
            what: "ensemble state",
            t: grid.tf(),
        });
    }
    Path::new(*grid, out)
}

/// Frozen linear dynamics `ẋ = Ãx + B̃u` of one sample.
fn propagate_frozen(frozen: &FrozenSample, u: &KnotControl, x0: &DVector<f64>) -> Result<Trajectory> {
    let grid = *frozen.a_path.grid();
    let sub = grid.n_t() / u.n_knots();
    rk4_forward_stepwise(
        |i, s, x: &DVector<f64>| {
            frozen.a_path.at_position(s) * x + frozen.b_path.at_position(s) * u.on_interval(i, sub)
        },
        x0.clone(),
        &grid,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalErrors {
    pub per_sample: Vec<f64>,
    pub weighted_l2: f64,
    pub sup: f64,
}

impl TerminalErrors {
    pub fn get(&self, norm: TerminalNorm) -> f64 {
        match norm {
            TerminalNorm::WeightedL2 => self.weighted_l2,
            TerminalNorm::Sup => self.sup,
        }
    }
}

fn terminal_errors(
    trajectories: &[Trajectory],
    targets: impl Fn(usize) -> DVector<f64>,
    weights: &[f64],
) -> TerminalErrors {
    let per_sample: Vec<f64> = trajectories
        .iter()
        .enumerate()
        .map(|(b, x)| (x.last() - targets(b)).norm())
        .collect();
    let weighted_l2 = per_sample
        .iter()
        .zip(weights)
        .map(|(e, w)| w * e * e)
        .sum::<f64>()
        .sqrt();
    let sup = per_sample.iter().cloned().fold(0.0, f64::max);
    TerminalErrors {
        per_sample,
        weighted_l2,
        sup,
    }
}

/// Propagate every design sample under `u`.
pub fn propagate_ensemble(
    prob: &EnsembleProblem,
    u: &KnotControl,
    grid: &TimeGrid,
) -> Result<(Vec<Trajectory>, TerminalErrors)> {
    let systems = prob.systems()?;
    let trajs: Result<Vec<Trajectory>> = systems
        .par_iter()
        .enumerate()
        .map(|(b, sys)| propagate_sample(sys, u, &prob.bc_at(b).x0, grid))
        .collect();
    let trajs = trajs?;
    let errs = terminal_errors(&trajs, |b| prob.bc_at(b).xf.clone(), &prob.grid.weights);
    Ok((trajs, errs))
}

/// Terminal states on an arbitrary set of parameter samples (shared
/// boundary conditions).
pub fn evaluate_on(
    prob: &EnsembleProblem,
    u: &KnotControl,
    grid: &TimeGrid,
    samples: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let bc = prob.bc_at(0).clone();
    samples
        .par_iter()
        .map(|beta| {
            let sys = prob.family.at(beta)?;
            Ok(propagate_sample(&sys, u, &bc.x0, grid)?.last().clone())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRecord {
    pub k: usize,
    pub weighted_l2: f64,
    pub sup: f64,
    /// Residual `‖ξ − Lu‖` of the truncated solve.
    pub residual: f64,
    pub n_eps: usize,
    pub sigma_head: Vec<f64>,
    pub energy: f64,
    pub dx: f64,
}

#[derive(Debug, Clone)]
pub struct EnsembleSolution {
    pub control: KnotControl,
    pub trajectories: Vec<Trajectory>,
    pub errors: TerminalErrors,
    pub records: Vec<EnsembleRecord>,
    pub svd: SvdSystem,
    pub converged: bool,
    pub iterations: usize,
    pub state_grid: TimeGrid,
}

impl EnsembleSolution {
    pub fn terminal_error(&self, norm: TerminalNorm) -> f64 {
        self.errors.get(norm)
    }
}

fn initial_trajectories(prob: &EnsembleProblem, grid: TimeGrid, init: EnsembleInit) -> Vec<Trajectory> {
    (0..prob.grid.len())
        .map(|b| {
            let bc = prob.bc_at(b);
            match init {
                EnsembleInit::StraightLine => crate::model::straight_line(grid, &bc.x0, &bc.xf),
                EnsembleInit::GreatCircle => crate::problems::great_circle(grid, &bc.x0, &bc.xf),
            }
        })
        .collect()
}

/// Per-sample costates `λ(t,β) = −Φᵀ(0,t,β)y_β/√w_β` of the minimum-norm
/// solution, so that `u = −R⁻¹Σ w_β B̃ᵀλ_β`.
fn recover_costates(l: &LOperator, svd: &SvdSystem, weights: &[f64]) -> Vec<Trajectory> {
    let mut y = DVector::zeros(l.matrix.nrows());
    for k in 0..svd.n_eps {
        y += svd.u.column(k) * (svd.coef[k] / (svd.sigma[k] * svd.sigma[k]));
    }
    l.psi
        .iter()
        .enumerate()
        .map(|(b, psi)| {
            let yb = y.rows(b * l.n, l.n).into_owned() * (weights[b].sqrt() / weights[b]);
            psi.map(|_, p| -(p.transpose() * &yb))
        })
        .collect()
}

fn sup_diff(a: &[Trajectory], b: &[Trajectory]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.iter()
                .zip(y.iter())
                .map(|(p, q)| linalg::norm1(&(p - q)))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Ensemble iteration: freeze, assemble, synthesize, propagate.
pub fn ensemble_solve(prob: &EnsembleProblem, config: &EnsembleConfig) -> Result<EnsembleSolution> {
    config.validate()?;
    let tf = prob.cost.tf();
    let grid = config.state_grid(tf)?;
    let systems = prob.systems()?;
    let mut x_iter = initial_trajectories(prob, grid, config.init);
    let mut lambda_iter: Option<Vec<Trajectory>> = None;
    let mut records = Vec::new();
    let mut best: Option<(KnotControl, Vec<Trajectory>, TerminalErrors, SvdSystem)> = None;
    let mut converged = false;
    for k in 1..=config.max_iter {
        let step = || -> Result<_> {
            let frozen: Vec<FrozenSample> = systems
                .par_iter()
                .enumerate()
                .map(|(b, sys)| {
                    let lam = lambda_iter.as_ref().map(|l| &l[b]);
                    freeze_sample(sys, &prob.cost, &x_iter[b], lam, config.mode)
                })
                .collect();
            let l = assemble_l(&frozen, prob, config.n_t_ctrl)?;
            let (svd, v) = svd_synthesize_with(&l.matrix, &l.xi, config.eps, config.rcond, config.reach_threshold)?;
            let u = l.unscale(&v, tf);
            let (trajs, errs) = propagate_ensemble(prob, &u, &grid)?;
            let next = if config.frozen_update {
                frozen
                    .par_iter()
                    .enumerate()
                    .map(|(b, fs)| propagate_frozen(fs, &u, &prob.bc_at(b).x0))
                    .collect::<Result<Vec<_>>>()?
            } else {
                trajs.clone()
            };
            let lam = (config.mode == EnsembleMode::Costate).then(|| recover_costates(&l, &svd, &prob.grid.weights));
            Ok((u, trajs, errs, svd, next, lam))
        };
        let (u, trajs, errs, svd, next, lam) = step().map_err(|e| e.at_iteration(k))?;
        let dx = sup_diff(&next, &x_iter);
        records.push(EnsembleRecord {
            k,
            weighted_l2: errs.weighted_l2,
            sup: errs.sup,
            residual: svd.residual(),
            n_eps: svd.n_eps,
            sigma_head: svd.sigma.iter().take(8).cloned().collect(),
            energy: u.energy(prob.cost.r()),
            dx,
        });
        x_iter = if config.relaxation < 1.0 {
            let th = config.relaxation;
            next.iter()
                .zip(&x_iter)
                .map(|(a, b)| a.map(|i, v| v * th + &b[i] * (1.0 - th)))
                .collect()
        } else {
            next
        };
        if lam.is_some() {
            lambda_iter = lam;
        }
        let done = errs.get(config.norm) <= config.tol_terminal;
        best = Some((u, trajs, errs, svd));
        if done {
            converged = true;
            break;
        }
    }
    let (control, trajectories, errors, svd) = best.expect("max_iter >= 1");
    Ok(EnsembleSolution {
        control,
        trajectories,
        errors,
        iterations: records.len(),
        records,
        svd,
        converged,
        state_grid: grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vector;
    use crate::problems;

    #[test]
    fn zero_target_gives_zero_control() {
        let l = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.5, 0.0, 2.0, 0.0]);
        let (s, v) = svd_synthesize(&l, &DVector::zeros(2), 1e-8, 1e-8).unwrap();
        assert_eq!(s.n_eps, 0);
        assert!(v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn residual_non_increasing() {
        let l = DMatrix::from_fn(4, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + 0.1 * f64::from(u8::from(i == j)));
        let xi = vector(&[1.0, -0.5, 0.25, 2.0]);
        let (s, _) = svd_synthesize(&l, &xi, 0.0, 1e-12).unwrap();
        assert!(s.partial_residual.windows(2).all(|w| w[1] <= w[0] + 1e-15));
        assert!(s.sigma.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn unreachable_target_is_reported() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let r = svd_synthesize(&l, &vector(&[0.0, 1.0]), 1e-8, 1e-8);
        assert!(matches!(r, Err(Error::TargetNotReachable { .. })));
    }

    #[test]
    fn diagnostics_span_cases() {
        let l = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let (s, _) = svd_synthesize(&l, &vector(&[3.0, 0.0]), 0.0, 1e-8).unwrap();
        let d = controllability_diagnostics(&s, 0.5);
        assert_eq!(d.relative_residual, 0.0);
        assert_eq!(d.partial_energy[0], d.partial_energy[1]);
        let l = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-20]);
        let (s, _) = svd_synthesize(&l, &vector(&[0.3, 0.0]), 0.0, 1e-8).unwrap();
        let flagged = SvdSystem {
            coef: vec![0.0, 1.0],
            partial_residual: vec![1.0, 1.0],
            xi_norm: 1.0,
            n_rank: 1,
            ..s
        };
        let d = controllability_diagnostics(&flagged, 0.5);
        assert_eq!(d.relative_residual, 1.0);
        assert!(d.flagged);
    }

    #[test]
    fn zero_control_keeps_pole() {
        let sys = problems::bloch_system(0.7);
        let g = TimeGrid::new(10.0, 256).unwrap();
        let u = KnotControl::zeros(10.0, 32, 2);
        let x = propagate_sample(&sys, &u, &vector(&[0.0, 0.0, 1.0]), &g).unwrap();
        assert_eq!(*x.last(), vector(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn picard_freeze_matches_rhs() {
        let sys = problems::bloch_system(0.3);
        let cost = problems::bloch(0.3, 1.0).cost;
        let g = TimeGrid::new(1.0, 4).unwrap();
        let x = Path::constant(g, vector(&[0.2, -0.4, 0.9]));
        let fs = freeze_sample(&sys, &cost, &x, None, EnsembleMode::Picard);
        let u = vector(&[0.3, -1.1]);
        let lin = &fs.a_path[2] * &x[2] + &fs.b_path[2] * &u;
        assert!((lin - sys.eval_rhs(&x[2], &u).unwrap()).amax() < 1e-15);
        let pole = Path::constant(g, vector(&[0.0, 0.0, 1.0]));
        let fs = freeze_sample(&sys, &cost, &pole, None, EnsembleMode::Picard);
        assert_eq!(fs.b_path[0], sys.n_mats()[2]);
    }
}
