//! Independent reference solutions: single shooting on the full canonical
//! equations, the Gramian minimum-energy control of linear systems, and grid
//! refinement studies.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    BilinearSystem, BoundaryConditions, ControlSignal, CostateTrajectory, QuadraticCost, TimeGrid, Trajectory,
};
use crate::ode::{rk4_integrate, Direction, MatrixPath, OdeValue, Path};
use crate::solver::{self, freeze};

/// Largest state dimension accepted by the shooting oracle.
pub const MAX_SHOOTING_DIM: usize = 4;
/// Largest Gramian condition number accepted.
pub const MAX_COND_W: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct ShootingOptions {
    pub n_t: usize,
    pub tol: f64,
    pub max_newton: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        Self {
            n_t: 4000,
            tol: 1e-10,
            max_newton: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingResult {
    pub lambda0: DVector<f64>,
    pub terminal_defect: f64,
    pub newton_iters: usize,
    pub x_path: Trajectory,
    pub u_path: ControlSignal,
    pub lambda_path: CostateTrajectory,
    pub cost: f64,
}

/// Integrates the canonical state/costate equations with the control
/// eliminated, returning the stacked `(x, λ)` path.
fn canonical_path(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x0: &DVector<f64>,
    lambda0: &DVector<f64>,
    grid: &TimeGrid,
) -> Result<Path<DVector<f64>>> {
    let n = sys.n();
    let mut z0 = DVector::zeros(2 * n);
    z0.rows_mut(0, n).copy_from(x0);
    z0.rows_mut(n, n).copy_from(lambda0);
    rk4_integrate(
        |_, z: &DVector<f64>| {
            let x = z.rows(0, n).into_owned();
            let l = z.rows(n, n).into_owned();
            let mut out = DVector::zeros(2 * n);
            out.rows_mut(0, n).copy_from(&freeze::extremal_state_rhs(sys, cost, &x, &l));
            out.rows_mut(n, n).copy_from(&freeze::pontryagin_costate_rhs(sys, cost, &x, &l));
            out
        },
        z0,
        grid,
        Direction::Forward,
    )
}

fn shoot_residual(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    lambda0: &DVector<f64>,
    grid: &TimeGrid,
) -> Option<DVector<f64>> {
    let n = sys.n();
    let path = canonical_path(sys, cost, &bc.x0, lambda0, grid).ok()?;
    let r = path.last().rows(0, n).into_owned() - &bc.xf;
    OdeValue::is_finite(&r).then_some(r)
}

/// Damped Newton on `λ₀ ↦ x(tf; λ₀) − x_f` with a central-difference
/// Jacobian and Armijo backtracking.
pub fn shooting_solve(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    lambda0_guess: &DVector<f64>,
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    let n = sys.n();
    if n > MAX_SHOOTING_DIM {
        return Err(Error::DimensionTooLarge {
            n,
            max: MAX_SHOOTING_DIM,
        });
    }
    cost.check_against(sys)?;
    bc.check_against(sys)?;
    sys.check_state(lambda0_guess, "costate guess")?;
    let grid = TimeGrid::new(cost.tf(), opts.n_t)?;
    let mut lam = lambda0_guess.clone();
    let mut res = shoot_residual(sys, cost, bc, &lam, &grid).ok_or(Error::OracleDiverged {
        iterations: 0,
        defect: f64::INFINITY,
    })?;
    let mut iters = 0;
    while res.norm() > opts.tol {
        if iters >= opts.max_newton {
            return Err(Error::OracleDiverged {
                iterations: iters,
                defect: res.norm(),
            });
        }
        iters += 1;
        let h = 1e-6 * (1.0 + lam.norm());
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut lp = lam.clone();
            let mut lm = lam.clone();
            lp[j] += h;
            lm[j] -= h;
            let (rp, rm) = match (
                shoot_residual(sys, cost, bc, &lp, &grid),
                shoot_residual(sys, cost, bc, &lm, &grid),
            ) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::OracleDiverged {
                        iterations: iters,
                        defect: res.norm(),
                    })
                }
            };
            jac.set_column(j, &((rp - rm) / (2.0 * h)));
        }
        // Minimum-norm step: gauge directions of the costate leave x(tf)
        // unchanged and make the Jacobian singular.
        let svd = jac.svd(true, true);
        let cutoff = 1e-10 * svd.singular_values.max();
        let step = match svd.solve(&(-&res), cutoff) {
            Ok(s) if OdeValue::is_finite(&s) => s,
            _ => {
                return Err(Error::OracleDiverged {
                    iterations: iters,
                    defect: res.norm(),
                })
            }
        };
        let f0 = res.norm_squared();
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-10 {
            let cand = &lam + &step * t;
            if let Some(r) = shoot_residual(sys, cost, bc, &cand, &grid) {
                if r.norm_squared() <= (1.0 - 1e-4 * t) * f0 {
                    accepted = Some((cand, r));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((l, r)) => {
                lam = l;
                res = r;
            }
            None => {
                return Err(Error::OracleDiverged {
                    iterations: iters,
                    defect: res.norm(),
                })
            }
        }
    }
    let path = canonical_path(sys, cost, &bc.x0, &lam, &grid)?;
    let x_path = path.map(|_, z| z.rows(0, n).into_owned());
    let lambda_path = path.map(|_, z| z.rows(n, n).into_owned());
    let u_path = solver::extract_control(sys, cost.r_inv(), &x_path, &lambda_path)?;
    let cost_j = solver::cost_value(cost, &x_path, &u_path)?;
    Ok(ShootingResult {
        terminal_defect: res.norm(),
        lambda0: lam,
        newton_iters: iters,
        x_path,
        u_path,
        lambda_path,
        cost: cost_j,
    })
}

/// Starting costates tried by default: zero, then all ones, then all minus
/// ones. Zero alone can reach a finite-time blowup of the canonical flow.
pub fn default_guesses(n: usize) -> Vec<DVector<f64>> {
    vec![DVector::zeros(n), DVector::from_element(n, 1.0), DVector::from_element(n, -1.0)]
}

/// Shooting from several starting costates; returns the first success or
/// the last failure.
pub fn shooting_multistart(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    guesses: &[DVector<f64>],
    opts: &ShootingOptions,
) -> Result<ShootingResult> {
    let mut last = Error::OracleDiverged {
        iterations: 0,
        defect: f64::INFINITY,
    };
    for g in guesses {
        match shooting_solve(sys, cost, bc, g, opts) {
            Ok(r) => return Ok(r),
            Err(e @ Error::DimensionTooLarge { .. }) => return Err(e),
            Err(e) => last = e,
        }
    }
    Err(last)
}

#[derive(Debug, Clone)]
pub struct GramianControl {
    pub u_path: ControlSignal,
    pub w: DMatrix<f64>,
    pub cond: f64,
    /// `Φ(0, tᵢ)` per node.
    pub psi_path: MatrixPath,
}

/// `Φ(0, tᵢ)` per node. Constant coefficients use the matrix exponential;
/// otherwise `Ψ̇ = −ΨA` is integrated with four RK4 substeps per interval.
fn psi_path(a_path: &MatrixPath) -> Result<MatrixPath> {
    let grid = *a_path.grid();
    let a0 = a_path.first();
    if a_path.iter().all(|a| a == a0) {
        return Ok(Path::from_fn(grid, |_, t| (a0 * -t).exp()));
    }
    let fine = TimeGrid::new(grid.tf(), grid.n_t() * 4)?;
    let a_fine = Path::from_fn(fine, |i, _| a_path.at_position(i as f64 / 4.0));
    let psi = crate::ode::inverse_transition_path(&a_fine)?;
    Ok(Path::from_fn(grid, |i, _| psi[4 * i].clone()))
}

/// `W = ∫Φ(0,σ)BR⁻¹BᵀΦᵀ(0,σ)dσ` by the trapezoid rule and the open-loop
/// control `u(t) = R⁻¹Bᵀ(t)Φᵀ(0,t)W⁻¹ξ`, `ξ = Φ(0,tf)x_f − x₀`.
pub fn gramian_min_energy(
    a_path: &MatrixPath,
    b_path: &MatrixPath,
    r: &DMatrix<f64>,
    bc: &BoundaryConditions,
) -> Result<GramianControl> {
    let grid = *a_path.grid();
    if b_path.grid() != &grid {
        return Err(Error::dims("Gramian paths", "one common grid", "different grids"));
    }
    let n = a_path.first().nrows();
    if bc.x0.len() != n || b_path.first().nrows() != n {
        return Err(Error::dims("Gramian system", n, bc.x0.len()));
    }
    let (r_inv, _) = linalg::spd_inverse_and_inv_sqrt(r)?;
    let psi = psi_path(a_path)?;
    let integrand: Vec<DMatrix<f64>> = (0..grid.len())
        .map(|i| {
            let pb = &psi[i] * &b_path[i];
            &pb * &r_inv * pb.transpose()
        })
        .collect();
    let dt = grid.dt();
    let mut w = DMatrix::zeros(n, n);
    for (i, m) in integrand.iter().enumerate() {
        let wt = if i == 0 || i + 1 == integrand.len() { 0.5 } else { 1.0 };
        w += m * (wt * dt);
    }
    let w = linalg::symmetrize(&w);
    let cond = linalg::condition_number(&w);
    if !(cond <= MAX_COND_W) {
        return Err(Error::NotControllable { cond });
    }
    let xi = psi.last() * &bc.xf - &bc.x0;
    let eta = w.clone().full_piv_lu().solve(&xi).ok_or(Error::NotControllable { cond })?;
    let u_path = Path::from_fn(grid, |i, _| &r_inv * b_path[i].transpose() * psi[i].transpose() * &eta);
    Ok(GramianControl {
        u_path,
        w,
        cond,
        psi_path: psi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinementRow {
    pub n_t: usize,
    pub dt: f64,
    pub terminal_error: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub struct RefinementTable {
    pub rows: Vec<RefinementRow>,
    /// `log2` ratios of successive differences in `J` against the finest grid.
    pub observed_orders: Vec<f64>,
}

/// Reruns the iterative solver on each grid.
pub fn refinement_study(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    bc: &BoundaryConditions,
    base: &solver::SolverConfig,
    grids: &[usize],
) -> Result<RefinementTable> {
    if grids.len() < 2 {
        return Err(Error::InvalidInput {
            what: "refinement grids",
            reason: "need at least two grids".into(),
        });
    }
    let mut rows = Vec::with_capacity(grids.len());
    for &n_t in grids {
        let cfg = solver::SolverConfig {
            n_t,
            ..base.clone()
        };
        let sol = solver::solve_report(sys, cost, bc, &cfg)?;
        rows.push(RefinementRow {
            n_t,
            dt: cost.tf() / n_t as f64,
            terminal_error: sol.terminal_error(),
            cost: sol.cost(),
        });
    }
    let finest = rows.last().expect("non-empty").cost;
    let errs: Vec<f64> = rows[..rows.len() - 1].iter().map(|r| (r.cost - finest).abs()).collect();
    let observed_orders = errs
        .windows(2)
        .zip(rows.windows(3))
        .map(|(e, r)| (e[0] / e[1]).log2() / (r[0].dt / r[1].dt).log2())
        .collect();
    Ok(RefinementTable { rows, observed_orders })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{matrix, vector};
    use crate::problems;

    #[test]
    fn double_integrator_gramian_closed_form() {
        let g = TimeGrid::new(1.0, 2000).unwrap();
        let a = matrix(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = matrix(2, 1, &[0.0, 1.0]);
        let bc = BoundaryConditions::new(vector(&[0.0, 0.0]), vector(&[1.0, 0.0])).unwrap();
        let gc = gramian_min_energy(&Path::constant(g, a), &Path::constant(g, b), &matrix(1, 1, &[1.0]), &bc)
            .unwrap();
        // Φ(0,σ)B = (−σ, 1)ᵀ.
        let exact = matrix(2, 2, &[1.0 / 3.0, -0.5, -0.5, 1.0]);
        assert!((&gc.w - exact).amax() < 1e-6);
        // Rest-to-rest unit move: u(t) = 6 − 12t.
        for (i, t) in g.nodes().enumerate() {
            assert!((gc.u_path[i][0] - (6.0 - 12.0 * t)).abs() < 1e-5);
        }
    }

    #[test]
    fn free_drift_target_needs_no_control() {
        let p = problems::harmonic_oscillator_default();
        let g = TimeGrid::new(p.cost.tf(), 200).unwrap();
        let x0 = vector(&[1.0, 0.0]);
        let xf = (p.sys.a() * p.cost.tf()).exp() * &x0;
        let bc = BoundaryConditions::new(x0, xf).unwrap();
        let gc = gramian_min_energy(
            &Path::constant(g, p.sys.a().clone()),
            &Path::constant(g, p.sys.b().clone()),
            p.cost.r(),
            &bc,
        )
        .unwrap();
        assert!(gc.u_path.iter().all(|u| u.amax() < 1e-12));
    }

    #[test]
    fn shooting_rejects_large_dimension() {
        let n = 5;
        let sys = BilinearSystem::new(DMatrix::zeros(n, n), DMatrix::zeros(n, 1), vec![DMatrix::zeros(n, 1); n])
            .unwrap();
        let cost = QuadraticCost::new(DMatrix::identity(n, n), matrix(1, 1, &[1.0]), 1.0).unwrap();
        let bc = BoundaryConditions::new(DVector::zeros(n), DVector::zeros(n)).unwrap();
        let r = shooting_solve(&sys, &cost, &bc, &DVector::zeros(n), &ShootingOptions::default());
        assert!(matches!(r, Err(Error::DimensionTooLarge { n: 5, max: 4 })));
    }

    #[test]
    fn linear_shooting_converges_in_one_step() {
        let p = problems::harmonic_oscillator_default();
        let g = TimeGrid::new(p.cost.tf(), 2000).unwrap();
        let gc = gramian_min_energy(
            &Path::constant(g, p.sys.a().clone()),
            &Path::constant(g, p.sys.b().clone()),
            p.cost.r(),
            &p.bc,
        )
        .unwrap();
        // u = −R⁻¹Bᵀλ with λ(0) = −W⁻¹ξ.
        let xi = (p.sys.a() * -p.cost.tf()).exp() * &p.bc.xf - &p.bc.x0;
        let guess = -(gc.w.clone().try_inverse().unwrap() * xi);
        let r = shooting_solve(&p.sys, &p.cost, &p.bc, &guess, &ShootingOptions::default()).unwrap();
        assert!(r.newton_iters <= 1, "{} Newton steps", r.newton_iters);
    }
}
