//! Built-in problem instances: scalar population transfer, single and
//! ensemble Bloch excitation, and a linear harmonic oscillator.

use nalgebra::{DMatrix, DVector};

use crate::model::{matrix, vector, BilinearSystem, BoundaryConditions, QuadraticCost, TimeGrid, Trajectory};
use crate::ode::Path;

/// A single-system problem bundle.
#[derive(Debug, Clone)]
pub struct Problem {
    pub sys: BilinearSystem,
    pub cost: QuadraticCost,
    pub bc: BoundaryConditions,
}

/// `ẋ = ux`.
pub fn population_system() -> BilinearSystem {
    BilinearSystem::new(matrix(1, 1, &[0.0]), matrix(1, 1, &[0.0]), vec![matrix(1, 1, &[1.0])])
        .expect("static dimensions")
}

/// `x₀ = 1 → x_f = 1/3` over `tf = 2` with `Q = R = 1`.
pub fn population() -> Problem {
    Problem {
        sys: population_system(),
        cost: QuadraticCost::new(matrix(1, 1, &[1.0]), matrix(1, 1, &[1.0]), 2.0).expect("valid weights"),
        bc: BoundaryConditions::new(vector(&[1.0]), vector(&[1.0 / 3.0])).expect("valid bc"),
    }
}

/// Rotating-frame Bloch equations with off-resonance `ω` and two transverse
/// controls, written in control-side form.
pub fn bloch_system(omega: f64) -> BilinearSystem {
    let a = matrix(3, 3, &[0.0, -omega, 0.0, omega, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let b1 = matrix(3, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]);
    let b2 = matrix(3, 3, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]);
    BilinearSystem::from_control_side(a, DMatrix::zeros(3, 2), vec![b1, b2]).expect("static dimensions")
}

/// π/2 excitation `(0,0,1) → (1,0,0)` with minimum energy (`Q = 0`, `R = I`).
pub fn bloch(omega: f64, tf: f64) -> Problem {
    Problem {
        sys: bloch_system(omega),
        cost: QuadraticCost::new(DMatrix::zeros(3, 3), DMatrix::identity(2, 2), tf).expect("valid weights"),
        bc: BoundaryConditions::new(vector(&[0.0, 0.0, 1.0]), vector(&[1.0, 0.0, 0.0])).expect("valid bc"),
    }
}

/// `A = [[0,−1],[1,0]]`, `B = (0,1)ᵀ`, `N ≡ 0`, minimum energy.
pub fn harmonic_oscillator(tf: f64, x0: &[f64], xf: &[f64]) -> Problem {
    let sys = BilinearSystem::new(
        matrix(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        matrix(2, 1, &[0.0, 1.0]),
        vec![DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)],
    )
    .expect("static dimensions");
    Problem {
        sys,
        cost: QuadraticCost::new(DMatrix::zeros(2, 2), matrix(1, 1, &[1.0]), tf).expect("valid weights"),
        bc: BoundaryConditions::new(vector(x0), vector(xf)).expect("valid bc"),
    }
}

/// Default harmonic-oscillator instance used by tests and validation.
pub fn harmonic_oscillator_default() -> Problem {
    harmonic_oscillator(2.0, &[1.0, 0.0], &[0.0, 0.5])
}

/// Constant-speed arc on the sphere between two points of equal norm.
/// Falls back to the straight line when the points are (anti)parallel or
/// of different norm.
pub fn great_circle(grid: TimeGrid, x0: &DVector<f64>, xf: &DVector<f64>) -> Trajectory {
    let r0 = x0.norm();
    let rf = xf.norm();
    let cos = if r0 > 0.0 && rf > 0.0 { x0.dot(xf) / (r0 * rf) } else { 1.0 };
    if (r0 - rf).abs() > 1e-12 * (1.0 + r0) || r0 == 0.0 || cos.abs() > 1.0 - 1e-12 {
        return crate::model::straight_line(grid, x0, xf);
    }
    let theta = cos.acos();
    let sin = theta.sin();
    let tf = grid.tf();
    Path::from_fn(grid, |i, t| {
        if i == 0 {
            x0.clone()
        } else if i == grid.n_t() {
            xf.clone()
        } else {
            let s = t / tf;
            x0 * (((1.0 - s) * theta).sin() / sin) + xf * ((s * theta).sin() / sin)
        }
    })
}

/// Bloch ensemble over off-resonance `ω ∈ [lo, hi]`: `A(ω) = ω·A₁`.
pub fn bloch_family() -> crate::ensemble::SystemFamily {
    let rot = BilinearSystem::new(
        matrix(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        DMatrix::zeros(3, 2),
        vec![DMatrix::zeros(3, 2); 3],
    )
    .expect("static dimensions");
    crate::ensemble::SystemFamily::new(bloch_system(0.0), vec![rot]).expect("matching dimensions")
}

/// π/2 excitation of the Bloch ensemble with `n_beta` design samples on
/// `[lo, hi]` and a 141-point evaluation grid.
pub fn bloch_ensemble(
    lo: f64,
    hi: f64,
    n_beta: usize,
    tf: f64,
) -> crate::error::Result<crate::ensemble::EnsembleProblem> {
    use crate::ensemble::{sample_parameters, Axis, EnsembleProblem, ParameterGrid};
    let grid = if n_beta == 1 {
        let mut g = ParameterGrid::single(vector(&[0.5 * (lo + hi)]));
        g.eval_samples = None;
        g
    } else {
        sample_parameters(&[Axis::new(lo, hi, n_beta)], Some(&[Axis::new(lo, hi, BLOCH_EVAL_POINTS)]))?
    };
    let single = bloch(0.0, tf);
    EnsembleProblem::new(bloch_family(), single.cost, vec![single.bc], grid)
}

/// Size of the evaluation grid for the ensemble pulse.
pub const BLOCH_EVAL_POINTS: usize = 141;

/// Solver settings for the single Bloch pulse. The straight chord from the
/// pole to the equator leaves the sphere, so the iteration starts on the
/// great circle instead.
pub fn bloch_solver_config() -> crate::solver::SolverConfig {
    crate::solver::SolverConfig {
        init: crate::solver::InitStrategy::GreatCircle,
        ..Default::default()
    }
}

/// Desk-scale settings for the ensemble pulse: 256 knots, a 1e−2 weighted
/// terminal band, and the frozen-linear update relaxed by one half. With the
/// true-dynamics update the iteration stalls near an error of one.
pub fn bloch_ensemble_config() -> crate::ensemble::EnsembleConfig {
    crate::ensemble::EnsembleConfig {
        n_t_ctrl: 256,
        substeps: 8,
        tol_terminal: 1e-2,
        max_iter: 300,
        init: crate::ensemble::EnsembleInit::GreatCircle,
        frozen_update: true,
        relaxation: 0.5,
        ..Default::default()
    }
}
