//! α-weighted iterate norms, contraction ratios and optimality residuals.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{hamiltonian, BilinearSystem, ControlSignal, CostateTrajectory, QuadraticCost, Trajectory};
use crate::ode::MatrixPath;
use crate::sweep::FrozenLinearSystem;

use super::IterationRecord;

/// `sup_t ‖x(t)‖₁ e^{−αt}`.
pub fn alpha_norm_state(path: &Trajectory, alpha: f64) -> f64 {
    let g = path.grid();
    path.iter()
        .enumerate()
        .map(|(i, x)| linalg::norm1(x) * (-alpha * g.t(i)).exp())
        .fold(0.0, f64::max)
}

/// `sup_t ‖K(t)‖₁ e^{−α(tf−t)}` with the max-column-sum norm.
pub fn alpha_norm_matrix(path: &MatrixPath, alpha: f64) -> f64 {
    let g = path.grid();
    path.iter()
        .enumerate()
        .map(|(i, k)| linalg::max_col_sum(k) * (-alpha * (g.tf() - g.t(i))).exp())
        .fold(0.0, f64::max)
}

/// `sup_t ‖v(t)‖₁ e^{−α(tf−t)}`, the backward-weighted norm used for `Sν`.
pub fn alpha_norm_backward(path: &Trajectory, alpha: f64) -> f64 {
    let g = path.grid();
    path.iter()
        .enumerate()
        .map(|(i, v)| linalg::norm1(v) * (-alpha * (g.tf() - g.t(i))).exp())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionRatio {
    pub k: usize,
    pub ratio_x: f64,
    pub ratio_k: f64,
    pub ratio_snu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub ratios: Vec<ContractionRatio>,
    /// Every tail ratio (the last half of the run) is below one.
    pub empirically_contractive: bool,
    /// Every tail difference is below the one two iterations earlier. Weaker
    /// than the single-step flag; tolerates iterates that alternate around
    /// the fixed point.
    pub two_step_contractive: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 || num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Ratios of successive iterate differences as stored in the records.
pub fn contraction_ratios(records: &[IterationRecord]) -> ContractionReport {
    let ratios: Vec<ContractionRatio> = records
        .windows(2)
        .map(|w| ContractionRatio {
            k: w[1].k,
            ratio_x: ratio(w[1].dx, w[0].dx),
            ratio_k: ratio(w[1].dk, w[0].dk),
            ratio_snu: ratio(w[1].dsnu, w[0].dsnu),
        })
        .collect();
    let tail = &ratios[ratios.len() / 2..];
    let empirically_contractive = records.len() >= 3
        && tail
            .iter()
            .all(|r| r.ratio_x < 1.0 && r.ratio_k < 1.0 && r.ratio_snu < 1.0);
    let two = |f: fn(&IterationRecord) -> f64| {
        let tail = &records[records.len() / 2..];
        tail.windows(3).all(|w| f(&w[2]) < f(&w[0]) || f(&w[2]) == 0.0)
    };
    let two_step_contractive = records.len() >= 3 && two(|r| r.dx) && two(|r| r.dk) && two(|r| r.dsnu);
    ContractionReport {
        ratios,
        empirically_contractive,
        two_step_contractive,
    }
}

/// Node-wise `∂V/∂t + V_xᵀ f(x,u) + ½(xᵀQx + uᵀRu)` with
/// `V = ½xᵀKx + xᵀSν + ½νᵀPν` and the time derivatives taken from the sweep
/// equations of `frozen`.
#[allow(clippy::too_many_arguments)]
pub fn hjb_residual(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    frozen: &FrozenLinearSystem,
    k_path: &MatrixPath,
    s_path: &MatrixPath,
    nu: &DVector<f64>,
    x_path: &Trajectory,
    u_path: &ControlSignal,
) -> Result<Vec<f64>> {
    let len = x_path.len();
    if k_path.len() != len || s_path.len() != len || u_path.len() != len || frozen.a_path.len() != len {
        return Err(Error::dims("HJB residual paths", len, k_path.len()));
    }
    Ok((0..len)
        .map(|i| {
            let x = &x_path[i];
            let u = &u_path[i];
            let k = &k_path[i];
            let s = &s_path[i];
            let a = &frozen.a_path[i];
            let m = &frozen.m_path[i];
            let q = &frozen.q_path[i];
            let kdot = -q - a.transpose() * k - k * a + k * m * k;
            let sdot = -(a.transpose() - k * m) * s;
            let pdot = s.transpose() * m * s;
            let vt = 0.5 * x.dot(&(&kdot * x)) + x.dot(&(&sdot * nu)) + 0.5 * nu.dot(&(&pdot * nu));
            let vx = k * x + s * nu;
            vt + vx.dot(&sys.rhs_unchecked(x, u)) + cost.running(x, u)
        })
        .collect())
}

/// `H(x(t), u(t), λ(t))` per node.
pub fn hamiltonian_path(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x_path: &Trajectory,
    u_path: &ControlSignal,
    lambda_path: &CostateTrajectory,
) -> Result<Vec<f64>> {
    (0..x_path.len())
        .map(|i| hamiltonian(sys, cost, &x_path[i], &u_path[i], &lambda_path[i]))
        .collect()
}

pub fn spread(values: &[f64]) -> f64 {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        0.0
    } else {
        hi - lo
    }
}

/// Largest central-difference defect of `λ̇ = −Q̃x − Ãᵀλ` over interior nodes.
pub fn costate_ode_defect(frozen: &FrozenLinearSystem, x_path: &Trajectory, lambda_path: &CostateTrajectory) -> f64 {
    let dt = x_path.grid().dt();
    (1..x_path.len() - 1)
        .map(|i| {
            let fd = (&lambda_path[i + 1] - &lambda_path[i - 1]) / (2.0 * dt);
            let rhs = -(&frozen.q_path[i] * &x_path[i]) - frozen.a_path[i].transpose() * &lambda_path[i];
            (fd - rhs).amax()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TimeGrid;
    use crate::ode::Path;

    #[test]
    fn alpha_weighting() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let p = Path::constant(g, DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(alpha_norm_state(&p, 0.0), 2.0);
        assert_eq!(alpha_norm_state(&p, 3.0), 2.0);
        assert!((alpha_norm_backward(&p, 3.0) - 2.0).abs() < 1e-15);
        let ramp = Path::from_fn(g, |_, t| DVector::from_vec(vec![t]));
        assert!(alpha_norm_state(&ramp, 5.0) < alpha_norm_state(&ramp, 0.0));
    }

    #[test]
    fn ratios_zero_for_vanishing_differences() {
        let rec = |k, d| IterationRecord {
            k,
            terminal_error: 0.0,
            sweep_defect: 0.0,
            dx: d,
            dk: d,
            dsnu: d,
            cost: 0.0,
            hamiltonian_spread: 0.0,
            cond_p0: 1.0,
        };
        let r = contraction_ratios(&[rec(1, 1.0), rec(2, 0.0), rec(3, 0.0)]);
        assert!(r.ratios.iter().all(|c| c.ratio_x == 0.0));
        assert!(r.empirically_contractive);
    }
}
