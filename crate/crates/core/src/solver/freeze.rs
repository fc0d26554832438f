//! Freezing the bilinear problem along an iterate `(x, λ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BilinearSystem, CostateTrajectory, QuadraticCost, Trajectory};
use crate::sweep::FrozenLinearSystem;

/// How the bilinear coupling is distributed over `Ã`, `B̃R⁻¹B̃ᵀ` and `Q̃`.
///
/// All three rules reproduce the true state equation along the iterate,
/// `Ãx − Mλ = Ax − (B+N(x))R⁻¹(B+N(x))ᵀλ`. They differ in the costate
/// equation `λ̇ = −Q̃x − Ãᵀλ`:
///
/// * `Extremal` matches the Pontryagin costate equation, so fixed points are
///   extremals of the bilinear problem.
/// * `Symmetric` uses `M = BR⁻¹Bᵀ − N R⁻¹Nᵀ`, `Q̃ = Q` and the full symmetric
///   correction in `Ã`; its costate equation counts the bilinear term twice.
/// * `Picard` keeps `Ã = A`, `M = (B+N)R⁻¹(B+N)ᵀ`, `Q̃ = Q` and drops the
///   bilinear costate term entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FreezeRule {
    #[default]
    Extremal,
    Symmetric,
    Picard,
}

impl FreezeRule {
    pub fn name(&self) -> &'static str {
        match self {
            FreezeRule::Extremal => "extremal",
            FreezeRule::Symmetric => "symmetric",
            FreezeRule::Picard => "picard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "extremal" => Some(FreezeRule::Extremal),
            "symmetric" => Some(FreezeRule::Symmetric),
            "picard" => Some(FreezeRule::Picard),
            _ => None,
        }
    }
}

/// Frozen coefficients at a single node.
#[derive(Debug, Clone)]
pub struct FrozenNode {
    pub a: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Remove the component of `λ` along `x`. For norm-preserving systems
/// `λᵀx` is a constant of motion that the control does not see.
pub fn gauge_project(x: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    let xx = x.dot(x);
    if xx > 0.0 {
        lambda - x * (lambda.dot(x) / xx)
    } else {
        lambda.clone()
    }
}

/// Frozen coefficients at one node. With `gauge`, `λ` is projected orthogonal
/// to `x` and `Ã` receives the rank-one term `−x(N(x)ū)ᵀ/|x|²` that pins the
/// gauge direction (it vanishes on `x` for norm-preserving systems).
pub fn freeze_node(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    rule: FreezeRule,
    gauge: bool,
) -> FrozenNode {
    let n = sys.n();
    let ri = cost.r_inv();
    let b = sys.b();
    let nx = sys.bilinear_input(x);
    let bx = b + &nx;
    match rule {
        FreezeRule::Picard => FrozenNode {
            a: sys.a().clone(),
            m: linalg::symmetrize(&(&bx * ri * bx.transpose())),
            q: cost.q().clone(),
            b: bx,
        },
        FreezeRule::Symmetric => {
            let mut a = sys.a().clone();
            for (j, nj) in sys.n_mats().iter().enumerate() {
                let c = (nj * ri * bx.transpose() + &bx * ri * nj.transpose()) * lambda;
                let mut col = a.column_mut(j);
                col -= c;
            }
            let m = b * ri * b.transpose() - &nx * ri * nx.transpose();
            FrozenNode {
                a,
                m: linalg::symmetrize(&m),
                q: cost.q().clone(),
                b: bx,
            }
        }
        FreezeRule::Extremal => {
            let lam = if gauge { gauge_project(x, lambda) } else { lambda.clone() };
            let mut a = sys.a().clone();
            for (j, nj) in sys.n_mats().iter().enumerate() {
                let c = (nj * ri * b.transpose() + b * ri * nj.transpose()) * &lam * 0.5;
                let mut col = a.column_mut(j);
                col -= c;
            }
            if gauge {
                let xx = x.dot(x);
                if xx > 0.0 {
                    let u_bar = -(ri * bx.transpose() * &lam);
                    let v = &nx * u_bar;
                    a -= x * v.transpose() / xx;
                }
            }
            let cross = b * ri * nx.transpose();
            let m = b * ri * b.transpose()
                + (&cross + cross.transpose()) * 0.5
                + &nx * ri * nx.transpose();
            // F has rows (Nⱼᵀλ)ᵀ, so xᵀFR⁻¹Fᵀx = λᵀN(x)R⁻¹N(x)ᵀλ.
            let f = DMatrix::from_fn(n, sys.m(), |j, i| sys.n_mats()[j].column(i).dot(&lam));
            let q = cost.q() - &f * ri * f.transpose();
            FrozenNode {
                a,
                m: linalg::symmetrize(&m),
                q: linalg::symmetrize(&q),
                b: bx,
            }
        }
    }
}

/// Frozen linear system along `(x, λ)`, with the explicit `B̃ = B + N(x)`
/// path attached.
pub fn build_frozen(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x_path: &Trajectory,
    lambda_path: &CostateTrajectory,
    rule: FreezeRule,
    gauge: bool,
) -> Result<FrozenLinearSystem> {
    if x_path.grid() != lambda_path.grid() {
        return Err(Error::dims("freeze paths", "one common grid", "different grids"));
    }
    cost.check_against(sys)?;
    for (x, l) in x_path.iter().zip(lambda_path.iter()) {
        sys.check_state(x, "iterate state")?;
        sys.check_state(l, "iterate costate")?;
    }
    let nodes: Vec<FrozenNode> = x_path
        .iter()
        .zip(lambda_path.iter())
        .map(|(x, l)| freeze_node(sys, cost, x, l, rule, gauge))
        .collect();
    let grid = *x_path.grid();
    let take = |f: fn(&FrozenNode) -> DMatrix<f64>| {
        crate::ode::Path::new(grid, nodes.iter().map(f).collect()).expect("one value per node")
    };
    let mut frozen = FrozenLinearSystem::new(
        take(|n| n.a.clone()),
        take(|n| n.m.clone()),
        take(|n| n.q.clone()),
    )?;
    frozen.b_path = Some(take(|n| n.b.clone()));
    Ok(frozen)
}

/// Right side of the Pontryagin costate equation,
/// `−Qx − Aᵀλ + w` with `wⱼ = λᵀNⱼR⁻¹(B+N(x))ᵀλ`.
pub fn pontryagin_costate_rhs(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> DVector<f64> {
    let bx = sys.input_matrix(x);
    let v = cost.r_inv() * bx.transpose() * lambda;
    let w = DVector::from_iterator(sys.n(), sys.n_mats().iter().map(|nj| lambda.dot(&(nj * &v))));
    -(cost.q() * x) - sys.a().transpose() * lambda + w
}

/// Right side of the true state equation under `u = −R⁻¹(B+N(x))ᵀλ`.
pub fn extremal_state_rhs(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
) -> DVector<f64> {
    let bx = sys.input_matrix(x);
    sys.a() * x - &bx * cost.r_inv() * bx.transpose() * lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::vector;
    use crate::problems;

    #[test]
    fn linear_plant_freezes_to_itself() {
        let p = problems::harmonic_oscillator_default();
        let x = vector(&[0.3, -1.2]);
        let l = vector(&[2.0, 0.7]);
        for rule in [FreezeRule::Extremal, FreezeRule::Symmetric, FreezeRule::Picard] {
            let f = freeze_node(&p.sys, &p.cost, &x, &l, rule, false);
            assert_eq!(f.a, *p.sys.a());
            let brb = p.sys.b() * p.sys.b().transpose();
            assert!((f.m - brb).amax() < 1e-15);
        }
    }

    #[test]
    fn zero_costate_keeps_drift() {
        let p = problems::bloch(0.5, 1.0);
        let x = vector(&[0.1, 0.5, 0.8]);
        for rule in [FreezeRule::Extremal, FreezeRule::Symmetric] {
            let f = freeze_node(&p.sys, &p.cost, &x, &vector(&[0.0; 3]), rule, false);
            assert_eq!(f.a, *p.sys.a());
        }
    }

    #[test]
    fn extremal_rule_matches_both_canonical_equations() {
        let p = problems::population();
        let x = vector(&[0.7]);
        let l = vector(&[-1.3]);
        let f = freeze_node(&p.sys, &p.cost, &x, &l, FreezeRule::Extremal, false);
        let state = &f.a * &x - &f.m * &l;
        assert!((state - extremal_state_rhs(&p.sys, &p.cost, &x, &l)).amax() < 1e-14);
        let costate = -(&f.q * &x) - f.a.transpose() * &l;
        assert!((costate - pontryagin_costate_rhs(&p.sys, &p.cost, &x, &l)).amax() < 1e-14);
    }
}
