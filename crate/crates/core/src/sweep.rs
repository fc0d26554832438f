//! Fixed-endpoint sweep for a time-varying linear Hamiltonian system
//!
//! ```text
//! ẋ = Ãx − Mλ,   λ̇ = −Q̃x − Ãᵀλ,   M = B̃R⁻¹B̃ᵀ
//! ```
//!
//! with `λ = Kx + Sν`, `K(tf) = 0`, `S(tf) = I`, `P(tf) = 0` and the
//! endpoint map `x_f = Sᵀ(t)x(t) + P(t)ν`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BoundaryConditions, CostateTrajectory, TimeGrid, Trajectory};
use crate::ode::{rk4_integrate, rk4_integrate_guarded, Direction, MatrixPath, Path};

/// ‖K‖ beyond which the Riccati solution is treated as escaped.
pub const FINITE_ESCAPE: f64 = 1e12;
/// cond(P(0)) beyond which the frozen system is declared uncontrollable.
pub const MAX_COND_P0: f64 = 1e12;

/// Node-sampled coefficients of the frozen linear problem.
#[derive(Debug, Clone)]
pub struct FrozenLinearSystem {
    pub a_path: MatrixPath,
    /// `B̃R⁻¹B̃ᵀ` per node, symmetric.
    pub m_path: MatrixPath,
    /// State weight per node; constant unless the freeze rule moves
    /// costate-quadratic terms into it.
    pub q_path: MatrixPath,
    /// Explicit input factor `B̃`, when one exists.
    pub b_path: Option<MatrixPath>,
}

impl FrozenLinearSystem {
    pub fn new(a_path: MatrixPath, m_path: MatrixPath, q_path: MatrixPath) -> Result<Self> {
        let grid = *a_path.grid();
        if *m_path.grid() != grid || *q_path.grid() != grid {
            return Err(Error::dims("frozen paths", "one common grid", "different grids"));
        }
        let n = a_path.first().nrows();
        for (name, p) in [("A~", &a_path), ("BR^-1B^T", &m_path), ("Q~", &q_path)] {
            if p.iter().any(|m| m.shape() != (n, n)) {
                return Err(Error::dims(name, format!("{n}x{n} per node"), "other"));
            }
        }
        Ok(Self {
            a_path,
            m_path,
            q_path,
            b_path: None,
        })
    }

    /// Constant coefficients with `M = BR⁻¹Bᵀ`.
    pub fn time_invariant(
        grid: TimeGrid,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        r_inv: &DMatrix<f64>,
        q: &DMatrix<f64>,
    ) -> Result<Self> {
        let m = linalg::symmetrize(&(b * r_inv * b.transpose()));
        let mut f = Self::new(
            Path::constant(grid, a.clone()),
            Path::constant(grid, m),
            Path::constant(grid, q.clone()),
        )?;
        f.b_path = Some(Path::constant(grid, b.clone()));
        Ok(f)
    }

    pub fn grid(&self) -> &TimeGrid {
        self.a_path.grid()
    }

    pub fn n(&self) -> usize {
        self.a_path.first().nrows()
    }

    pub fn q_is_zero(&self) -> bool {
        self.q_path.iter().all(|q| q.iter().all(|v| *v == 0.0))
    }

    /// Largest per-node asymmetry of the `M` path.
    pub fn m_asymmetry(&self) -> f64 {
        self.m_path.iter().map(linalg::asymmetry).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSolution {
    pub k_path: MatrixPath,
    pub s_path: MatrixPath,
    pub p_path: MatrixPath,
    pub nu: DVector<f64>,
    pub x_path: Trajectory,
    pub lambda_path: CostateTrajectory,
    pub cond_p0: f64,
    /// ‖x(tf) − x_f‖₂ of the closed-loop forward pass.
    pub terminal_defect: f64,
}

impl SweepSolution {
    /// `S(t)ν` per node.
    pub fn s_nu(&self) -> Trajectory {
        self.s_path.map(|_, s| s * &self.nu)
    }
}

/// `K̇ = −Q̃ − ÃᵀK − KÃ + KMK`, `K(tf) = 0`, symmetrized per node.
pub fn riccati_backward(frozen: &FrozenLinearSystem) -> Result<MatrixPath> {
    let n = frozen.n();
    let grid = *frozen.grid();
    let path = rk4_integrate_guarded(
        |s, k: &DMatrix<f64>| {
            let a = frozen.a_path.at_position(s);
            let m = frozen.m_path.at_position(s);
            let q = frozen.q_path.at_position(s);
            -q - a.transpose() * k - k * &a + k * m * k
        },
        DMatrix::zeros(n, n),
        &grid,
        Direction::Backward,
        |t, k| {
            let norm = linalg::max_col_sum(k);
            if norm > FINITE_ESCAPE {
                Err(Error::FiniteEscape { t, norm })
            } else {
                Ok(())
            }
        },
    )
    .map_err(|e| match e {
        Error::NonFiniteState { t, .. } => Error::FiniteEscape {
            t,
            norm: f64::INFINITY,
        },
        e => e,
    })?;
    Ok(path.map(|_, k| linalg::symmetrize(k)))
}

/// The all-zero Riccati path used when `Q̃ ≡ 0`.
pub fn trivial_riccati(frozen: &FrozenLinearSystem) -> MatrixPath {
    let n = frozen.n();
    Path::constant(*frozen.grid(), DMatrix::zeros(n, n))
}

/// `Ṡ = −(Ãᵀ − KM)S`, `S(tf) = I`.
pub fn s_backward(frozen: &FrozenLinearSystem, k_path: &MatrixPath) -> Result<MatrixPath> {
    let n = frozen.n();
    rk4_integrate(
        |s, sm: &DMatrix<f64>| {
            let a = frozen.a_path.at_position(s);
            let m = frozen.m_path.at_position(s);
            let k = k_path.at_position(s);
            -(a.transpose() - k * m) * sm
        },
        DMatrix::identity(n, n),
        frozen.grid(),
        Direction::Backward,
    )
    .map_err(|e| relabel(e, "S transport equation"))
}

/// `Ṗ = SᵀMS`, `P(tf) = 0`, symmetrized per node.
pub fn p_backward(frozen: &FrozenLinearSystem, s_path: &MatrixPath) -> Result<MatrixPath> {
    let n = frozen.n();
    let path = rk4_integrate(
        |s, _p: &DMatrix<f64>| {
            let sm = s_path.at_position(s);
            let m = frozen.m_path.at_position(s);
            sm.transpose() * m * sm
        },
        DMatrix::zeros(n, n),
        frozen.grid(),
        Direction::Backward,
    )
    .map_err(|e| relabel(e, "P endpoint-map equation"))?;
    Ok(path.map(|_, p| linalg::symmetrize(p)))
}

/// `ν = P(0)⁻¹(x_f − Sᵀ(0)x₀)` with a condition estimate of `P(0)`.
pub fn solve_multiplier(
    p0: &DMatrix<f64>,
    s0: &DMatrix<f64>,
    bc: &BoundaryConditions,
) -> Result<(DVector<f64>, f64)> {
    let n = p0.nrows();
    if p0.shape() != (n, n) || s0.shape() != (n, n) || bc.x0.len() != n {
        return Err(Error::dims("multiplier system", n, bc.x0.len()));
    }
    let cond = linalg::condition_number(p0);
    if !(cond <= MAX_COND_P0) {
        return Err(Error::NotControllable { cond });
    }
    let rhs = &bc.xf - s0.transpose() * &bc.x0;
    let nu = p0
        .clone()
        .full_piv_lu()
        .solve(&rhs)
        .ok_or(Error::NotControllable { cond })?;
    Ok((nu, cond))
}

/// `ẋ = Ãx − M(Kx + Sν)` forward from `x₀`.
pub fn closed_loop_forward(
    frozen: &FrozenLinearSystem,
    k_path: &MatrixPath,
    s_path: &MatrixPath,
    nu: &DVector<f64>,
    x0: &DVector<f64>,
) -> Result<Trajectory> {
    if x0.len() != frozen.n() || nu.len() != frozen.n() {
        return Err(Error::dims("closed-loop initial state", frozen.n(), x0.len()));
    }
    rk4_integrate(
        |s, x: &DVector<f64>| {
            let a = frozen.a_path.at_position(s);
            let m = frozen.m_path.at_position(s);
            let k = k_path.at_position(s);
            let sm = s_path.at_position(s);
            &a * x - m * (k * x + sm * nu)
        },
        x0.clone(),
        frozen.grid(),
        Direction::Forward,
    )
    .map_err(|e| relabel(e, "closed-loop state"))
}

/// `λ(tᵢ) = K(tᵢ)x(tᵢ) + S(tᵢ)ν`.
pub fn reconstruct_costate(
    k_path: &MatrixPath,
    s_path: &MatrixPath,
    nu: &DVector<f64>,
    x_path: &Trajectory,
) -> Result<CostateTrajectory> {
    if k_path.len() != x_path.len() || s_path.len() != x_path.len() {
        return Err(Error::dims("costate reconstruction paths", x_path.len(), k_path.len()));
    }
    if nu.len() != x_path.first().len() {
        return Err(Error::dims("multiplier", x_path.first().len(), nu.len()));
    }
    Ok(x_path.map(|i, x| &k_path[i] * x + &s_path[i] * nu))
}

/// One complete sweep. With `trivial_k` the Riccati integration is skipped
/// and `K ≡ 0` is used (valid when `Q̃ ≡ 0`).
pub fn sweep(
    frozen: &FrozenLinearSystem,
    bc: &BoundaryConditions,
    trivial_k: bool,
) -> Result<SweepSolution> {
    let k_path = if trivial_k {
        trivial_riccati(frozen)
    } else {
        riccati_backward(frozen)?
    };
    let s_path = s_backward(frozen, &k_path)?;
    let p_path = p_backward(frozen, &s_path)?;
    let (nu, cond_p0) = solve_multiplier(p_path.first(), s_path.first(), bc)?;
    let x_path = closed_loop_forward(frozen, &k_path, &s_path, &nu, &bc.x0)?;
    let lambda_path = reconstruct_costate(&k_path, &s_path, &nu, &x_path)?;
    let terminal_defect = (x_path.last() - &bc.xf).norm();
    Ok(SweepSolution {
        k_path,
        s_path,
        p_path,
        nu,
        x_path,
        lambda_path,
        cond_p0,
        terminal_defect,
    })
}

/// Largest deviation of `Sᵀ(t)x(t) + P(t)ν` from `x_f` over the nodes.
pub fn endpoint_map_defect(sol: &SweepSolution, xf: &DVector<f64>) -> f64 {
    (0..sol.x_path.len())
        .map(|i| (sol.s_path[i].transpose() * &sol.x_path[i] + &sol.p_path[i] * &sol.nu - xf).amax())
        .fold(0.0, f64::max)
}

fn relabel(e: Error, what: &'static str) -> Error {
    match e {
        Error::NonFiniteState { t, .. } => Error::NonFiniteState { what, t },
        e => e,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{matrix, vector};

    fn scalar_frozen(tf: f64, n_t: usize, a: f64, m: f64, q: f64) -> FrozenLinearSystem {
        let g = TimeGrid::new(tf, n_t).unwrap();
        FrozenLinearSystem::new(
            Path::constant(g, matrix(1, 1, &[a])),
            Path::constant(g, matrix(1, 1, &[m])),
            Path::constant(g, matrix(1, 1, &[q])),
        )
        .unwrap()
    }

    #[test]
    fn scalar_riccati_is_tanh() {
        let f = scalar_frozen(1.0, 1000, 0.0, 1.0, 1.0);
        let k = riccati_backward(&f).unwrap();
        assert!((k.first()[(0, 0)] - 1f64.tanh()).abs() < 1e-6);
        assert_eq!(*k.last(), DMatrix::zeros(1, 1));
    }

    #[test]
    fn zero_weight_gives_zero_riccati() {
        let f = scalar_frozen(1.0, 100, 0.3, 1.0, 0.0);
        let k = riccati_backward(&f).unwrap();
        assert!(k.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn escape_is_detected() {
        // K̇ = −1 − K² backward (M < 0) blows up near t = tf − π/2.
        let f = scalar_frozen(3.0, 3000, 0.0, -1.0, 1.0);
        assert!(matches!(riccati_backward(&f), Err(Error::FiniteEscape { .. })));
    }

    #[test]
    fn scalar_p_and_multiplier() {
        let f = scalar_frozen(2.0, 200, 0.0, 1.0, 0.0);
        let k = trivial_riccati(&f);
        let s = s_backward(&f, &k).unwrap();
        assert!(s.iter().all(|m| (m[(0, 0)] - 1.0).abs() < 1e-15));
        let p = p_backward(&f, &s).unwrap();
        assert!((p.first()[(0, 0)] + 2.0).abs() < 1e-8);
        let bc = BoundaryConditions::new(vector(&[1.0]), vector(&[1.0 / 3.0])).unwrap();
        let (nu, _) = solve_multiplier(&matrix(1, 1, &[-2.0]), &matrix(1, 1, &[1.0]), &bc).unwrap();
        assert!((nu[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_gives_zero_multiplier() {
        let s0 = matrix(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let x0 = vector(&[0.3, 0.8]);
        let bc = BoundaryConditions::new(x0.clone(), s0.transpose() * &x0).unwrap();
        let (nu, _) = solve_multiplier(&matrix(2, 2, &[-1.0, 0.2, 0.2, -2.0]), &s0, &bc).unwrap();
        assert!(nu.amax() < 1e-15);
    }

    #[test]
    fn singular_p_is_uncontrollable() {
        let bc = BoundaryConditions::new(vector(&[1.0]), vector(&[2.0])).unwrap();
        let r = solve_multiplier(&matrix(1, 1, &[0.0]), &matrix(1, 1, &[1.0]), &bc);
        assert!(matches!(r, Err(Error::NotControllable { .. })));
    }

    fn damped_oscillator(n_t: usize) -> (SweepSolution, BoundaryConditions) {
        let g = TimeGrid::new(1.0, n_t).unwrap();
        let a = matrix(2, 2, &[0.0, 1.0, -1.0, 0.2]);
        let b = matrix(2, 1, &[0.0, 1.0]);
        let f = FrozenLinearSystem::time_invariant(g, &a, &b, &matrix(1, 1, &[1.0]), &DMatrix::identity(2, 2))
            .unwrap();
        let bc = BoundaryConditions::new(vector(&[1.0, 0.0]), vector(&[0.0, 0.5])).unwrap();
        (sweep(&f, &bc, false).unwrap(), bc)
    }

    #[test]
    fn terminal_values_exact() {
        let (sol, bc) = damped_oscillator(200);
        assert_eq!(*sol.k_path.last(), DMatrix::zeros(2, 2));
        assert_eq!(*sol.s_path.last(), DMatrix::identity(2, 2));
        assert_eq!(*sol.p_path.last(), DMatrix::zeros(2, 2));
        assert_eq!(*sol.lambda_path.last(), sol.nu);
        assert!(sol.terminal_defect < 1e-5);
        assert!(endpoint_map_defect(&sol, &bc.xf) < 1e-5);
    }

    #[test]
    fn closed_loop_defect_is_second_order() {
        // Interpolated K and S at the half steps limit the forward pass to O(dt²).
        let (coarse, _) = damped_oscillator(200);
        let (fine, _) = damped_oscillator(400);
        let ratio = coarse.terminal_defect / fine.terminal_defect;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }
}
