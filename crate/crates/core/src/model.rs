//! Bilinear plants, quadratic costs, boundary conditions and time grids.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::ode::{Path, VectorPath};

pub type Trajectory = VectorPath;
pub type ControlSignal = VectorPath;
pub type CostateTrajectory = VectorPath;

/// Uniform grid `t_i = i·tf/n_t`, `i = 0..=n_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    tf: f64,
    n_t: usize,
}

impl TimeGrid {
    pub fn new(tf: f64, n_t: usize) -> Result<Self> {
        if !(tf.is_finite() && tf > 0.0) {
            return Err(Error::InvalidInput {
                what: "tf",
                reason: format!("horizon must be positive and finite, got {tf}"),
            });
        }
        if n_t < 2 {
            return Err(Error::InvalidInput {
                what: "n_t",
                reason: format!("need at least 2 intervals, got {n_t}"),
            });
        }
        Ok(Self { tf, n_t })
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    /// Number of nodes, `n_t + 1`.
    pub fn len(&self) -> usize {
        self.n_t + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.tf / self.n_t as f64
    }

    /// Node time; the last node is `tf` exactly.
    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_t {
            self.tf
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.t(i))
    }
}

/// `ẋ = Ax + Bu + (Σⱼ xⱼNⱼ)u`, stored in the state-side form `{Nⱼ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    n_mats: Vec<DMatrix<f64>>,
    b_ctrl: Vec<DMatrix<f64>>,
}

impl BilinearSystem {
    /// From drift `A` (n×n), input `B` (n×m) and state-side factors `Nⱼ` (n of them, each n×m).
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, n_mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dims("A", "square, n >= 1", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::dims(
                "B",
                format!("{n}xm with m >= 1"),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        let m = b.ncols();
        if n_mats.len() != n {
            return Err(Error::dims("number of N_j", n, n_mats.len()));
        }
        for nj in &n_mats {
            if nj.nrows() != n || nj.ncols() != m {
                return Err(Error::dims(
                    "N_j",
                    format!("{n}x{m}"),
                    format!("{}x{}", nj.nrows(), nj.ncols()),
                ));
            }
        }
        let all_finite = linalg::all_finite_mat(&a)
            && linalg::all_finite_mat(&b)
            && n_mats.iter().all(linalg::all_finite_mat);
        if !all_finite {
            return Err(Error::InvalidInput {
                what: "system matrices",
                reason: "non-finite entry".into(),
            });
        }
        let b_ctrl = control_side_from_state_side(&n_mats)?;
        Ok(Self { a, b, n_mats, b_ctrl })
    }

    /// From control-side factors `Bᵢ` (m of them, each n×n).
    pub fn from_control_side(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        b_ctrl: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n_mats = state_side_from_control_side(&b_ctrl)?;
        Self::new(a, b, n_mats)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn n_mats(&self) -> &[DMatrix<f64>] {
        &self.n_mats
    }

    pub fn b_ctrl(&self) -> &[DMatrix<f64>] {
        &self.b_ctrl
    }

    pub fn is_linear(&self) -> bool {
        self.n_mats.iter().all(|m| m.iter().all(|v| *v == 0.0))
    }

    /// True when every generator `A + Σuᵢ Bᵢ` is skew and `B = 0`, so the
    /// dynamics preserve the Euclidean norm (Bloch-type systems).
    pub fn is_norm_preserving(&self) -> bool {
        let tol = 1e-14 * (1.0 + linalg::max_abs(&self.a));
        linalg::max_abs(&self.b) == 0.0
            && linalg::is_skew(&self.a, tol)
            && self.b_ctrl.iter().all(|bi| linalg::is_skew(bi, tol))
    }

    /// `N(x) = Σⱼ xⱼNⱼ` (n×m).
    pub fn bilinear_input(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.n(), self.m());
        for (xj, nj) in x.iter().zip(&self.n_mats) {
            if *xj != 0.0 {
                out += nj * *xj;
            }
        }
        out
    }

    /// `B + N(x)`.
    pub fn input_matrix(&self, x: &DVector<f64>) -> DMatrix<f64> {
        &self.b + self.bilinear_input(x)
    }

    /// `A + Σᵢ uᵢBᵢ`, the state generator under a frozen control value.
    pub fn generator(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let mut g = self.a.clone();
        for (ui, bi) in u.iter().zip(&self.b_ctrl) {
            if *ui != 0.0 {
                g += bi * *ui;
            }
        }
        g
    }

    pub fn check_state(&self, x: &DVector<f64>, what: &'static str) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::dims(what, self.n(), x.len()));
        }
        Ok(())
    }

    pub fn check_control(&self, u: &DVector<f64>) -> Result<()> {
        if u.len() != self.m() {
            return Err(Error::dims("control", self.m(), u.len()));
        }
        Ok(())
    }

    /// `Ax + Bu + N(x)u`.
    pub fn eval_rhs(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_state(x, "state")?;
        self.check_control(u)?;
        Ok(self.rhs_unchecked(x, u))
    }

    pub(crate) fn rhs_unchecked(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + self.input_matrix(x) * u
    }
}

/// `Nⱼ[k,i] = Bᵢ[k,j]`.
pub fn state_side_from_control_side(b_ctrl: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let m = b_ctrl.len();
    if m == 0 {
        return Err(Error::dims("number of B_i", ">= 1", 0));
    }
    let n = b_ctrl[0].nrows();
    for bi in b_ctrl {
        if bi.nrows() != n || bi.ncols() != n {
            return Err(Error::dims("B_i", format!("{n}x{n}"), format!("{}x{}", bi.nrows(), bi.ncols())));
        }
    }
    Ok((0..n)
        .map(|j| DMatrix::from_fn(n, m, |k, i| b_ctrl[i][(k, j)]))
        .collect())
}

/// Inverse of [`state_side_from_control_side`]: `Bᵢ[k,j] = Nⱼ[k,i]`.
pub fn control_side_from_state_side(n_mats: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let n = n_mats.len();
    if n == 0 {
        return Err(Error::dims("number of N_j", ">= 1", 0));
    }
    let m = n_mats[0].ncols();
    for nj in n_mats {
        if nj.nrows() != n || nj.ncols() != m {
            return Err(Error::dims("N_j", format!("{n}x{m}"), format!("{}x{}", nj.nrows(), nj.ncols())));
        }
    }
    Ok((0..m)
        .map(|i| DMatrix::from_fn(n, n, |k, j| n_mats[j][(k, i)]))
        .collect())
}

/// `J = ½∫(xᵀQx + uᵀRu)dt` weights and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticCost {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    r_inv_sqrt: DMatrix<f64>,
    tf: f64,
}

impl QuadraticCost {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, tf: f64) -> Result<Self> {
        linalg::check_psd(&q, "Q")?;
        let (r_inv, r_inv_sqrt) = linalg::spd_inverse_and_inv_sqrt(&r)?;
        if !(tf.is_finite() && tf > 0.0) {
            return Err(Error::InvalidInput {
                what: "tf",
                reason: format!("horizon must be positive and finite, got {tf}"),
            });
        }
        Ok(Self {
            q: linalg::symmetrize(&q),
            r: linalg::symmetrize(&r),
            r_inv,
            r_inv_sqrt,
            tf,
        })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    pub fn r_inv_sqrt(&self) -> &DMatrix<f64> {
        &self.r_inv_sqrt
    }

    pub fn tf(&self) -> f64 {
        self.tf
    }

    pub fn q_is_zero(&self) -> bool {
        self.q.iter().all(|v| *v == 0.0)
    }

    pub fn check_against(&self, sys: &BilinearSystem) -> Result<()> {
        if self.q.nrows() != sys.n() {
            return Err(Error::dims("Q", format!("{0}x{0}", sys.n()), format!("{0}x{0}", self.q.nrows())));
        }
        if self.r.nrows() != sys.m() {
            return Err(Error::dims("R", format!("{0}x{0}", sys.m()), format!("{0}x{0}", self.r.nrows())));
        }
        Ok(())
    }

    /// Running cost `½(xᵀQx + uᵀRu)`.
    pub fn running(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryConditions {
    pub x0: DVector<f64>,
    pub xf: DVector<f64>,
}

impl BoundaryConditions {
    pub fn new(x0: DVector<f64>, xf: DVector<f64>) -> Result<Self> {
        if x0.len() != xf.len() {
            return Err(Error::dims("boundary conditions", x0.len(), xf.len()));
        }
        if !(linalg::all_finite_vec(&x0) && linalg::all_finite_vec(&xf)) {
            return Err(Error::InvalidInput {
                what: "boundary conditions",
                reason: "non-finite entry".into(),
            });
        }
        Ok(Self { x0, xf })
    }

    pub fn check_against(&self, sys: &BilinearSystem) -> Result<()> {
        sys.check_state(&self.x0, "x0")?;
        sys.check_state(&self.xf, "xf")
    }
}

/// `H = ½(xᵀQx + uᵀRu) + λᵀ[Ax + (B + N(x))u]`.
pub fn hamiltonian(
    sys: &BilinearSystem,
    cost: &QuadraticCost,
    x: &DVector<f64>,
    u: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<f64> {
    sys.check_state(x, "state")?;
    sys.check_state(lambda, "costate")?;
    sys.check_control(u)?;
    cost.check_against(sys)?;
    Ok(cost.running(x, u) + lambda.dot(&sys.rhs_unchecked(x, u)))
}

/// Trapezoidal quadrature of node samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        k => dt * (0.5 * (values[0] + values[k - 1]) + values[1..k - 1].iter().sum::<f64>()),
    }
}

/// Unchecked helper for vectors built from slices.
pub fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Row-major matrix literal helper.
pub fn matrix(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub fn straight_line(grid: TimeGrid, x0: &DVector<f64>, xf: &DVector<f64>) -> Trajectory {
    let tf = grid.tf();
    Path::from_fn(grid, |i, t| {
        if i == grid.n_t() {
            xf.clone()
        } else {
            x0 + (xf - x0) * (t / tf)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems;

    #[test]
    fn bloch_conversion_matches_known_factors() {
        let sys = problems::bloch_system(0.5);
        let n = sys.n_mats();
        assert_eq!(n[0], matrix(3, 2, &[0.0, 0.0, 0.0, 0.0, -1.0, 0.0]));
        assert_eq!(n[1], matrix(3, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(n[2], matrix(3, 2, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]));
    }

    #[test]
    fn zero_factors_convert_to_zero() {
        let z = vec![DMatrix::zeros(3, 3); 2];
        let n = state_side_from_control_side(&z).unwrap();
        assert_eq!(n.len(), 3);
        assert!(n.iter().all(|m| m.shape() == (3, 2) && m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn conversion_rejects_non_square() {
        let bad = vec![DMatrix::zeros(3, 3), DMatrix::zeros(3, 2)];
        assert!(matches!(
            state_side_from_control_side(&bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rhs_examples() {
        let bloch = problems::bloch_system(0.5);
        let r = bloch.eval_rhs(&vector(&[0.0, 0.0, 1.0]), &vector(&[0.0, 0.0])).unwrap();
        assert_eq!(r, vector(&[0.0, 0.0, 0.0]));
        let r = bloch.eval_rhs(&vector(&[1.0, 0.0, 0.0]), &vector(&[0.2, -0.1])).unwrap();
        assert!((r - vector(&[0.0, 0.5, -0.2])).amax() < 1e-15);
        let pop = problems::population_system();
        assert_eq!(pop.eval_rhs(&vector(&[2.0]), &vector(&[3.0])).unwrap()[0], 6.0);
        assert!(pop.eval_rhs(&vector(&[2.0, 1.0]), &vector(&[3.0])).is_err());
    }

    #[test]
    fn hamiltonian_examples() {
        let pop = problems::population_system();
        let c = QuadraticCost::new(matrix(1, 1, &[1.0]), matrix(1, 1, &[1.0]), 2.0).unwrap();
        let h = hamiltonian(&pop, &c, &vector(&[1.0]), &vector(&[0.0]), &vector(&[1.0])).unwrap();
        assert_eq!(h, 0.5);
        let h0 = hamiltonian(&pop, &c, &vector(&[0.0]), &vector(&[0.0]), &vector(&[7.0])).unwrap();
        assert_eq!(h0, 0.0);
        let bloch = problems::bloch_system(0.5);
        let cb = QuadraticCost::new(DMatrix::zeros(3, 3), DMatrix::identity(2, 2), 1.0).unwrap();
        let h = hamiltonian(
            &bloch,
            &cb,
            &vector(&[0.0, 0.0, 1.0]),
            &vector(&[1.0, 0.0]),
            &vector(&[1.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!((h - 1.5).abs() < 1e-15);
    }

    #[test]
    fn grid_last_node_exact() {
        let g = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(g.t(7), 0.3);
        assert_eq!(g.len(), 8);
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn trapezoid_constant() {
        assert!((trapezoid(&[0.5; 11], 0.2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bloch_is_norm_preserving_population_is_not() {
        assert!(problems::bloch_system(0.5).is_norm_preserving());
        assert!(!problems::population_system().is_norm_preserving());
    }
}
