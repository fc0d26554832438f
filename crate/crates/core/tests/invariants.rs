//! Property tests for the structural identities of the model, the sweep and
//! the ensemble synthesis.

use bilinear_sweep::ensemble::{sample_parameters, svd_synthesize, Axis};
use bilinear_sweep::model::state_side_from_control_side;
use bilinear_sweep::ode::Path;
use bilinear_sweep::solver::freeze::{freeze_node, FreezeRule};
use bilinear_sweep::sweep::{self, FrozenLinearSystem};
use bilinear_sweep::validation::{costate_identity_defect, state_identity_defect};
use bilinear_sweep::{BilinearSystem, BoundaryConditions, QuadraticCost, TimeGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn mat(r: usize, c: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
}

fn vec_of(n: usize, scale: f64) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-scale..scale, n).prop_map(DVector::from_vec)
}

/// Random control-side bilinear system with a state and a costate sample.
fn system_point() -> impl Strategy<Value = (BilinearSystem, DVector<f64>, DVector<f64>, DVector<f64>)> {
    (1usize..=4, 1usize..=3).prop_flat_map(|(n, m)| {
        (
            mat(n, n),
            mat(n, m),
            prop::collection::vec(mat(n, n), m),
            vec_of(n, 3.0),
            vec_of(n, 3.0),
            vec_of(m, 3.0),
        )
            .prop_map(|(a, b, bs, x, l, u)| (BilinearSystem::from_control_side(a, b, bs).unwrap(), x, l, u))
    })
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    mat(n, n).prop_map(move |g| &g * g.transpose() + DMatrix::identity(n, n) * 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_side_form_matches_control_side((sys, x, _l, u) in system_point()) {
        let lhs = sys.b_ctrl().iter().zip(u.iter()).fold(DVector::zeros(sys.n()), |acc, (bi, ui)| acc + bi * &x * *ui);
        let rhs = sys.bilinear_input(&x) * &u;
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + x.norm() * u.norm()));
        let round = state_side_from_control_side(sys.b_ctrl()).unwrap();
        prop_assert_eq!(round.as_slice(), sys.n_mats());
    }

    #[test]
    fn rhs_is_affine_in_the_control((sys, x, _l, u) in system_point()) {
        let f0 = sys.eval_rhs(&x, &DVector::zeros(sys.m())).unwrap();
        let f1 = sys.eval_rhs(&x, &u).unwrap();
        let f2 = sys.eval_rhs(&x, &(&u * 2.0)).unwrap();
        prop_assert!((&f2 - &f1 * 2.0 + &f0).norm() <= 1e-12 * (1.0 + f1.norm()));
    }

    #[test]
    fn extremal_freeze_reproduces_canonical_equations((sys, x, l, _u) in system_point(), q_diag in 0.0..2.0f64) {
        let n = sys.n();
        let cost = QuadraticCost::new(DMatrix::identity(n, n) * q_diag, DMatrix::identity(sys.m(), sys.m()), 1.0).unwrap();
        let node = freeze_node(&sys, &cost, &x, &l, FreezeRule::Extremal, false);
        let scale = 1.0 + x.norm().powi(2) * l.norm();
        prop_assert!(state_identity_defect(&sys, &cost, &node, &x, &l) <= 1e-12 * scale);
        prop_assert!(costate_identity_defect(&sys, &cost, &node, &x, &l) <= 1e-12 * scale);
        prop_assert!((&node.m - node.m.transpose()).amax() <= 1e-12 * (1.0 + node.m.amax()));
    }

    #[test]
    fn sweep_terminal_conditions_and_symmetry(
        (a, g, q, x0, xf) in (2usize..=3).prop_flat_map(|n| (mat(n, n), mat(n, n), spd(n), vec_of(n, 1.0), vec_of(n, 1.0)))
    ) {
        let n = a.nrows();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        // Full-rank M keeps P(0) invertible.
        let m = &g * g.transpose() + DMatrix::identity(n, n);
        let frozen = FrozenLinearSystem::new(Path::constant(grid, a), Path::constant(grid, m), Path::constant(grid, q)).unwrap();
        let bc = BoundaryConditions::new(x0, xf).unwrap();
        let sol = sweep::sweep(&frozen, &bc, false).unwrap();
        prop_assert_eq!(sol.k_path.last().amax(), 0.0);
        prop_assert_eq!(sol.s_path.last(), &DMatrix::identity(n, n));
        prop_assert_eq!(sol.p_path.last().amax(), 0.0);
        prop_assert!((sol.lambda_path.last() - &sol.nu).amax() <= 1e-12 * (1.0 + sol.nu.amax()));
        for (k, p) in sol.k_path.iter().zip(sol.p_path.iter()) {
            prop_assert!((k - k.transpose()).amax() <= 1e-10 * (1.0 + k.amax()));
            prop_assert!((p - p.transpose()).amax() <= 1e-10 * (1.0 + p.amax()));
        }
        // Ṗ = SᵀMS ⪰ 0 and P(tf) = 0, so P(0) ⪯ 0.
        let top = sol.p_path.first().clone().symmetric_eigen().eigenvalues.max();
        prop_assert!(top <= 1e-10);
    }

    #[test]
    fn trapezoid_weights_integrate_constants(lo in -5.0..0.0f64, width in 0.1..5.0f64, count in 2usize..60) {
        let g = sample_parameters(&[Axis::new(lo, lo + width, count)], None).unwrap();
        prop_assert_eq!(g.samples.len(), count);
        prop_assert!(g.weights.iter().all(|w| *w > 0.0));
        prop_assert!((g.measure() - width).abs() <= 1e-12 * (1.0 + width));
        prop_assert_eq!(g.samples[count - 1][0], lo + width);
    }

    #[test]
    fn truncated_synthesis_residual_bounds(
        (l, xi) in (2usize..8, 2usize..10).prop_flat_map(|(r, c)| (mat(r, c), vec_of(r, 1.0))),
        eps in 1e-6..0.5f64,
    ) {
        let Ok((svd, v)) = svd_synthesize(&l, &xi, eps, 1e-12) else {
            // Rank-deficient draws may leave the target unreachable.
            return Ok(());
        };
        prop_assert!(svd.partial_residual.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(svd.sigma.windows(2).all(|w| w[1] <= w[0]));
        let actual = (&xi - &l * &v).norm();
        prop_assert!((actual - svd.residual()).abs() <= 1e-9 * (1.0 + xi.norm()));
        prop_assert!(svd.residual() <= eps || svd.n_eps == svd.n_rank);
        // Minimum norm: no component outside the kept right singular vectors.
        let mut kept = DVector::zeros(v.len());
        for k in 0..svd.n_eps {
            let row = svd.v_t.row(k).transpose();
            kept += &row * row.dot(&v);
        }
        prop_assert!((kept - &v).norm() <= 1e-9 * (1.0 + v.norm()));
    }

    #[test]
    fn grid_endpoints_are_exact(tf in 0.01..100.0f64, n_t in 2usize..5000) {
        let g = TimeGrid::new(tf, n_t).unwrap();
        prop_assert_eq!(g.t(0), 0.0);
        prop_assert_eq!(g.t(n_t), tf);
        prop_assert_eq!(g.len(), n_t + 1);
    }
}
