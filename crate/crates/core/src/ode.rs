//! Fixed-step RK4 integration of vector and matrix ODEs on uniform grids,
//! node-sampled paths with linear interpolation, and transition matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::TimeGrid;

/// Values that RK4 can integrate: closed under `y + h·k` and checkable for
/// finiteness.
pub trait OdeValue: Clone {
    fn axpy(&self, h: f64, k: &Self) -> Self;
    fn lerp(&self, other: &Self, a: f64) -> Self;
    fn is_finite(&self) -> bool;
}

impl OdeValue for DVector<f64> {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }
    fn lerp(&self, other: &Self, a: f64) -> Self {
        self * (1.0 - a) + other * a
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

impl OdeValue for DMatrix<f64> {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }
    fn lerp(&self, other: &Self, a: f64) -> Self {
        self * (1.0 - a) + other * a
    }
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Values sampled at every node of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    grid: TimeGrid,
    values: Vec<T>,
}

pub type VectorPath = Path<DVector<f64>>;
pub type MatrixPath = Path<DMatrix<f64>>;

/// Fractional node positions closer than this to an integer snap to the node,
/// so that `t_i` computed as `i·dt` returns the stored sample exactly.
const NODE_SNAP: f64 = 1e-9;

impl<T: OdeValue> Path<T> {
    pub fn new(grid: TimeGrid, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::dims("path length", grid.len(), values.len()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(usize, f64) -> T) -> Self {
        let values = (0..grid.len()).map(|i| f(i, grid.t(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: TimeGrid, value: T) -> Self {
        Self {
            values: vec![value; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> &T {
        &self.values[0]
    }

    pub fn last(&self) -> &T {
        &self.values[self.values.len() - 1]
    }

    pub fn at(&self, i: usize) -> &T {
        &self.values[i]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.values.iter()
    }

    pub fn map<U: OdeValue>(&self, mut f: impl FnMut(usize, &T) -> U) -> Path<U> {
        Path {
            grid: self.grid,
            values: self.values.iter().enumerate().map(|(i, v)| f(i, v)).collect(),
        }
    }

    /// Sample at fractional node position `s = t/dt` without range checks
    /// beyond clamping; used inside integrators where `s` is known valid.
    pub fn at_position(&self, s: f64) -> T {
        let last = self.values.len() - 1;
        let r = s.round();
        if (s - r).abs() < NODE_SNAP {
            let i = (r.max(0.0) as usize).min(last);
            return self.values[i].clone();
        }
        let i = (s.floor().max(0.0) as usize).min(last - 1);
        let a = s - i as f64;
        self.values[i].lerp(&self.values[i + 1], a)
    }

    /// Linear interpolation at time `t`; exact at nodes.
    pub fn interpolate(&self, t: f64) -> Result<T> {
        let tf = self.grid.tf();
        let slack = NODE_SNAP * self.grid.dt();
        if !(t >= -slack && t <= tf + slack) {
            return Err(Error::OutOfRange { t, tf });
        }
        Ok(self.at_position(t / self.grid.dt()))
    }
}

impl<T> std::ops::Index<usize> for Path<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Classical RK4 over the uniform grid. `rhs` receives the fractional node
/// position `s` (time is `s·dt`) so that path-valued coefficients can be
/// sampled at half steps. In backward mode `y0` is the value at the last node.
pub fn rk4_integrate<T, F>(rhs: F, y0: T, grid: &TimeGrid, direction: Direction) -> Result<Path<T>>
where
    T: OdeValue,
    F: FnMut(f64, &T) -> T,
{
    rk4_integrate_guarded(rhs, y0, grid, direction, |_, _| Ok(()))
}

/// As [`rk4_integrate`], calling `guard(t, y)` after every accepted step so
/// callers can stop early (for example on Riccati blow-up).
pub fn rk4_integrate_guarded<T, F, G>(
    mut rhs: F,
    y0: T,
    grid: &TimeGrid,
    direction: Direction,
    mut guard: G,
) -> Result<Path<T>>
where
    T: OdeValue,
    F: FnMut(f64, &T) -> T,
    G: FnMut(f64, &T) -> Result<()>,
{
    let n = grid.n_t();
    let dt = grid.dt();
    if !y0.is_finite() {
        return Err(Error::NonFiniteState {
            what: "initial value",
            t: match direction {
                Direction::Forward => 0.0,
                Direction::Backward => grid.tf(),
            },
        });
    }
    let mut out: Vec<Option<T>> = vec![None; n + 1];
    let (start, sign) = match direction {
        Direction::Forward => (0usize, 1.0),
        Direction::Backward => (n, -1.0),
    };
    let h = sign * dt;
    let mut y = y0;
    out[start] = Some(y.clone());
    for step in 0..n {
        let i = match direction {
            Direction::Forward => step,
            Direction::Backward => n - step,
        };
        let s = i as f64;
        let k1 = rhs(s, &y);
        let k2 = rhs(s + 0.5 * sign, &y.axpy(0.5 * h, &k1));
        let k3 = rhs(s + 0.5 * sign, &y.axpy(0.5 * h, &k2));
        let k4 = rhs(s + sign, &y.axpy(h, &k3));
        let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4);
        y = y.axpy(h / 6.0, &incr);
        let next = match direction {
            Direction::Forward => i + 1,
            Direction::Backward => i - 1,
        };
        let t = grid.t(next);
        if !y.is_finite() {
            return Err(Error::NonFiniteState { what: "ODE state", t });
        }
        guard(t, &y)?;
        out[next] = Some(y.clone());
    }
    let values = out.into_iter().map(|v| v.expect("every node visited")).collect();
    Path::new(*grid, values)
}

/// Forward RK4 where `rhs` also receives the index of the step being taken,
/// so piecewise-constant inputs can be held over whole intervals.
pub fn rk4_forward_stepwise<T, F>(mut rhs: F, y0: T, grid: &TimeGrid) -> Result<Path<T>>
where
    T: OdeValue,
    F: FnMut(usize, f64, &T) -> T,
{
    let dt = grid.dt();
    let mut y = y0;
    let mut out = Vec::with_capacity(grid.len());
    out.push(y.clone());
    for i in 0..grid.n_t() {
        let s = i as f64;
        let k1 = rhs(i, s, &y);
        let k2 = rhs(i, s + 0.5, &y.axpy(0.5 * dt, &k1));
        let k3 = rhs(i, s + 0.5, &y.axpy(0.5 * dt, &k2));
        let k4 = rhs(i, s + 1.0, &y.axpy(dt, &k3));
        y = y.axpy(dt / 6.0, &k1.axpy(2.0, &k2).axpy(2.0, &k3).axpy(1.0, &k4));
        if !y.is_finite() {
            return Err(Error::NonFiniteState {
                what: "ODE state",
                t: grid.t(i + 1),
            });
        }
        out.push(y.clone());
    }
    Path::new(*grid, out)
}

/// Φ(t_to, t_from) for Φ̇ = A(t)Φ, with A sampled from `a_path` and linearly
/// interpolated at half steps. Integrates backward when `to < from`.
pub fn transition_matrix(
    a_path: &MatrixPath,
    grid: &TimeGrid,
    from: usize,
    to: usize,
) -> Result<DMatrix<f64>> {
    if from > grid.n_t() || to > grid.n_t() {
        return Err(Error::OutOfRange {
            t: from.max(to) as f64 * grid.dt(),
            tf: grid.tf(),
        });
    }
    if a_path.len() != grid.len() {
        return Err(Error::dims("transition matrix coefficient path", grid.len(), a_path.len()));
    }
    let n = a_path.first().nrows();
    let mut phi = DMatrix::<f64>::identity(n, n);
    if from == to {
        return Ok(phi);
    }
    let sign = if to > from { 1.0 } else { -1.0 };
    let h = sign * grid.dt();
    let mut i = from;
    while i != to {
        let s = i as f64;
        let a0 = a_path.at_position(s);
        let am = a_path.at_position(s + 0.5 * sign);
        let a1 = a_path.at_position(s + sign);
        let k1 = &a0 * &phi;
        let k2 = &am * (&phi + &k1 * (0.5 * h));
        let k3 = &am * (&phi + &k2 * (0.5 * h));
        let k4 = &a1 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        i = if sign > 0.0 { i + 1 } else { i - 1 };
        if !OdeValue::is_finite(&phi) {
            return Err(Error::NonFiniteState {
                what: "transition matrix",
                t: grid.t(i),
            });
        }
    }
    Ok(phi)
}

/// Ψ(t_i) = Φ(0, t_i) for every node, from Ψ̇ = −ΨA, Ψ(0) = I.
pub fn inverse_transition_path(a_path: &MatrixPath) -> Result<MatrixPath> {
    let n = a_path.first().nrows();
    rk4_integrate(
        |s, psi: &DMatrix<f64>| -(psi * a_path.at_position(s)),
        DMatrix::identity(n, n),
        a_path.grid(),
        Direction::Forward,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rot() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
    }

    #[test]
    fn zero_rhs_keeps_constant() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let c = DVector::from_vec(vec![1.5, -2.0]);
        let p = rk4_integrate(|_, y: &DVector<f64>| y * 0.0, c.clone(), &g, Direction::Forward)
            .unwrap();
        assert!(p.iter().all(|v| *v == c));
    }

    #[test]
    fn rotation_quarter_turn() {
        let g = TimeGrid::new(PI / 2.0, 100).unwrap();
        let a = rot();
        let p = rk4_integrate(
            |_, y: &DVector<f64>| &a * y,
            DVector::from_vec(vec![1.0, 0.0]),
            &g,
            Direction::Forward,
        )
        .unwrap();
        let end = p.last();
        assert!((end[0]).abs() < 1e-6 && (end[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_then_forward_returns() {
        let g = TimeGrid::new(2.0, 400).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -1.2, 0.1]);
        let y_end = DVector::from_vec(vec![0.4, -0.7]);
        let back = rk4_integrate(|_, y: &DVector<f64>| &a * y, y_end.clone(), &g, Direction::Backward)
            .unwrap();
        let fwd = rk4_integrate(|_, y: &DVector<f64>| &a * y, back.first().clone(), &g, Direction::Forward)
            .unwrap();
        assert!((fwd.last() - y_end).amax() < 1e-8);
    }

    #[test]
    fn nonfinite_is_reported() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let r = rk4_integrate(
            |_, y: &DVector<f64>| y.map(|v| v * v * 1e300),
            DVector::from_vec(vec![1e10]),
            &g,
            Direction::Forward,
        );
        assert!(matches!(r, Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn interpolation_exact_at_nodes_and_bounds() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        let p = Path::from_fn(g, |i, t| DVector::from_vec(vec![t * t, i as f64]));
        for i in 0..g.len() {
            assert_eq!(p.interpolate(g.t(i)).unwrap(), p[i]);
        }
        assert_eq!(p.interpolate(3.0).unwrap(), *p.last());
        assert!(matches!(p.interpolate(3.1), Err(Error::OutOfRange { .. })));
        assert!(matches!(p.interpolate(-0.1), Err(Error::OutOfRange { .. })));
        let lin = Path::from_fn(g, |_, t| DVector::from_vec(vec![2.0 * t + 1.0]));
        let mid = lin.interpolate(0.5 * (g.t(2) + g.t(3))).unwrap();
        assert!((mid[0] - 0.5 * (lin[2][0] + lin[3][0])).abs() < 1e-14);
    }

    #[test]
    fn transition_identity_and_exponential() {
        let g = TimeGrid::new(1.5, 300).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.2, -1.0, 0.7, -0.4]);
        let ap = Path::constant(g, a.clone());
        assert_eq!(transition_matrix(&ap, &g, 40, 40).unwrap(), DMatrix::identity(2, 2));
        let phi = transition_matrix(&ap, &g, 30, 270).unwrap();
        let exact = (&a * (g.t(270) - g.t(30))).exp();
        assert!((phi - exact).amax() < 1e-8);
        let back = transition_matrix(&ap, &g, 300, 0).unwrap();
        assert!((back - (&a * -1.5).exp()).amax() < 1e-8);
    }

    #[test]
    fn inverse_path_matches_negative_exponential() {
        let g = TimeGrid::new(2.0, 400).unwrap();
        let a = rot();
        let psi = inverse_transition_path(&Path::constant(g, a.clone())).unwrap();
        assert!((psi.last() - (&a * -2.0).exp()).amax() < 1e-9);
    }
}
