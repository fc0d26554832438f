//! Parameter grids with trapezoidal quadrature weights.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One axis of a tensor-product grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count }
    }

    fn check(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::BadSpec(format!(
                "interval [{}, {}] must be finite with lo < hi",
                self.lo, self.hi
            )));
        }
        if self.count < 2 {
            return Err(Error::BadSpec(format!("need at least 2 points per axis, got {}", self.count)));
        }
        Ok(())
    }

    /// Uniform nodes and trapezoid weights.
    fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let h = (self.hi - self.lo) / (self.count - 1) as f64;
        let nodes = (0..self.count)
            .map(|i| if i + 1 == self.count { self.hi } else { self.lo + i as f64 * h })
            .collect();
        let weights = (0..self.count)
            .map(|i| if i == 0 || i + 1 == self.count { 0.5 * h } else { h })
            .collect();
        (nodes, weights)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterGrid {
    pub samples: Vec<DVector<f64>>,
    pub weights: Vec<f64>,
    /// Denser grid used only to evaluate a synthesized control.
    pub eval_samples: Option<Vec<DVector<f64>>>,
}

fn tensor(axes: &[Axis]) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    if axes.is_empty() {
        return Err(Error::BadSpec("parameter set needs at least one axis".into()));
    }
    for a in axes {
        a.check()?;
    }
    let per_axis: Vec<(Vec<f64>, Vec<f64>)> = axes.iter().map(Axis::nodes).collect();
    let total: usize = axes.iter().map(|a| a.count).product();
    let mut samples = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    for flat in 0..total {
        // Last axis varies fastest.
        let mut rem = flat;
        let mut idx = vec![0usize; axes.len()];
        for d in (0..axes.len()).rev() {
            idx[d] = rem % axes[d].count;
            rem /= axes[d].count;
        }
        samples.push(DVector::from_iterator(axes.len(), idx.iter().enumerate().map(|(d, &i)| per_axis[d].0[i])));
        weights.push(idx.iter().enumerate().map(|(d, &i)| per_axis[d].1[i]).product());
    }
    Ok((samples, weights))
}

/// Uniform tensor grid over `axes` with trapezoidal weights, plus an
/// optional evaluation grid.
pub fn sample_parameters(axes: &[Axis], eval: Option<&[Axis]>) -> Result<ParameterGrid> {
    let (samples, weights) = tensor(axes)?;
    let eval_samples = match eval {
        Some(e) => {
            if e.len() != axes.len() {
                return Err(Error::BadSpec("evaluation grid dimension differs from design grid".into()));
            }
            Some(tensor(e)?.0)
        }
        None => None,
    };
    Ok(ParameterGrid {
        samples,
        weights,
        eval_samples,
    })
}

impl ParameterGrid {
    /// A single sample with unit weight; the ensemble then degenerates to one
    /// system.
    pub fn single(beta: DVector<f64>) -> Self {
        Self {
            samples: vec![beta],
            weights: vec![1.0],
            eval_samples: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }
}
