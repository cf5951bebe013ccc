//! Squared-Wasserstein distances between discrete measures.
//!
//! [`exact_w2`] solves the transport linear program exactly and is meant as an
//! oracle for small instances. [`sinkhorn_w2`] is the entropic, log-domain
//! solver used everywhere else.

mod exact;
mod sinkhorn;

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{DensityField, Point};

pub use exact::{exact_w2, EXACT_CAPACITY};
pub use sinkhorn::{
    entropic_ot_value, grid_sinkhorn_w2, sinkhorn_duals, sinkhorn_w2, CostOperator, DenseCost, SeparableSqCost,
    SinkhornDuals, SinkhornOptions,
};

/// Tolerance on the unit total weight of a [`DiscreteMeasure`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Finitely supported probability measure in the plane.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != weights.len() {
            return Err(Error::Validation(format!(
                "measure needs matching, nonempty support and weights ({} vs {})",
                support.len(),
                weights.len()
            )));
        }
        if support.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::Validation("support points must be finite".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Validation("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Validation(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { support, weights })
    }

    /// Rescale nonnegative weights to unit mass first.
    pub fn normalized(support: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Validation(format!("weights must have positive finite sum, got {total}")));
        }
        Self::new(support, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn dirac(p: Point) -> Self {
        Self {
            support: vec![p],
            weights: vec![1.0],
        }
    }

    /// Node masses of a grid density as a measure on the grid nodes.
    pub fn from_density(density: &DensityField) -> Result<Self> {
        Self::normalized(density.grid().points(), density.masses())
    }

    pub fn support(&self) -> &[Point] {
        &self.support
    }
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Coupling between two measures and its transport cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    rows: usize,
    cols: usize,
    coupling: Vec<f64>,
    cost: f64,
}

impl TransportPlan {
    pub(crate) fn new(rows: usize, cols: usize, coupling: Vec<f64>, cost: f64) -> Self {
        debug_assert_eq!(coupling.len(), rows * cols);
        Self {
            rows,
            cols,
            coupling,
            cost,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    /// Row-major coupling matrix.
    pub fn coupling(&self) -> &[f64] {
        &self.coupling
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.cols + j]
    }
    /// `sum_ij coupling_ij * |x_i - y_j|^2`.
    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.coupling.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.coupling.chunks(self.cols) {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }

    /// Largest absolute deviation of either marginal from the given weights.
    pub fn marginal_error(&self, a: &[f64], b: &[f64]) -> f64 {
        let r = self.row_sums().iter().zip(a).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        r.max(c)
    }

    /// Nonzero entries as CSV `i,j,mass`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,mass")?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let m = self.get(i, j);
                if m != 0.0 {
                    writeln!(out, "{i},{j},{m}")?;
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sq_dist(x: Point, y: Point) -> f64 {
    let dx = x[0] - y[0];
    let dy = x[1] - y[1];
    dx * dx + dy * dy
}

/// Row-major matrix of squared Euclidean distances.
pub fn cost_matrix(a: &[Point], b: &[Point]) -> Vec<f64> {
    let mut c = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            c.push(sq_dist(*x, *y));
        }
    }
    c
}
