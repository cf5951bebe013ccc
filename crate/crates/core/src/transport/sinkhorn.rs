//! Log-domain Sinkhorn iterations with an eps-scaling schedule.

use rayon::prelude::*;

use super::{cost_matrix, DiscreteMeasure, TransportPlan};
use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Ground cost seen through the two soft-minimum reductions Sinkhorn needs.
///
/// `softmin_rows(g)_i = -eps * log sum_j exp((g_j - C_ij) / eps)` and the
/// column version is the same with the roles of `i` and `j` swapped.
pub trait CostOperator: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn cost(&self, i: usize, j: usize) -> f64;
    fn max_cost(&self) -> f64;
    fn softmin_rows(&self, g: &[f64], eps: f64, out: &mut [f64]);
    fn softmin_cols(&self, f: &[f64], eps: f64, out: &mut [f64]);
}

/// `log sum exp` that tolerates `-inf` entries and empty support.
fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Explicit row-major cost matrix.
#[derive(Debug, Clone)]
pub struct DenseCost {
    rows: usize,
    cols: usize,
    c: Vec<f64>,
    max: f64,
}

impl DenseCost {
    pub fn new(rows: usize, cols: usize, c: Vec<f64>) -> Result<Self> {
        if c.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(Error::Validation(format!("cost matrix has {} entries, expected {rows}x{cols}", c.len())));
        }
        let max = c.iter().fold(0.0_f64, |m, v| m.max(*v));
        Ok(Self { rows, cols, c, max })
    }

    pub fn between(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Self {
        let c = cost_matrix(a.support(), b.support());
        let max = c.iter().fold(0.0_f64, |m, v| m.max(*v));
        Self {
            rows: a.len(),
            cols: b.len(),
            c,
            max,
        }
    }
}

impl CostOperator for DenseCost {
    fn rows(&self) -> usize {
        self.rows
    }
    fn cols(&self) -> usize {
        self.cols
    }
    fn cost(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.cols + j]
    }
    fn max_cost(&self) -> f64 {
        self.max
    }
    fn softmin_rows(&self, g: &[f64], eps: f64, out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            let row = &self.c[i * self.cols..(i + 1) * self.cols];
            *o = -eps * log_sum_exp(row.iter().zip(g).map(|(c, gj)| (gj - c) / eps));
        });
    }
    fn softmin_cols(&self, f: &[f64], eps: f64, out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(j, o)| {
            let col = (0..self.rows).map(|i| (f[i] - self.c[i * self.cols + j]) / eps);
            *o = -eps * log_sum_exp(col);
        });
    }
}

/// `scale * |x - y|^2` between the nodes of a tensor grid, applied one axis at a time.
///
/// Node ordering matches [`Grid2D::index`]: `iy * nx + ix`.
#[derive(Debug, Clone)]
pub struct SeparableSqCost {
    xs: Vec<f64>,
    ys: Vec<f64>,
    scale: f64,
}

impl SeparableSqCost {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, scale: f64) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() || !(scale > 0.0) {
            return Err(Error::Validation("separable cost needs nonempty axes and positive scale".into()));
        }
        Ok(Self { xs, ys, scale })
    }

    pub fn on_grid(grid: &Grid2D, scale: f64) -> Self {
        Self {
            xs: (0..grid.nx()).map(|i| grid.x(i)).collect(),
            ys: (0..grid.ny()).map(|i| grid.y(i)).collect(),
            scale,
        }
    }

    fn softmin(&self, g: &[f64], eps: f64, out: &mut [f64]) {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let s = self.scale;
        // First pass: reduce over the x index of the source node for every (source row, target column).
        let mut partial = vec![0.0; nx * ny];
        partial.par_chunks_mut(nx).enumerate().for_each(|(jy, row)| {
            let gy = &g[jy * nx..(jy + 1) * nx];
            for (ix, r) in row.iter_mut().enumerate() {
                let x = self.xs[ix];
                *r = log_sum_exp(gy.iter().zip(&self.xs).map(|(gv, xj)| (gv - s * (x - xj) * (x - xj)) / eps));
            }
        });
        out.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
            let y = self.ys[iy];
            for (ix, o) in row.iter_mut().enumerate() {
                let terms = self
                    .ys
                    .iter()
                    .enumerate()
                    .map(|(jy, yj)| partial[jy * nx + ix] - s * (y - yj) * (y - yj) / eps);
                *o = -eps * log_sum_exp(terms);
            }
        });
    }
}

impl CostOperator for SeparableSqCost {
    fn rows(&self) -> usize {
        self.xs.len() * self.ys.len()
    }
    fn cols(&self) -> usize {
        self.rows()
    }
    fn cost(&self, i: usize, j: usize) -> f64 {
        let nx = self.xs.len();
        let dx = self.xs[i % nx] - self.xs[j % nx];
        let dy = self.ys[i / nx] - self.ys[j / nx];
        self.scale * (dx * dx + dy * dy)
    }
    fn max_cost(&self) -> f64 {
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        let (wx, wy) = (span(&self.xs), span(&self.ys));
        self.scale * (wx * wx + wy * wy)
    }
    fn softmin_rows(&self, g: &[f64], eps: f64, out: &mut [f64]) {
        self.softmin(g, eps, out);
    }
    fn softmin_cols(&self, f: &[f64], eps: f64, out: &mut [f64]) {
        // symmetric cost
        self.softmin(f, eps, out);
    }
}

/// Solver controls. `eps` is the target regularization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornOptions {
    pub eps: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Anneal geometrically (factor 0.5) from `max_cost / 10` down to `eps`.
    pub scaling: bool,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            tol: 1e-9,
            max_iter: 100_000,
            scaling: true,
        }
    }
}

impl SinkhornOptions {
    pub fn with_eps(eps: f64) -> Self {
        Self {
            eps,
            ..Self::default()
        }
    }
}

/// Converged dual potentials; the plan is `exp((f_i + g_j - C_ij) / eps)`.
#[derive(Debug, Clone)]
pub struct SinkhornDuals {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub eps: f64,
    pub iterations: usize,
    /// L1 violation of the row marginal at exit (columns are exact after each sweep).
    pub residual: f64,
}

impl SinkhornDuals {
    #[inline]
    pub fn plan_entry<C: CostOperator + ?Sized>(&self, cost: &C, i: usize, j: usize) -> f64 {
        ((self.f[i] + self.g[j] - cost.cost(i, j)) / self.eps).exp()
    }

    /// `sum_ij P_ij C_ij`, accumulated per row in parallel and summed in order.
    pub fn plan_cost<C: CostOperator + ?Sized>(&self, cost: &C) -> f64 {
        let cols = cost.cols();
        let per_row: Vec<f64> = (0..cost.rows())
            .into_par_iter()
            .map(|i| {
                if self.f[i] == f64::NEG_INFINITY {
                    return 0.0;
                }
                (0..cols)
                    .map(|j| {
                        let c = cost.cost(i, j);
                        let p = ((self.f[i] + self.g[j] - c) / self.eps).exp();
                        p * c
                    })
                    .sum()
            })
            .collect();
        per_row.iter().sum()
    }
}

fn check_inputs<C: CostOperator + ?Sized>(cost: &C, a: &[f64], b: &[f64], opts: &SinkhornOptions) -> Result<()> {
    if a.len() != cost.rows() || b.len() != cost.cols() {
        return Err(Error::Validation(format!(
            "marginal lengths {}x{} do not match cost {}x{}",
            a.len(),
            b.len(),
            cost.rows(),
            cost.cols()
        )));
    }
    if !(opts.eps > 0.0) || !opts.eps.is_finite() {
        return Err(Error::Validation(format!("eps must be positive, got {}", opts.eps)));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Validation(format!("tol must be positive, got {}", opts.tol)));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if a.iter().chain(b).any(|w| !(*w >= 0.0)) || (sa - sb).abs() > 1e-9 * sa.max(sb).max(1.0) {
        return Err(Error::Validation(format!(
            "marginals must be nonnegative with equal mass ({sa} vs {sb})"
        )));
    }
    Ok(())
}

/// Balanced entropic transport between `a` and `b` under `cost`.
pub fn sinkhorn_duals<C: CostOperator + ?Sized>(
    cost: &C,
    a: &[f64],
    b: &[f64],
    opts: &SinkhornOptions,
) -> Result<SinkhornDuals> {
    check_inputs(cost, a, b, opts)?;
    let log_a: Vec<f64> = a.iter().map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();
    let log_b: Vec<f64> = b.iter().map(|w| if *w > 0.0 { w.ln() } else { f64::NEG_INFINITY }).collect();

    let mut schedule = Vec::new();
    if opts.scaling {
        let mut e = cost.max_cost() / 10.0;
        while e > opts.eps {
            schedule.push(e);
            e *= 0.5;
        }
    }
    schedule.push(opts.eps);

    let mut f = vec![0.0; a.len()];
    let mut g = vec![0.0; b.len()];
    let mut work = vec![0.0; a.len()];
    let mut total_iter = 0;
    let mut residual = f64::INFINITY;
    let last = schedule.len() - 1;

    for (stage, &eps) in schedule.iter().enumerate() {
        let stage_tol = if stage == last { opts.tol } else { opts.tol.max(1e-6) };
        // Zero-mass entries stay at -inf; finite potentials are kept as the warm start.
        for (fi, la) in f.iter_mut().zip(&log_a) {
            if *la == f64::NEG_INFINITY {
                *fi = f64::NEG_INFINITY;
            }
        }
        loop {
            if total_iter >= opts.max_iter {
                return Err(Error::Convergence {
                    solver: "sinkhorn",
                    iterations: total_iter,
                    residual,
                    tol: opts.tol,
                });
            }
            cost.softmin_cols(&f, eps, &mut g);
            for (gj, lb) in g.iter_mut().zip(&log_b) {
                *gj += eps * lb;
            }
            cost.softmin_rows(&g, eps, &mut work);
            // Row sums of the current plan are a_i * exp((f_i - f_new_i) / eps).
            residual = 0.0;
            for ((fi, w), (ai, la)) in f.iter_mut().zip(&work).zip(a.iter().zip(&log_a)) {
                let new = w + eps * la;
                if *ai > 0.0 {
                    residual += (ai * ((*fi - new) / eps).exp() - ai).abs();
                }
                *fi = new;
            }
            total_iter += 1;
            if !residual.is_finite() {
                return Err(Error::Numerical(format!("sinkhorn produced non-finite residual at eps {eps:e}")));
            }
            if residual < stage_tol {
                break;
            }
        }
    }
    // One more column update so that both marginals are within tolerance of the returned duals.
    cost.softmin_cols(&f, opts.eps, &mut g);
    for (gj, lb) in g.iter_mut().zip(&log_b) {
        *gj += opts.eps * lb;
    }
    Ok(SinkhornDuals {
        f,
        g,
        eps: opts.eps,
        iterations: total_iter,
        residual,
    })
}

/// Entropic transport value `<P, C> + eps * sum P log P` from converged duals.
pub fn entropic_ot_value(duals: &SinkhornDuals, a: &[f64], b: &[f64]) -> f64 {
    let dot = |pot: &[f64], w: &[f64]| pot.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(p, w)| p * w).sum::<f64>();
    dot(&duals.f, a) + dot(&duals.g, b)
}

/// Entropic squared distance: returns the raw plan cost `sum P_ij C_ij` and the plan.
pub fn sinkhorn_w2(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, TransportPlan)> {
    let cost = DenseCost::between(a, b);
    let opts = SinkhornOptions {
        eps,
        tol,
        max_iter,
        scaling: true,
    };
    let duals = sinkhorn_duals(&cost, a.weights(), b.weights(), &opts)?;
    let (m, n) = (a.len(), b.len());
    let mut coupling = Vec::with_capacity(m * n);
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..n {
            let p = if a.weights()[i] > 0.0 && b.weights()[j] > 0.0 {
                duals.plan_entry(&cost, i, j)
            } else {
                0.0
            };
            total += p * cost.cost(i, j);
            coupling.push(p);
        }
    }
    Ok((total, TransportPlan::new(m, n, coupling, total)))
}

/// Entropic squared distance between two node-mass vectors on the same grid.
pub fn grid_sinkhorn_w2(grid: &Grid2D, a: &[f64], b: &[f64], opts: &SinkhornOptions) -> Result<f64> {
    let cost = SeparableSqCost::on_grid(grid, 1.0);
    let duals = sinkhorn_duals(&cost, a, b, opts)?;
    Ok(duals.plan_cost(&cost))
}
