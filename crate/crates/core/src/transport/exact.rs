//! Exact discrete transport by the transportation simplex method.

use std::collections::VecDeque;

use super::{cost_matrix, DiscreteMeasure, TransportPlan};
use crate::error::{Error, Result};

/// Largest number of coupling entries the exact oracle accepts.
pub const EXACT_CAPACITY: usize = 64;

const MAX_PIVOTS: usize = 10_000;

/// Exact `W` (square root of the optimal cost) and an optimal plan.
pub fn exact_w2(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<(f64, TransportPlan)> {
    let (m, n) = (a.len(), b.len());
    if m * n > EXACT_CAPACITY {
        return Err(Error::Capacity {
            entries: m * n,
            limit: EXACT_CAPACITY,
        });
    }
    let cost = cost_matrix(a.support(), b.support());
    let flow = transportation_simplex(a.weights(), b.weights(), &cost, m, n)?;
    let total: f64 = flow.iter().zip(&cost).map(|(x, c)| x * c).sum();
    let total = total.max(0.0);
    Ok((total.sqrt(), TransportPlan::new(m, n, flow, total)))
}

/// Solve `min <C, X>` over couplings of `supply` and `demand`, returning `X` row-major.
///
/// Starts from the north-west corner basis and pivots with Bland's rule
/// (first improving cell, smallest-index leaving cell), which rules out cycling
/// on degenerate instances.
pub(crate) fn transportation_simplex(
    supply: &[f64],
    demand: &[f64],
    cost: &[f64],
    m: usize,
    n: usize,
) -> Result<Vec<f64>> {
    let mut x = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    {
        let mut ra = supply.to_vec();
        let mut rb = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = ra[i].min(rb[j]).max(0.0);
            x[i * n + j] = q;
            basic[i * n + j] = true;
            ra[i] -= q;
            rb[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if i == m - 1 {
                j += 1;
            } else if j == n - 1 || ra[i] <= rb[j] {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let scale = cost.iter().fold(1.0_f64, |s, c| s.max(c.abs()));
    let rc_tol = 1e-12 * scale;
    let nodes = m + n;

    for _ in 0..MAX_PIVOTS {
        // Adjacency of the basis tree: rows are nodes 0..m, columns m..m+n.
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); nodes];
        for (cell, _) in basic.iter().enumerate().filter(|(_, b)| **b) {
            let (i, j) = (cell / n, cell % n);
            adj[i].push((m + j, cell));
            adj[m + j].push((i, cell));
        }

        let mut pot = vec![f64::NAN; nodes];
        pot[0] = 0.0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(v) = queue.pop_front() {
            for &(w, cell) in &adj[v] {
                if pot[w].is_nan() {
                    // u_i + v_j = c_ij on basic cells
                    pot[w] = cost[cell] - pot[v];
                    queue.push_back(w);
                }
            }
        }
        if pot.iter().any(|p| p.is_nan()) {
            return Err(Error::Numerical("transport basis is not a spanning tree".into()));
        }

        let entering = (0..m * n).find(|&cell| {
            !basic[cell] && cost[cell] - pot[cell / n] - pot[m + cell % n] < -rc_tol
        });
        let Some(enter) = entering else {
            for v in x.iter_mut() {
                *v = v.max(0.0);
            }
            return Ok(x);
        };
        let (ei, ej) = (enter / n, enter % n);

        // Tree path from row ei to column ej closes the pivot cycle.
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; nodes];
        let mut seen = vec![false; nodes];
        seen[ei] = true;
        let mut queue = VecDeque::from([ei]);
        while let Some(v) = queue.pop_front() {
            if v == m + ej {
                break;
            }
            for &(w, cell) in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = Some((v, cell));
                    queue.push_back(w);
                }
            }
        }
        let mut path = Vec::new();
        let mut v = m + ej;
        while v != ei {
            let (p, cell) = parent[v].ok_or_else(|| Error::Numerical("broken transport basis tree".into()))?;
            path.push(cell);
            v = p;
        }

        // Cells at even positions of the path lose flow, odd positions gain it.
        let theta = path.iter().step_by(2).map(|&c| x[c]).fold(f64::INFINITY, f64::min);
        let leave = path
            .iter()
            .step_by(2)
            .copied()
            .filter(|&c| x[c] <= theta)
            .min()
            .expect("pivot cycle has a decreasing cell");

        x[enter] += theta;
        for (k, &cell) in path.iter().enumerate() {
            if k % 2 == 0 {
                x[cell] -= theta;
            } else {
                x[cell] += theta;
            }
        }
        x[leave] = 0.0;
        basic[leave] = false;
        basic[enter] = true;
    }
    Err(Error::Convergence {
        solver: "transportation simplex",
        iterations: MAX_PIVOTS,
        residual: f64::NAN,
        tol: rc_tol,
    })
}
