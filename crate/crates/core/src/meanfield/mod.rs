//! Free energy of a chiplet density, its two time-steppers (proximal JKO and
//! explicit finite volumes) and the monitors used to check the evolution.

mod explicit;
mod flow;
mod jko;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, DensityField, ScalarField, VectorField};
use crate::model::{self, InteractionContext, InteractionModel};
use crate::particles::{histogram_density, ParticleEnsemble};
use crate::transport::{grid_sinkhorn_w2, SinkhornOptions};

pub use explicit::{explicit_fd_step, explicit_fd_update, stable_dt, ExplicitOutcome};
pub use flow::{run_flow, EnergyRecord, FlowState, PdeCompanion, Scheme, Stepper};
pub use jko::{default_jko_eps, jko_step, lattice_kernel_variance, min_lattice_eps, JkoConfig, JkoOutcome, JkoProblem};

/// Floor applied inside `log` so that `0 log 0 = 0`.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// `1 / beta`, with `beta = inf` meaning the noise-free limit.
pub fn beta_inv(beta: f64) -> f64 {
    if beta.is_infinite() {
        0.0
    } else {
        1.0 / beta
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 {
        Ok(())
    } else {
        Err(Error::config("physics.beta", format!("must be > 0, got {beta}")))
    }
}

/// The three parts of the free energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub phi_cc: f64,
    pub phi_ce: f64,
    /// `beta^-1 E[log rho]`.
    pub internal: f64,
    pub total: f64,
}

fn entropy_sum(masses: &[f64], values: &[f64]) -> f64 {
    masses
        .iter()
        .zip(values)
        .filter(|(m, _)| **m > 0.0)
        .map(|(m, r)| m * r.max(DENSITY_FLOOR).ln())
        .sum()
}

/// Free energy of the context's density.
pub fn energy(ctx: &InteractionContext<'_>, beta: f64) -> EnergyBreakdown {
    let parts = model::potential_parts(ctx);
    let m = ctx.masses();
    let dot = |v: &[f64]| v.iter().zip(m).map(|(a, b)| a * b).sum::<f64>();
    let phi_cc = dot(&parts.cc);
    let phi_ce = dot(&parts.ce);
    let internal = beta_inv(beta) * entropy_sum(m, ctx.density().values());
    EnergyBreakdown {
        phi_cc,
        phi_ce,
        internal,
        total: phi_cc + phi_ce + internal,
    }
}

/// First variation `rho * phi + beta^-1 (1 + log rho)` at every node.
pub fn free_energy_derivative(ctx: &InteractionContext<'_>, beta: f64) -> ScalarField {
    let v = model::convolve_potential(ctx);
    let bi = beta_inv(beta);
    let values = v
        .values()
        .iter()
        .zip(ctx.density().values())
        .map(|(v, r)| v + bi * (1.0 + r.max(DENSITY_FLOOR).ln()))
        .collect();
    ScalarField::from_values_unchecked(*ctx.grid(), values)
}

/// Residual of the discrete gradient-flow equation between two consecutive densities.
///
/// Quadrature L1 norm over interior nodes of
/// `(rho_next - rho_prev) / dt - div(rho_prev grad(dPhi/drho))`, with the
/// entropy part written as `beta^-1 lap(rho_prev)` (identical in the continuum,
/// but free of the log floor in the tails).
pub fn gradient_flow_residual(
    prev: &DensityField,
    next: &DensityField,
    dt: f64,
    model: &InteractionModel,
    t: f64,
    beta: f64,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be > 0, got {dt}")));
    }
    if prev.grid() != next.grid() {
        return Err(Error::Validation("densities live on different grids".into()));
    }
    let g = *prev.grid();
    let ctx = model.context(prev.clone(), t)?;
    let v = model::convolve_potential(&ctx);
    let gv = grid::gradient(&v);
    let rho = prev.values();
    let flux = VectorField::new(
        g,
        gv.vx().iter().zip(rho).map(|(a, r)| a * r).collect(),
        gv.vy().iter().zip(rho).map(|(a, r)| a * r).collect(),
    )?;
    let div = grid::divergence(&flux);
    let lap = grid::laplacian(prev.field());
    let bi = beta_inv(beta);
    let w = g.quadrature_weights();
    let mut total = 0.0;
    for i in 0..g.len() {
        let (ix, iy) = g.node(i);
        if !g.is_interior(ix, iy) {
            continue;
        }
        let dr = (next.values()[i] - rho[i]) / dt;
        total += w[i] * (dr - div.values()[i] - bi * lap.values()[i]).abs();
    }
    Ok(total)
}

/// Outcome of the monotonicity check on an energy history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovReport {
    pub passed: bool,
    /// Indices `k` with `Phi_k > Phi_{k-1} + tol_k`.
    pub violations: Vec<usize>,
    /// Largest `Phi_k - Phi_{k-1} - tol_k` seen (negative when all steps descend).
    pub worst_excess: f64,
    pub checked: usize,
}

/// Per-step slack: `1e-8 (1 + |Phi_{k-1}|)`.
pub fn monotonicity_tol(prev_total: f64) -> f64 {
    1e-8 * (1.0 + prev_total.abs())
}

/// Flag every step where the total energy rises by more than the slack.
pub fn lyapunov_check(totals: &[f64]) -> LyapunovReport {
    let mut violations = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for k in 1..totals.len() {
        let excess = totals[k] - totals[k - 1] - monotonicity_tol(totals[k - 1]);
        worst = worst.max(excess);
        if excess > 0.0 || !totals[k].is_finite() {
            violations.push(k);
        }
    }
    LyapunovReport {
        passed: violations.is_empty(),
        violations,
        worst_excess: if totals.len() < 2 { 0.0 } else { worst },
        checked: totals.len().saturating_sub(1),
    }
}

/// Default regularization for grid-to-grid comparisons: `h^2 / 4`.
pub fn default_grid_eps(g: &grid::Grid2D) -> f64 {
    0.25 * g.h() * g.h()
}

/// Entropic `W` between the particle histogram and a grid density.
pub fn particle_consistency_metric(ens: &ParticleEnsemble, pde: &DensityField, eps: Option<f64>) -> Result<f64> {
    let g = *pde.grid();
    let hist = histogram_density(ens, &g)?;
    let opts = SinkhornOptions::with_eps(eps.unwrap_or_else(|| default_grid_eps(&g)));
    let w2 = grid_sinkhorn_w2(&g, &hist.masses(), &pde.masses(), &opts)?;
    Ok(w2.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid2D;
    use crate::model::{CapacitanceModel, ControlPolicy, ErfTerm, KernelRole};
    use approx::assert_abs_diff_eq;

    pub(crate) fn strong_model(grid: Grid2D, policy: ControlPolicy) -> InteractionModel {
        let cc = CapacitanceModel::new(vec![ErfTerm { a: 1.0, c: 1.0 }], 0.5, KernelRole::ChipletChiplet).unwrap();
        let ce = CapacitanceModel::new(vec![ErfTerm { a: 0.8, c: 0.6 }], 0.5, KernelRole::ChipletElectrode).unwrap();
        InteractionModel::new(grid, policy, cc, ce).unwrap()
    }

    #[test]
    fn constant_control_energy_is_internal_only() {
        let g = Grid2D::reference();
        let m = strong_model(g, ControlPolicy::constant(2.0));
        let rho = DensityField::gaussian(g, [0.5, 0.5], [[0.3, 0.0], [0.0, 0.3]]).unwrap();
        let e = energy(&m.context(rho, 0.0).unwrap(), 1.0);
        assert_eq!(e.phi_cc, 0.0);
        assert_eq!(e.phi_ce, 0.0);
        assert_eq!(e.total, e.internal);
    }

    #[test]
    fn uniform_density_entropy() {
        let g = Grid2D::reference();
        let m = strong_model(g, ControlPolicy::constant(0.0));
        let e = energy(&m.context(DensityField::uniform(g), 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(e.internal, -(64f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(e.internal, -4.1589, epsilon = 1e-4);
        let cold = energy(&m.context(DensityField::uniform(g), 0.0).unwrap(), f64::INFINITY);
        assert_eq!(cold.internal, 0.0);
    }

    #[test]
    fn toy_grid_energy_matches_double_loop() {
        let g = Grid2D::square(1.0, 3).unwrap();
        let policy = ControlPolicy::new([1.0, -0.5], -400.0, 400.0).unwrap();
        let m = strong_model(g, policy);
        let rho = grid::normalize(&ScalarField::from_fn(g, |p| 2.0 + p[0] - 0.5 * p[1] * p[1])).unwrap();
        let ctx = m.context(rho.clone(), 0.0).unwrap();
        let e = energy(&ctx, 0.5);
        let masses = rho.masses();
        let (mut cc, mut ce, mut internal) = (0.0, 0.0, 0.0);
        for i in 0..g.len() {
            for j in 0..g.len() {
                let (x, y) = (g.point(i), g.point(j));
                cc += masses[i] * masses[j] * model::phi_cc(x, y, 0.0, &ctx).unwrap();
                ce += masses[i] * masses[j] * model::phi_ce(x, y, 0.0, &ctx).unwrap();
            }
            internal += 2.0 * masses[i] * rho.values()[i].ln();
        }
        assert_abs_diff_eq!(e.phi_cc, cc, epsilon = 1e-12);
        assert_abs_diff_eq!(e.phi_ce, ce, epsilon = 1e-12);
        assert_abs_diff_eq!(e.internal, internal, epsilon = 1e-12);
        assert!(e.phi_cc > 0.0 && e.phi_ce > 0.0);
        assert_abs_diff_eq!(e.total, e.phi_cc + e.phi_ce + e.internal, epsilon = 1e-12);
    }

    #[test]
    fn zero_mass_nodes_do_not_poison_entropy() {
        let g = Grid2D::square(1.0, 3).unwrap();
        let mut masses = vec![0.0; 9];
        masses[4] = 1.0;
        let rho = DensityField::from_masses(g, &masses).unwrap();
        let m = strong_model(g, ControlPolicy::constant(0.0));
        let e = energy(&m.context(rho.clone(), 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(e.internal, rho.values()[4].ln(), epsilon = 1e-12);
    }

    #[test]
    fn free_energy_derivative_examples() {
        let g = Grid2D::reference();
        let m = strong_model(g, ControlPolicy::constant(1.0));
        let d = free_energy_derivative(&m.context(DensityField::uniform(g), 0.0).unwrap(), 2.0);
        let expect = 0.5 * (1.0 + (1.0f64 / 64.0).ln());
        assert!(d.values().iter().all(|v| (v - expect).abs() < 1e-14));

        let g = Grid2D::square(1.0, 4).unwrap();
        let m = strong_model(g, ControlPolicy::new([1.0, 0.3], -400.0, 400.0).unwrap());
        let rho = grid::normalize(&ScalarField::from_fn(g, |p| 1.5 + p[0] * p[1])).unwrap();
        let ctx = m.context(rho.clone(), 0.0).unwrap();
        let d = free_energy_derivative(&ctx, 4.0);
        let v = model::convolve_potential(&ctx);
        for i in 0..g.len() {
            let expect = v.values()[i] + 0.25 * (1.0 + rho.values()[i].ln());
            assert_abs_diff_eq!(d.values()[i], expect, epsilon = 1e-14);
        }
        // shifting the derivative by a constant leaves its gradient unchanged
        let shifted = ScalarField::from_fn(g, |p| 0.0 * p[0] + 3.0);
        let sum = ScalarField::new(g, d.values().iter().zip(shifted.values()).map(|(a, b)| a + b).collect()).unwrap();
        let (g1, g2) = (grid::gradient(&d), grid::gradient(&sum));
        for i in 0..g.len() {
            assert_abs_diff_eq!(g1.vx()[i], g2.vx()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn lyapunov_examples() {
        let decreasing = [3.0, 2.5, 2.5, 1.0];
        assert!(lyapunov_check(&decreasing).passed);
        let reversed: Vec<f64> = decreasing.iter().rev().copied().collect();
        let r = lyapunov_check(&reversed);
        assert!(!r.passed);
        assert_eq!(r.violations, vec![1, 3]);
        let within_slack = [1.0, 1.0 + 1e-9];
        assert!(lyapunov_check(&within_slack).passed);
        assert!(!lyapunov_check(&[1.0, 1.0 + 1e-7]).passed);
        assert!(lyapunov_check(&[1.0]).passed);
    }

    #[test]
    fn uniform_pure_diffusion_residual_vanishes() {
        let g = Grid2D::reference();
        let m = strong_model(g, ControlPolicy::constant(0.0));
        let u = DensityField::uniform(g);
        let r = gradient_flow_residual(&u, &u, 0.01, &m, 0.0, 1.0).unwrap();
        assert!(r <= 1e-8, "{r}");
    }

    #[test]
    fn offset_ensemble_costs_its_shift() {
        let g = Grid2D::reference();
        let rho = DensityField::gaussian(g, [-0.5, 0.0], [[0.3, 0.0], [0.0, 0.3]]).unwrap();
        // Deterministic "ensemble" placed on the nodes with their masses, then moved by 1 mm.
        let mut pts = Vec::new();
        for (i, m) in rho.masses().iter().enumerate() {
            let copies = (m * 20_000.0).round() as usize;
            pts.extend(std::iter::repeat_n(g.point(i), copies));
        }
        let ens = ParticleEnsemble::from_positions(pts, 0).unwrap();
        let same = particle_consistency_metric(&ens, &rho, None).unwrap();
        let moved = particle_consistency_metric(&ens.shifted([1.0, 0.0]), &rho, None).unwrap();
        assert!(same < 0.2, "{same}");
        assert!((moved - 1.0).abs() < 0.1, "{moved}");
    }
}
