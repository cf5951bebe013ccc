//! Conservative explicit finite-volume step for the nonlinear Fokker-Planck equation.

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid2D, VectorField};
use crate::model::{self, InteractionModel};

use super::{beta_inv, check_beta};

/// Result of one explicit step.
#[derive(Debug, Clone)]
pub struct ExplicitOutcome {
    pub density: DensityField,
    /// Mass removed by clipping negative node masses (before renormalisation).
    pub clipped_mass: f64,
}

/// Largest stable step `h^2 / (4 beta^-1 + h max|f|)`, with `h` the smaller spacing.
pub fn stable_dt(grid: &Grid2D, beta_inv: f64, max_drift: f64) -> f64 {
    let h = grid.hx().min(grid.hy());
    let den = 4.0 * beta_inv + h * max_drift;
    if den > 0.0 {
        h * h / den
    } else {
        f64::INFINITY
    }
}

/// One step with a given node drift field.
///
/// Face fluxes use the average drift times the average density plus a
/// two-point diffusive flux; boundary faces carry no flux, so node masses
/// telescope and the total is conserved.
pub fn explicit_fd_update(density: &DensityField, drift: &VectorField, beta_inv: f64, dt: f64) -> Result<ExplicitOutcome> {
    let g = *density.grid();
    if drift.grid() != &g {
        return Err(Error::Validation("drift and density grids differ".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::config("flow.dt", format!("must be > 0, got {dt}")));
    }
    let limit = stable_dt(&g, beta_inv, drift.max_abs());
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::config(
            "flow.dt",
            format!("dt = {dt} exceeds the explicit stability limit {limit:.6e}"),
        ));
    }
    let (nx, ny) = (g.nx(), g.ny());
    let (hx, hy) = (g.hx(), g.hy());
    let (wx, wy) = (g.weights_x(), g.weights_y());
    let rho = density.values();
    let (fx, fy) = (drift.vx(), drift.vy());
    let mut m = density.masses();

    for (iy, &wyi) in wy.iter().enumerate() {
        for ix in 0..nx - 1 {
            let (i, j) = (g.index(ix, iy), g.index(ix + 1, iy));
            let flux = 0.25 * (fx[i] + fx[j]) * (rho[i] + rho[j]) - beta_inv * (rho[j] - rho[i]) / hx;
            let q = dt * flux * wyi;
            m[i] -= q;
            m[j] += q;
        }
    }
    for iy in 0..ny - 1 {
        for (ix, &wxi) in wx.iter().enumerate() {
            let (i, j) = (g.index(ix, iy), g.index(ix, iy + 1));
            let flux = 0.25 * (fy[i] + fy[j]) * (rho[i] + rho[j]) - beta_inv * (rho[j] - rho[i]) / hy;
            let q = dt * flux * wxi;
            m[i] -= q;
            m[j] += q;
        }
    }

    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("explicit step produced non-finite mass".into()));
    }
    let mut clipped = 0.0;
    for v in m.iter_mut() {
        if *v < 0.0 {
            clipped -= *v;
            *v = 0.0;
        }
    }
    if clipped > 0.0 {
        log::debug!("explicit step clipped {clipped:.3e} of negative mass");
    }
    Ok(ExplicitOutcome {
        density: DensityField::from_masses(g, &m)?,
        clipped_mass: clipped,
    })
}

/// One explicit step of the interacting model from `density` at time `t`.
pub fn explicit_fd_step(
    density: &DensityField,
    model: &InteractionModel,
    t: f64,
    beta: f64,
    dt: f64,
) -> Result<ExplicitOutcome> {
    check_beta(beta)?;
    let ctx = model.context(density.clone(), t)?;
    let f = model::drift_field(&ctx);
    explicit_fd_update(density, &f, beta_inv(beta), dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use approx::assert_abs_diff_eq;

    #[test]
    fn heat_step_grows_variance_by_two_beta_inv_dt() {
        let g = Grid2D::square(6.0, 61).unwrap();
        let rho = DensityField::gaussian(g, [0.0, 0.0], [[0.5, 0.0], [0.0, 0.5]]).unwrap();
        let (_, v0) = rho.moments();
        let dt = 0.002;
        let out = explicit_fd_update(&rho, &VectorField::zeros(g), 1.0, dt).unwrap();
        let (_, v1) = out.density.moments();
        // the 5-point Laplacian grows the lattice second moment exactly, up to boundary leakage
        assert_abs_diff_eq!(v1[0] - v0[0], 2.0 * dt, epsilon = 1e-10);
        assert_abs_diff_eq!(v1[1] - v0[1], 2.0 * dt, epsilon = 1e-10);
        assert_eq!(out.clipped_mass, 0.0);
    }

    #[test]
    fn no_drift_no_diffusion_is_identity() {
        let g = Grid2D::reference();
        let rho = DensityField::gaussian(g, [0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]]).unwrap();
        let out = explicit_fd_update(&rho, &VectorField::zeros(g), 0.0, 0.1).unwrap();
        for (a, b) in out.density.values().iter().zip(rho.values()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15 * b.max(1.0));
        }
    }

    #[test]
    fn drifted_step_matches_hand_stencil() {
        // 3x3 grid on [-1, 1]^2 with h = 1; centre control volume is 1 x 1.
        let g = Grid2D::square(1.0, 3).unwrap();
        let raw = [1.0, 2.0, 1.0, 2.0, 4.0, 3.0, 1.0, 2.0, 2.0];
        let rho = crate::grid::normalize(&ScalarField::new(g, raw.to_vec()).unwrap()).unwrap();
        let r = rho.values().to_vec();
        let drift = VectorField::from_fn(g, |p| [0.5 + 0.25 * p[0], -0.5]);
        let (bi, dt) = (0.1, 0.05);
        let out = explicit_fd_update(&rho, &drift, bi, dt).unwrap();

        // centre node (1,1) = index 4; x-neighbours 3 and 5, y-neighbours 1 and 7.
        let fx = |ix: usize| 0.5 + 0.25 * (ix as f64 - 1.0);
        let left = 0.5 * (fx(0) + fx(1)) * 0.5 * (r[3] + r[4]) - bi * (r[4] - r[3]);
        let right = 0.5 * (fx(1) + fx(2)) * 0.5 * (r[4] + r[5]) - bi * (r[5] - r[4]);
        let bottom = -0.5 * 0.5 * (r[1] + r[4]) - bi * (r[4] - r[1]);
        let top = -0.5 * 0.5 * (r[4] + r[7]) - bi * (r[7] - r[4]);
        let m_centre = r[4] - dt * (right - left) - dt * (top - bottom);
        assert_abs_diff_eq!(out.density.masses()[4], m_centre, epsilon = 1e-14);

        // corner (0,0): quarter-cell volume, half-length faces, only right and top fluxes
        let right0 = 0.5 * (fx(0) + fx(1)) * 0.5 * (r[0] + r[1]) - bi * (r[1] - r[0]);
        let top0 = -0.5 * 0.5 * (r[0] + r[3]) - bi * (r[3] - r[0]);
        let m_corner = 0.25 * r[0] - dt * 0.5 * right0 - dt * 0.5 * top0;
        assert_abs_diff_eq!(out.density.masses()[0], m_corner, epsilon = 1e-14);
        assert_abs_diff_eq!(out.density.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn unstable_dt_is_a_config_error() {
        let g = Grid2D::reference();
        let rho = DensityField::uniform(g);
        let limit = stable_dt(&g, 1.0, 0.0);
        assert!(explicit_fd_update(&rho, &VectorField::zeros(g), 1.0, limit).is_ok());
        let err = explicit_fd_update(&rho, &VectorField::zeros(g), 1.0, 1.01 * limit).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "flow.dt"));
    }

    #[test]
    fn strong_drift_clips_and_renormalizes() {
        let g = Grid2D::square(1.0, 5).unwrap();
        let mut masses = vec![0.0; g.len()];
        masses[g.index(2, 2)] = 1.0;
        let rho = DensityField::from_masses(g, &masses).unwrap();
        // Large uniform drift: central flux overshoots and creates negative mass upstream.
        let f = VectorField::from_fn(g, |_| [20.0, 0.0]);
        let dt = stable_dt(&g, 0.0, 20.0);
        let out = explicit_fd_update(&rho, &f, 0.0, dt).unwrap();
        assert!(out.clipped_mass > 0.0);
        assert!(out.density.values().iter().all(|v| *v >= 0.0));
        assert_abs_diff_eq!(out.density.masses().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
