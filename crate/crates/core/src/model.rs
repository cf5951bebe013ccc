//! Capacitance kernels, electrode control, the capacitance-weighted control
//! field and the controlled interaction potentials that induce the drift.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, DensityField, Grid2D, Point, ScalarField, VectorField};

/// Which pair of bodies a capacitance kernel couples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelRole {
    ChipletChiplet,
    ChipletElectrode,
}

/// One `a * [erf((r + delta) / c) - erf((r - delta) / c)]` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErfTerm {
    /// Amplitude `a` (dimensionless).
    pub a: f64,
    /// Length scale `c` (mm).
    pub c: f64,
}

/// Distance-dependent capacitance written as a sum of error-function bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceModel {
    terms: Vec<ErfTerm>,
    delta: f64,
    role: KernelRole,
}

/// Half electrode pitch of the reference set-up: 10 micrometres.
pub const DEFAULT_DELTA_MM: f64 = 0.01;
pub const DEFAULT_TERM_COUNT: usize = 3;

impl CapacitanceModel {
    pub fn new(terms: Vec<ErfTerm>, delta: f64, role: KernelRole) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Validation("capacitance model needs at least one term".into()));
        }
        for (i, t) in terms.iter().enumerate() {
            if !(t.a >= 0.0 && t.a.is_finite()) {
                return Err(Error::Validation(format!("term {i}: amplitude must be finite and >= 0, got {}", t.a)));
            }
            if !(t.c > 0.0 && t.c.is_finite()) {
                return Err(Error::Validation(format!("term {i}: length scale must be finite and > 0, got {}", t.c)));
            }
        }
        if !terms.iter().any(|t| t.a > 0.0) {
            return Err(Error::Validation("at least one amplitude must be positive".into()));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Validation(format!("delta must be finite and > 0, got {delta}")));
        }
        Ok(Self { terms, delta, role })
    }

    /// Draw `count` terms with `a` uniform in [0, 1) and `c` uniform in (0, 1].
    pub fn sample<R: Rng>(rng: &mut R, count: usize, delta: f64, role: KernelRole) -> Result<Self> {
        let terms = (0..count)
            .map(|_| {
                let a = rng.random::<f64>();
                let c = 1.0 - rng.random::<f64>();
                ErfTerm { a, c }
            })
            .collect();
        Self::new(terms, delta, role)
    }

    /// The chiplet-chiplet and chiplet-electrode pair sampled from one seed.
    pub fn sample_pair(seed: u64, count: usize, delta: f64) -> Result<(Self, Self)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cc = Self::sample(&mut rng, count, delta, KernelRole::ChipletChiplet)?;
        let ce = Self::sample(&mut rng, count, delta, KernelRole::ChipletElectrode)?;
        Ok((cc, ce))
    }

    pub fn terms(&self) -> &[ErfTerm] {
        &self.terms
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn role(&self) -> KernelRole {
        self.role
    }
    pub fn max_length(&self) -> f64 {
        self.terms.iter().fold(0.0_f64, |m, t| m.max(t.c))
    }

    /// Kernel value for `r >= 0`; negative distances are clamped to zero.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        let d = self.delta;
        self.terms
            .iter()
            .map(|t| {
                // Same difference, rearranged so that neither branch subtracts nearly equal numbers.
                let diff = if r >= d {
                    libm::erfc((r - d) / t.c) - libm::erfc((r + d) / t.c)
                } else {
                    libm::erf((r + d) / t.c) + libm::erf((d - r) / t.c)
                };
                t.a * diff
            })
            .sum()
    }

    /// Export `samples` evenly spaced values on `[0, r_max]` as CSV `r,value`.
    pub fn write_csv<W: Write>(&self, mut out: W, r_max: f64, samples: usize) -> Result<()> {
        writeln!(out, "r,value")?;
        let n = samples.max(2);
        for k in 0..n {
            let r = r_max * k as f64 / (n - 1) as f64;
            writeln!(out, "{r},{}", self.value(r))?;
        }
        Ok(())
    }
}

/// Capacitance at distance `r` (mm).
pub fn capacitance(model: &CapacitanceModel, r: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::Domain(format!("capacitance needs r >= 0, got {r}")));
    }
    Ok(model.value(r))
}

/// Affine electrode voltage `<k, x> + u0` clamped to `[u_min, u_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    gains: [f64; 2],
    offset: f64,
    u_min: f64,
    u_max: f64,
}

/// Gains of the reference experiment (V/mm).
pub const REFERENCE_GAINS: [f64; 2] = [8.5e-3, -1e-2];
/// Typical electrode voltage range (V).
pub const VOLTAGE_RANGE: (f64, f64) = (-400.0, 400.0);

impl ControlPolicy {
    /// Linear policy `<k, x>` (no offset).
    pub fn new(gains: [f64; 2], u_min: f64, u_max: f64) -> Result<Self> {
        Self::affine(gains, 0.0, u_min, u_max)
    }

    pub fn affine(gains: [f64; 2], offset: f64, u_min: f64, u_max: f64) -> Result<Self> {
        if !gains.iter().all(|g| g.is_finite()) || !offset.is_finite() {
            return Err(Error::Validation("control gains and offset must be finite".into()));
        }
        if !(u_min < u_max) || !u_min.is_finite() || !u_max.is_finite() {
            return Err(Error::Validation(format!("need finite u_min < u_max, got [{u_min}, {u_max}]")));
        }
        Ok(Self {
            gains,
            offset,
            u_min,
            u_max,
        })
    }

    /// The same voltage everywhere, inside the standard voltage range when possible.
    pub fn constant(value: f64) -> Self {
        let u_min = VOLTAGE_RANGE.0.min(value - 1.0);
        let u_max = VOLTAGE_RANGE.1.max(value + 1.0);
        Self::affine([0.0, 0.0], value, u_min, u_max).expect("finite constant policy")
    }

    pub fn reference() -> Self {
        Self::new(REFERENCE_GAINS, VOLTAGE_RANGE.0, VOLTAGE_RANGE.1).expect("reference policy is valid")
    }

    pub fn gains(&self) -> [f64; 2] {
        self.gains
    }
    pub fn offset(&self) -> f64 {
        self.offset
    }
    pub fn bounds(&self) -> (f64, f64) {
        (self.u_min, self.u_max)
    }
    pub fn is_constant(&self) -> bool {
        self.gains == [0.0, 0.0]
    }

    /// Voltage at `x` (mm), time `t` (s). The policy is time invariant.
    #[inline]
    pub fn eval(&self, x: Point, _t: f64) -> f64 {
        (self.gains[0] * x[0] + self.gains[1] * x[1] + self.offset).clamp(self.u_min, self.u_max)
    }
}

pub fn eval_control(policy: &ControlPolicy, x: Point, t: f64) -> f64 {
    policy.eval(x, t)
}

/// Capacitance sampled at every node offset `(|dix| hx, |diy| hy)` of a grid.
#[derive(Debug, Clone)]
pub struct KernelTable {
    nx: usize,
    values: Vec<f64>,
}

impl KernelTable {
    pub fn new(grid: &Grid2D, model: &CapacitanceModel) -> Self {
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut values = Vec::with_capacity(grid.len());
        for dy in 0..grid.ny() {
            for dx in 0..grid.nx() {
                let r = ((dx as f64 * hx).powi(2) + (dy as f64 * hy).powi(2)).sqrt();
                values.push(model.value(r));
            }
        }
        Self { nx: grid.nx(), values }
    }

    /// Kernel between nodes `(ix, iy)` and `(jx, jy)`.
    #[inline]
    pub fn between(&self, ix: usize, iy: usize, jx: usize, jy: usize) -> f64 {
        self.values[iy.abs_diff(jy) * self.nx + ix.abs_diff(jx)]
    }
}

/// Grid, policy and both capacitance kernels, with kernel tables precomputed.
#[derive(Debug, Clone)]
pub struct InteractionModel {
    grid: Grid2D,
    policy: ControlPolicy,
    ccap: CapacitanceModel,
    ecap: CapacitanceModel,
    cc_table: KernelTable,
    ce_table: KernelTable,
    drift_sign: f64,
}

impl InteractionModel {
    pub fn new(grid: Grid2D, policy: ControlPolicy, ccap: CapacitanceModel, ecap: CapacitanceModel) -> Result<Self> {
        if ccap.role() != KernelRole::ChipletChiplet || ecap.role() != KernelRole::ChipletElectrode {
            return Err(Error::Validation("capacitance kernels passed in the wrong roles".into()));
        }
        let cc_table = KernelTable::new(&grid, &ccap);
        let ce_table = KernelTable::new(&grid, &ecap);
        Ok(Self {
            grid,
            policy,
            ccap,
            ecap,
            cc_table,
            ce_table,
            drift_sign: 1.0,
        })
    }

    /// Same policy and kernels on another grid.
    pub fn on_grid(&self, grid: Grid2D) -> Self {
        let mut m = Self::new(grid, self.policy, self.ccap.clone(), self.ecap.clone()).expect("roles already checked");
        m.drift_sign = self.drift_sign;
        m
    }

    /// Negative-control hook: reverse the sign of every drift computed from this model.
    #[doc(hidden)]
    pub fn with_flipped_drift(mut self) -> Self {
        self.drift_sign = -self.drift_sign;
        self
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }
    pub fn policy(&self) -> &ControlPolicy {
        &self.policy
    }
    pub fn ccap(&self) -> &CapacitanceModel {
        &self.ccap
    }
    pub fn ecap(&self) -> &CapacitanceModel {
        &self.ecap
    }
    pub(crate) fn drift_sign(&self) -> f64 {
        self.drift_sign
    }

    /// Build the context for `density` at time `t`, computing the ū cache eagerly.
    pub fn context(&self, density: DensityField, t: f64) -> Result<InteractionContext<'_>> {
        InteractionContext::new(self, density, t)
    }
}

/// Everything needed to evaluate potentials for a fixed density and time.
#[derive(Debug, Clone)]
pub struct InteractionContext<'m> {
    model: &'m InteractionModel,
    density: DensityField,
    masses: Vec<f64>,
    t: f64,
    control: Vec<f64>,
    ubar: ScalarField,
}

impl<'m> InteractionContext<'m> {
    pub fn new(model: &'m InteractionModel, density: DensityField, t: f64) -> Result<Self> {
        if density.grid() != model.grid() {
            return Err(Error::Validation("density grid differs from the interaction model grid".into()));
        }
        let grid = *model.grid();
        let control: Vec<f64> = (0..grid.len()).map(|i| model.policy.eval(grid.point(i), t)).collect();
        let masses = density.masses();
        let ubar = ubar_on_grid(&grid, &masses, &control, &model.ce_table, &model.policy)?;
        Ok(Self {
            model,
            density,
            masses,
            t,
            control,
            ubar,
        })
    }

    pub fn model(&self) -> &'m InteractionModel {
        self.model
    }
    pub fn grid(&self) -> &Grid2D {
        self.model.grid()
    }
    pub fn density(&self) -> &DensityField {
        &self.density
    }
    pub fn into_density(self) -> DensityField {
        self.density
    }
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn policy(&self) -> &ControlPolicy {
        &self.model.policy
    }
    /// Electrode voltage at each node.
    pub fn control(&self) -> &[f64] {
        &self.control
    }
    /// Cached ū at each node.
    pub fn ubar(&self) -> &ScalarField {
        &self.ubar
    }

    /// ū at an arbitrary point, bilinearly interpolated from the node cache.
    pub fn ubar_at(&self, x: Point) -> Result<f64> {
        grid::interpolate(&self.ubar, x)
    }
}

fn ubar_on_grid(
    grid: &Grid2D,
    masses: &[f64],
    control: &[f64],
    ce: &KernelTable,
    policy: &ControlPolicy,
) -> Result<ScalarField> {
    if masses.iter().chain(control).any(|v| !v.is_finite()) {
        return Err(Error::Validation("NaN or infinite input to the ū computation".into()));
    }
    let (u_min, u_max) = policy.bounds();
    if control.iter().all(|&u| u == control[0]) {
        // Weighted average of a constant: skip the quotient so the result is exact.
        return Ok(ScalarField::from_values_unchecked(*grid, control.to_vec()));
    }
    let nx = grid.nx();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % nx, i / nx);
            let mut num = 0.0;
            let mut den = 0.0;
            for (j, (&m, &u)) in masses.iter().zip(control).enumerate() {
                if m == 0.0 {
                    continue;
                }
                let k = ce.between(ix, iy, j % nx, j / nx) * m;
                num += k * u;
                den += k;
            }
            if den > f64::MIN_POSITIVE {
                (num / den).clamp(u_min, u_max)
            } else {
                // No resolvable electrode coupling: fall back to the local voltage.
                control[i]
            }
        })
        .collect();
    Ok(ScalarField::from_values_unchecked(*grid, values))
}

/// Capacitance-weighted electrode control ū at every node.
pub fn compute_ubar(
    density: &DensityField,
    policy: &ControlPolicy,
    ecap: &CapacitanceModel,
    t: f64,
) -> Result<ScalarField> {
    let grid = *density.grid();
    let table = KernelTable::new(&grid, ecap);
    let control: Vec<f64> = (0..grid.len()).map(|i| policy.eval(grid.point(i), t)).collect();
    ubar_on_grid(&grid, &density.masses(), &control, &table, policy)
}

fn distance(x: Point, y: Point) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
}

/// Chiplet-chiplet potential `½ C_cc(|x - y|) (ū(y) - ū(x))²`.
pub fn phi_cc(x: Point, y: Point, _t: f64, ctx: &InteractionContext<'_>) -> Result<f64> {
    let du = ctx.ubar_at(y)? - ctx.ubar_at(x)?;
    Ok(0.5 * ctx.model.ccap.value(distance(x, y)) * du * du)
}

/// Chiplet-electrode potential `½ C_ce(|x - y|) (u(y) - ū(x))²`; not symmetric.
pub fn phi_ce(x: Point, y: Point, t: f64, ctx: &InteractionContext<'_>) -> Result<f64> {
    let du = ctx.model.policy.eval(y, t) - ctx.ubar_at(x)?;
    Ok(0.5 * ctx.model.ecap.value(distance(x, y)) * du * du)
}

/// The two halves of the convolution `rho * phi` at every node.
#[derive(Debug, Clone)]
pub struct PotentialParts {
    pub cc: Vec<f64>,
    pub ce: Vec<f64>,
}

impl PotentialParts {
    pub fn total(&self) -> Vec<f64> {
        self.cc.iter().zip(&self.ce).map(|(a, b)| a + b).collect()
    }
}

pub fn potential_parts(ctx: &InteractionContext<'_>) -> PotentialParts {
    let grid = ctx.grid();
    let nx = grid.nx();
    let ub = ctx.ubar.values();
    let u = &ctx.control;
    let m = &ctx.masses;
    let (cc_t, ce_t) = (&ctx.model.cc_table, &ctx.model.ce_table);
    let (cc, ce): (Vec<f64>, Vec<f64>) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let (ix, iy) = (i % nx, i / nx);
            let mut scc = 0.0;
            let mut sce = 0.0;
            for j in 0..m.len() {
                if m[j] == 0.0 {
                    continue;
                }
                let (jx, jy) = (j % nx, j / nx);
                let a = ub[j] - ub[i];
                let b = u[j] - ub[i];
                scc += m[j] * cc_t.between(ix, iy, jx, jy) * a * a;
                sce += m[j] * ce_t.between(ix, iy, jx, jy) * b * b;
            }
            (0.5 * scc, 0.5 * sce)
        })
        .unzip();
    PotentialParts { cc, ce }
}

/// Node values of the generalised convolution `(rho * phi)(x) = ∫ phi(x, y) rho(y) dy`.
pub fn convolve_potential(ctx: &InteractionContext<'_>) -> ScalarField {
    ScalarField::from_values_unchecked(*ctx.grid(), potential_parts(ctx).total())
}

/// Controlled drift `f = -∇(rho * phi)` by finite differences of the node potential.
pub fn drift_field(ctx: &InteractionContext<'_>) -> VectorField {
    let sign = -ctx.model.drift_sign;
    grid::gradient(&convolve_potential(ctx)).scaled(sign)
}

/// Largest drift component over all nodes (boundedness of the drift).
pub fn drift_bound_report(ctx: &InteractionContext<'_>) -> f64 {
    drift_field(ctx).max_abs()
}

/// Largest discrete x-gradient of a single pair potential `x -> phi(x, y_j)` over all
/// node pairs. The drift at every node is a mass-weighted average of these
/// gradients, so `drift_bound_report <= pairwise_gradient_bound`.
pub fn pairwise_gradient_bound(ctx: &InteractionContext<'_>) -> f64 {
    let grid = *ctx.grid();
    let nx = grid.nx();
    let ub = ctx.ubar.values();
    let u = &ctx.control;
    let (cc_t, ce_t) = (&ctx.model.cc_table, &ctx.model.ce_table);
    (0..grid.len())
        .into_par_iter()
        .filter(|&j| ctx.masses[j] > 0.0)
        .map(|j| {
            let (jx, jy) = (j % nx, j / nx);
            let pair: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let (ix, iy) = (i % nx, i / nx);
                    let a = ub[j] - ub[i];
                    let b = u[j] - ub[i];
                    0.5 * (cc_t.between(ix, iy, jx, jy) * a * a + ce_t.between(ix, iy, jx, jy) * b * b)
                })
                .collect();
            grid::gradient(&ScalarField::from_values_unchecked(grid, pair)).max_abs()
        })
        .reduce(|| 0.0, f64::max)
}
