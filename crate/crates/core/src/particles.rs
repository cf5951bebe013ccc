//! Finite populations of interacting chiplets driven by the controlled SDE
//! `dx = f dt + sqrt(2 / beta) dw`, integrated with Euler-Maruyama.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid2D, Point, VectorField};
use crate::model::{CapacitanceModel, ControlPolicy, InteractionContext, InteractionModel};

/// Default central-difference step for the empirical drift (mm).
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Where the drift acting on each particle comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Interaction sums over the other particles.
    Empirical,
    /// Drift field of a grid density evolved alongside the particles.
    Meanfield,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub dt: f64,
    /// Inverse temperature; `f64::INFINITY` switches the noise off.
    pub beta: f64,
    pub seed: u64,
    pub drift_mode: DriftMode,
    pub fd_step: f64,
}

impl SdeConfig {
    pub fn new(dt: f64, beta: f64, seed: u64, drift_mode: DriftMode) -> Result<Self> {
        let cfg = Self {
            dt,
            beta,
            seed,
            drift_mode,
            fd_step: DEFAULT_FD_STEP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("particles.dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::config("physics.beta", format!("must be > 0, got {}", self.beta)));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::config("particles.fd_step", format!("must be finite and > 0, got {}", self.fd_step)));
        }
        Ok(())
    }

    /// `1 / beta`, zero in the noise-free limit.
    pub fn beta_inv(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            1.0 / self.beta
        }
    }
}

/// Particle positions plus one random stream per particle.
///
/// Stream `i` of the master seed belongs to particle `i`, so results do not
/// depend on how the work is split across threads.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    positions: Vec<Point>,
    rngs: Vec<ChaCha8Rng>,
    t: f64,
    step: usize,
}

fn particle_rng(seed: u64, id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id as u64);
    rng
}

fn normal_pair(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

impl ParticleEnsemble {
    /// Ensemble at given positions; noise streams are derived from `seed`.
    pub fn from_positions(positions: Vec<Point>, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Validation("ensemble needs at least one particle".into()));
        }
        if let Some(index) = positions.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
            return Err(Error::NumericalBlowup { index });
        }
        let rngs = (0..positions.len()).map(|i| particle_rng(seed, i)).collect();
        Ok(Self {
            positions,
            rngs,
            t: 0.0,
            step: 0,
        })
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }
    pub fn len(&self) -> usize {
        self.positions.len()
    }
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn step(&self) -> usize {
        self.step
    }

    /// Sample mean and per-axis (population) variance.
    pub fn moments(&self) -> (Point, Point) {
        let n = self.len() as f64;
        let mut mean = [0.0; 2];
        for p in &self.positions {
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean = [mean[0] / n, mean[1] / n];
        let mut var = [0.0; 2];
        for p in &self.positions {
            var[0] += (p[0] - mean[0]).powi(2);
            var[1] += (p[1] - mean[1]).powi(2);
        }
        (mean, [var[0] / n, var[1] / n])
    }

    /// Rigidly translate every particle (no reflection).
    pub fn shifted(&self, by: Point) -> Self {
        let mut out = self.clone();
        for p in &mut out.positions {
            p[0] += by[0];
            p[1] += by[1];
        }
        out
    }

    /// Fold every particle into the grid domain.
    pub fn reflect_into(&mut self, grid: &Grid2D) {
        for p in &mut self.positions {
            *p = grid.reflect(*p);
        }
    }
}

/// `n` i.i.d. draws from `N(mean, cov)`, one per particle stream.
pub fn init_ensemble(mean: Point, cov: [[f64; 2]; 2], n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::Validation("ensemble needs at least one particle".into()));
    }
    if (cov[0][1] - cov[1][0]).abs() > 1e-12 * cov[0][0].abs().max(1.0) {
        return Err(Error::Validation("covariance must be symmetric".into()));
    }
    // Cholesky factor of the 2x2 covariance.
    let l00 = cov[0][0].sqrt();
    if !(cov[0][0] > 0.0) {
        return Err(Error::Validation("covariance must be positive definite".into()));
    }
    let l10 = cov[1][0] / l00;
    let s = cov[1][1] - l10 * l10;
    if !(s > 0.0) {
        return Err(Error::Validation("covariance must be positive definite".into()));
    }
    let l11 = s.sqrt();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| particle_rng(seed, i)).collect();
    let positions = rngs
        .par_iter_mut()
        .map(|rng| {
            let [z0, z1] = normal_pair(rng);
            [mean[0] + l00 * z0, mean[1] + l10 * z0 + l11 * z1]
        })
        .collect();
    Ok(ParticleEnsemble {
        positions,
        rngs,
        t: 0.0,
        step: 0,
    })
}

/// Supplies the drift at every particle for the step starting at `ens.t()`.
pub trait DriftProvider {
    fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>>;
}

/// No drift at all: pure diffusion.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDrift;

impl DriftProvider for ZeroDrift {
    fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
        Ok(vec![[0.0; 2]; ens.len()])
    }
}

/// A fixed drift field, bilinearly interpolated at particle positions.
#[derive(Debug, Clone)]
pub struct FieldDrift {
    field: VectorField,
}

impl FieldDrift {
    pub fn new(field: VectorField) -> Self {
        Self { field }
    }

    pub fn from_context(ctx: &InteractionContext<'_>) -> Self {
        Self::new(crate::model::drift_field(ctx))
    }

    pub fn field(&self) -> &VectorField {
        &self.field
    }
}

impl DriftProvider for FieldDrift {
    fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
        interpolate_drift(&self.field, ens)
    }
}

/// Interpolate a grid drift field at every particle.
pub fn interpolate_drift(field: &VectorField, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
    ens.positions.par_iter().map(|p| field.interpolate(*p)).collect()
}

/// Interaction drift computed from the particles themselves, with the
/// empirical measure `(1/n) sum_j delta_{x_j}` in place of the density.
#[derive(Debug, Clone)]
pub struct EmpiricalDrift {
    policy: ControlPolicy,
    ccap: CapacitanceModel,
    ecap: CapacitanceModel,
    fd_step: f64,
    sign: f64,
}

/// Per-step cache: control and ū at every particle.
struct EmpiricalState<'a> {
    drift: &'a EmpiricalDrift,
    positions: &'a [Point],
    control: Vec<f64>,
    ubar: Vec<f64>,
}

fn dist(x: Point, y: Point) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt()
}

impl EmpiricalDrift {
    pub fn new(model: &InteractionModel, fd_step: f64) -> Result<Self> {
        if !(fd_step > 0.0 && fd_step.is_finite()) {
            return Err(Error::config("particles.fd_step", format!("must be finite and > 0, got {fd_step}")));
        }
        Ok(Self {
            policy: *model.policy(),
            ccap: model.ccap().clone(),
            ecap: model.ecap().clone(),
            fd_step,
            sign: model.drift_sign(),
        })
    }

    fn state<'a>(&'a self, positions: &'a [Point], t: f64) -> EmpiricalState<'a> {
        let control: Vec<f64> = positions.iter().map(|p| self.policy.eval(*p, t)).collect();
        let mut st = EmpiricalState {
            drift: self,
            positions,
            control,
            ubar: Vec::new(),
        };
        st.ubar = positions.par_iter().map(|p| st.ubar_at(*p)).collect();
        st
    }

    /// Drift at an arbitrary point `x` given the ensemble.
    pub fn drift_at(&self, x: Point, ens: &ParticleEnsemble) -> [f64; 2] {
        self.state(&ens.positions, ens.t).drift_at(x)
    }

    /// Empirical potential `V(x) = (1/n) sum_j phi(x, x_j)`.
    pub fn potential_at(&self, x: Point, ens: &ParticleEnsemble) -> f64 {
        self.state(&ens.positions, ens.t).potential(x)
    }
}

impl EmpiricalState<'_> {
    fn ubar_at(&self, x: Point) -> f64 {
        let u0 = self.control[0];
        if self.control.iter().all(|&u| u == u0) {
            return u0;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for (p, u) in self.positions.iter().zip(&self.control) {
            let k = self.drift.ecap.value(dist(x, *p));
            num += k * u;
            den += k;
        }
        let (lo, hi) = self.drift.policy.bounds();
        if den > f64::MIN_POSITIVE {
            (num / den).clamp(lo, hi)
        } else {
            self.drift.policy.eval(x, 0.0)
        }
    }

    fn potential(&self, x: Point) -> f64 {
        let ub = self.ubar_at(x);
        let mut v = 0.0;
        for ((p, u), ubj) in self.positions.iter().zip(&self.control).zip(&self.ubar) {
            let r = dist(x, *p);
            let a = ubj - ub;
            let b = u - ub;
            v += 0.5 * (self.drift.ccap.value(r) * a * a + self.drift.ecap.value(r) * b * b);
        }
        v / self.positions.len() as f64
    }

    fn drift_at(&self, x: Point) -> [f64; 2] {
        let h = self.drift.fd_step;
        let gx = (self.potential([x[0] + h, x[1]]) - self.potential([x[0] - h, x[1]])) / (2.0 * h);
        let gy = (self.potential([x[0], x[1] + h]) - self.potential([x[0], x[1] - h])) / (2.0 * h);
        let s = -self.drift.sign;
        [s * gx, s * gy]
    }
}

impl DriftProvider for EmpiricalDrift {
    fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
        let st = self.state(&ens.positions, ens.t);
        Ok(ens.positions.par_iter().map(|p| st.drift_at(*p)).collect())
    }
}

/// Advance every particle by one Euler-Maruyama step and reflect at the walls.
pub fn euler_maruyama_step(
    ens: &mut ParticleEnsemble,
    cfg: &SdeConfig,
    drift: &mut dyn DriftProvider,
    domain: &Grid2D,
) -> Result<()> {
    let f = drift.drifts(ens)?;
    if f.len() != ens.len() {
        return Err(Error::Validation(format!("drift provider returned {} vectors for {} particles", f.len(), ens.len())));
    }
    let dt = cfg.dt;
    let noise = (2.0 * cfg.beta_inv() * dt).sqrt();
    ens.positions
        .par_iter_mut()
        .zip(ens.rngs.par_iter_mut())
        .zip(f.par_iter())
        .for_each(|((p, rng), fi)| {
            let xi = normal_pair(rng);
            let q = [p[0] + fi[0] * dt + noise * xi[0], p[1] + fi[1] * dt + noise * xi[1]];
            *p = domain.reflect(q);
        });
    if let Some(index) = ens.positions.iter().position(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NumericalBlowup { index });
    }
    ens.step += 1;
    ens.t = ens.step as f64 * dt;
    Ok(())
}

/// Moments recorded alongside each snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleSummary {
    pub step: usize,
    pub t: f64,
    pub mean: Point,
    pub var: Point,
}

/// Run `steps` steps, calling `record` on the initial ensemble and after every
/// `every`-th step (and the final one).
pub fn simulate(
    ens: &mut ParticleEnsemble,
    cfg: &SdeConfig,
    drift: &mut dyn DriftProvider,
    domain: &Grid2D,
    steps: usize,
    every: usize,
    record: &mut dyn FnMut(&ParticleEnsemble) -> Result<()>,
) -> Result<Vec<EnsembleSummary>> {
    cfg.validate()?;
    let every = every.max(1);
    let mut summaries = Vec::new();
    let mut snap = |e: &ParticleEnsemble, out: &mut Vec<EnsembleSummary>| -> Result<()> {
        let (mean, var) = e.moments();
        out.push(EnsembleSummary {
            step: e.step,
            t: e.t,
            mean,
            var,
        });
        record(e)
    };
    snap(ens, &mut summaries)?;
    for k in 1..=steps {
        euler_maruyama_step(ens, cfg, drift, domain)?;
        if k % every == 0 || k == steps {
            snap(ens, &mut summaries)?;
        }
    }
    Ok(summaries)
}

/// Header of the particle snapshot CSV.
pub fn write_snapshot_header<W: Write>(mut out: W) -> Result<()> {
    writeln!(out, "step,t,particle_id,x,y")?;
    Ok(())
}

/// Append one snapshot as `step,t,particle_id,x,y` rows.
pub fn write_snapshot<W: Write>(mut out: W, ens: &ParticleEnsemble) -> Result<()> {
    for (i, p) in ens.positions.iter().enumerate() {
        writeln!(out, "{},{},{},{},{}", ens.step, ens.t, i, p[0], p[1])?;
    }
    Ok(())
}

/// Cloud-in-cell projection of the empirical measure onto the grid nodes.
///
/// Each particle spreads mass `1/n` over the four corners of its cell with
/// bilinear weights; node masses are then divided by the quadrature weights.
pub fn histogram_density(ens: &ParticleEnsemble, grid: &Grid2D) -> Result<DensityField> {
    let mut masses = vec![0.0; grid.len()];
    let w = 1.0 / ens.len() as f64;
    for p in &ens.positions {
        let (ix, iy, tx, ty) = grid.locate(*p)?;
        masses[grid.index(ix, iy)] += w * (1.0 - tx) * (1.0 - ty);
        masses[grid.index(ix + 1, iy)] += w * tx * (1.0 - ty);
        masses[grid.index(ix, iy + 1)] += w * (1.0 - tx) * ty;
        masses[grid.index(ix + 1, iy + 1)] += w * tx * ty;
    }
    DensityField::from_masses(*grid, &masses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ErfTerm, KernelRole};
    use approx::assert_abs_diff_eq;

    fn strong_model(grid: Grid2D, policy: ControlPolicy) -> InteractionModel {
        let cc = CapacitanceModel::new(vec![ErfTerm { a: 1.0, c: 1.0 }], 0.5, KernelRole::ChipletChiplet).unwrap();
        let ce = CapacitanceModel::new(vec![ErfTerm { a: 0.8, c: 0.6 }], 0.5, KernelRole::ChipletElectrode).unwrap();
        InteractionModel::new(grid, policy, cc, ce).unwrap()
    }

    #[test]
    fn init_is_reproducible_and_centered() {
        let a = init_ensemble([0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]], 100_000, 42).unwrap();
        let b = init_ensemble([0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]], 100_000, 42).unwrap();
        assert_eq!(a.positions(), b.positions());
        let (mean, var) = a.moments();
        let tol = 3.0 * (0.1f64 / 1e5).sqrt();
        assert!((mean[0] - 0.5).abs() < tol && (mean[1] - 0.5).abs() < tol, "{mean:?}");
        assert!((var[0] - 0.1).abs() < 0.003 && (var[1] - 0.1).abs() < 0.003, "{var:?}");
    }

    #[test]
    fn init_rejects_degenerate_covariance() {
        assert!(init_ensemble([0.0, 0.0], [[0.0, 0.0], [0.0, 0.0]], 10, 1).is_err());
        assert!(init_ensemble([0.0, 0.0], [[1.0, 1.0], [1.0, 1.0]], 10, 1).is_err());
        assert!(init_ensemble([0.0, 0.0], [[1.0, 0.2], [0.0, 1.0]], 10, 1).is_err());
        assert!(init_ensemble([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 0, 1).is_err());
    }

    #[test]
    fn noise_off_zero_drift_is_fixed_point() {
        let g = Grid2D::reference();
        let mut ens = init_ensemble([0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]], 50, 3).unwrap();
        let before = ens.positions().to_vec();
        let cfg = SdeConfig::new(0.01, f64::INFINITY, 3, DriftMode::Empirical).unwrap();
        euler_maruyama_step(&mut ens, &cfg, &mut ZeroDrift, &g).unwrap();
        assert_eq!(ens.positions(), &before[..]);
    }

    #[test]
    fn constant_control_empirical_drift_is_zero() {
        let g = Grid2D::reference();
        let model = strong_model(g, ControlPolicy::constant(5.0));
        let mut drift = EmpiricalDrift::new(&model, DEFAULT_FD_STEP).unwrap();
        let mut ens = init_ensemble([0.0, 0.0], [[0.5, 0.0], [0.0, 0.5]], 40, 9).unwrap();
        assert!(drift.drifts(&ens).unwrap().iter().all(|f| f == &[0.0, 0.0]));
        let before = ens.positions().to_vec();
        let cfg = SdeConfig::new(0.05, f64::INFINITY, 9, DriftMode::Empirical).unwrap();
        euler_maruyama_step(&mut ens, &cfg, &mut drift, &g).unwrap();
        assert_eq!(ens.positions(), &before[..]);
    }

    #[test]
    fn displacement_variance_matches_diffusion() {
        let g = Grid2D::square(1000.0, 3).unwrap();
        let mut ens = ParticleEnsemble::from_positions(vec![[0.0, 0.0]; 100_000], 5).unwrap();
        let cfg = SdeConfig::new(0.01, 1.0, 5, DriftMode::Empirical).unwrap();
        euler_maruyama_step(&mut ens, &cfg, &mut ZeroDrift, &g).unwrap();
        let (_, var) = ens.moments();
        // Standard error of a sample variance is sigma^2 sqrt(2/n).
        let se = 0.02 * (2.0f64 / 1e5).sqrt();
        assert!((var[0] - 0.02).abs() < 3.0 * se && (var[1] - 0.02).abs() < 3.0 * se, "{var:?}");
    }

    #[test]
    fn reflection_at_the_wall() {
        let g = Grid2D::reference();
        let mut ens = ParticleEnsemble::from_positions(vec![[3.95, 0.0]], 1).unwrap();
        let cfg = SdeConfig::new(0.1, f64::INFINITY, 1, DriftMode::Meanfield).unwrap();
        let mut push = FieldDrift::new(VectorField::from_fn(g, |_| [1.5, 0.0]));
        euler_maruyama_step(&mut ens, &cfg, &mut push, &g).unwrap();
        // 3.95 + 1.5 * 0.1 = 4.1 mirrors to 3.9
        assert_abs_diff_eq!(ens.positions()[0][0], 3.9, epsilon = 1e-12);
    }

    #[test]
    fn nan_drift_reports_particle_index() {
        struct Poison;
        impl DriftProvider for Poison {
            fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
                let mut v = vec![[0.0; 2]; ens.len()];
                v[2] = [f64::NAN, 0.0];
                Ok(v)
            }
        }
        let g = Grid2D::reference();
        let mut ens = ParticleEnsemble::from_positions(vec![[0.0, 0.0]; 4], 1).unwrap();
        let cfg = SdeConfig::new(0.1, 1.0, 1, DriftMode::Empirical).unwrap();
        assert!(matches!(
            euler_maruyama_step(&mut ens, &cfg, &mut Poison, &g),
            Err(Error::NumericalBlowup { index: 2 })
        ));
    }

    #[test]
    fn single_particle_drift_matches_pair_oracle() {
        let g = Grid2D::reference();
        let policy = ControlPolicy::new([1.0, -0.5], -400.0, 400.0).unwrap();
        let model = strong_model(g, policy);
        let x1 = [0.3, -0.2];
        let ens = ParticleEnsemble::from_positions(vec![x1], 0).unwrap();
        let d = EmpiricalDrift::new(&model, DEFAULT_FD_STEP).unwrap();
        // With one particle ū is u(x1) everywhere, so both squared differences vanish.
        let u1 = policy.eval(x1, 0.0);
        let x = [1.1, 0.4];
        let oracle = 0.5 * model.ccap().value(dist(x, x1)) * (u1 - u1).powi(2)
            + 0.5 * model.ecap().value(dist(x, x1)) * (u1 - u1).powi(2);
        assert_eq!(d.potential_at(x, &ens), oracle);
        assert_eq!(d.drift_at(x, &ens), [0.0, 0.0]);
    }

    #[test]
    fn three_particle_drift_matches_brute_force() {
        let g = Grid2D::reference();
        let policy = ControlPolicy::new([1.0, -0.5], -400.0, 400.0).unwrap();
        let model = strong_model(g, policy);
        let pts = vec![[0.0, 0.0], [0.7, 0.1], [-0.4, 0.5]];
        let ens = ParticleEnsemble::from_positions(pts.clone(), 0).unwrap();
        let d = EmpiricalDrift::new(&model, 1e-3).unwrap();

        let u: Vec<f64> = pts.iter().map(|p| policy.eval(*p, 0.0)).collect();
        let ubar = |x: Point| {
            let k: Vec<f64> = pts.iter().map(|p| model.ecap().value(dist(x, *p))).collect();
            k.iter().zip(&u).map(|(k, u)| k * u).sum::<f64>() / k.iter().sum::<f64>()
        };
        let v = |x: Point| {
            let ux = ubar(x);
            let mut s = 0.0;
            for (j, p) in pts.iter().enumerate() {
                let r = dist(x, *p);
                s += 0.5 * model.ccap().value(r) * (ubar(*p) - ux).powi(2);
                s += 0.5 * model.ecap().value(r) * (u[j] - ux).powi(2);
            }
            s / 3.0
        };
        let x = [0.2, 0.3];
        let h = 1e-3;
        let fx = -(v([x[0] + h, x[1]]) - v([x[0] - h, x[1]])) / (2.0 * h);
        let fy = -(v([x[0], x[1] + h]) - v([x[0], x[1] - h])) / (2.0 * h);
        let got = d.drift_at(x, &ens);
        assert_abs_diff_eq!(got[0], fx, epsilon = 1e-10);
        assert_abs_diff_eq!(got[1], fy, epsilon = 1e-10);
        assert!(fx.abs() + fy.abs() > 1e-4);
    }

    #[test]
    fn histogram_single_cell_and_hand_placed() {
        let g = Grid2D::square(1.0, 3).unwrap();
        // Four particles at the centre of the lower-left cell: mass split evenly over its corners.
        let ens = ParticleEnsemble::from_positions(vec![[-0.5, -0.5]; 4], 0).unwrap();
        let rho = histogram_density(&ens, &g).unwrap();
        let m = rho.masses();
        for (i, mi) in m.iter().enumerate() {
            let (ix, iy) = g.node(i);
            let expect = if ix <= 1 && iy <= 1 { 0.25 } else { 0.0 };
            assert_abs_diff_eq!(*mi, expect, epsilon = 1e-15);
        }

        let ens = ParticleEnsemble::from_positions(vec![[-1.0, -1.0], [0.0, 0.0], [1.0, 1.0], [0.5, 0.0]], 0).unwrap();
        let m = histogram_density(&ens, &g).unwrap().masses();
        let expect = [0.25, 0.0, 0.0, 0.0, 0.25 + 0.125, 0.125, 0.0, 0.0, 0.25];
        for (a, b) in m.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn histogram_rejects_outside_points_and_has_unit_mass() {
        let g = Grid2D::reference();
        let ens = init_ensemble([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 1000, 2).unwrap();
        let mut inside = ens.clone();
        inside.reflect_into(&g);
        let rho = histogram_density(&inside, &g).unwrap();
        assert_abs_diff_eq!(crate::grid::integrate(rho.field()), 1.0, epsilon = 1e-9);
        let far = ParticleEnsemble::from_positions(vec![[10.0, 0.0]], 0).unwrap();
        assert!(histogram_density(&far, &g).is_err());
    }

    #[test]
    fn simulate_records_and_is_deterministic() {
        let g = Grid2D::reference();
        let cfg = SdeConfig::new(0.01, 1.0, 7, DriftMode::Empirical).unwrap();
        let run = || {
            let mut ens = init_ensemble([0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]], 200, 7).unwrap();
            let mut buf = Vec::new();
            write_snapshot_header(&mut buf).unwrap();
            let sums = simulate(&mut ens, &cfg, &mut ZeroDrift, &g, 10, 4, &mut |e| write_snapshot(&mut buf, e)).unwrap();
            (buf, sums)
        };
        let (a, sa) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        assert_eq!(sa.iter().map(|s| s.step).collect::<Vec<_>>(), vec![0, 4, 8, 10]);

        let mut ens = init_ensemble([0.5, 0.5], [[0.1, 0.0], [0.0, 0.1]], 20, 7).unwrap();
        let before = ens.positions().to_vec();
        let sums = simulate(&mut ens, &cfg, &mut ZeroDrift, &g, 0, 1, &mut |_| Ok(())).unwrap();
        assert_eq!(sums.len(), 1);
        assert_eq!(ens.positions(), &before[..]);
    }

    #[test]
    fn pure_diffusion_covariance_growth() {
        let g = Grid2D::square(50.0, 3).unwrap();
        let cfg = SdeConfig::new(0.01, 2.0, 11, DriftMode::Empirical).unwrap();
        let mut ens = init_ensemble([0.0, 0.0], [[0.1, 0.0], [0.0, 0.1]], 20_000, 11).unwrap();
        simulate(&mut ens, &cfg, &mut ZeroDrift, &g, 100, 100, &mut |_| Ok(())).unwrap();
        let (_, var) = ens.moments();
        // 0.1 + 2 * 0.5 * 1.0, sample-variance standard error about 1.1 * sqrt(2 / n)
        let se = 1.1 * (2.0f64 / 20_000.0).sqrt();
        assert!((var[0] - 1.1).abs() < 4.0 * se && (var[1] - 1.1).abs() < 4.0 * se, "{var:?}");
    }
}
