//! JSON run configuration. Every section and field is optional; missing
//! values take the defaults below, which reproduce the reference experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, Grid2D};
use crate::meanfield::{stable_dt, JkoConfig, Scheme, Stepper};
use crate::model::{self, CapacitanceModel, ControlPolicy, ErfTerm, InteractionModel, KernelRole};
use crate::particles::{DriftMode, SdeConfig, DEFAULT_FD_STEP};

/// Largest node count per axis accepted from a config file.
pub const MAX_NODES_PER_AXIS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainConfig,
    pub grid: GridConfig,
    pub physics: PhysicsConfig,
    pub control: ControlConfig,
    pub capacitance: CapacitanceConfig,
    pub initial: InitialConfig,
    pub flow: FlowConfig,
    pub particles: ParticlesConfig,
    /// Master seed for particle noise and initial sampling.
    pub seed: u64,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: DomainConfig::default(),
            grid: GridConfig::default(),
            physics: PhysicsConfig::default(),
            control: ControlConfig::default(),
            capacitance: CapacitanceConfig::default(),
            initial: InitialConfig::default(),
            flow: FlowConfig::default(),
            particles: ParticlesConfig::default(),
            seed: 42,
            output: OutputConfig::default(),
        }
    }
}

/// Rectangular domain in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            x_min: -4.0,
            x_max: 4.0,
            y_min: -4.0,
            y_max: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 20, ny: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsConfig {
    pub beta: f64,
    /// Drop the noise and entropy entirely (`beta = inf`).
    pub deterministic: bool,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            deterministic: false,
        }
    }
}

/// Affine control `u(x) = g . x`, clamped to `[u_min, u_max]` volts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub gains: [f64; 2],
    pub u_min: f64,
    pub u_max: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            gains: [8.5e-3, -1e-2],
            u_min: -400.0,
            u_max: 400.0,
        }
    }
}

/// Erf-sum capacitance kernels: explicit term lists or seeded sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitanceConfig {
    /// Number of sampled terms per kernel (ignored for explicit lists).
    pub terms: usize,
    pub seed: u64,
    /// Half chiplet size in mm.
    pub delta: f64,
    pub cc: Option<Vec<ErfTerm>>,
    pub ce: Option<Vec<ErfTerm>>,
}

impl Default for CapacitanceConfig {
    fn default() -> Self {
        Self {
            terms: 3,
            seed: 7,
            delta: 0.01,
            cc: None,
            ce: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            mean: [0.5, 0.5],
            cov: [[0.1, 0.0], [0.0, 0.1]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub scheme: Scheme,
    /// Proximal step (JKO).
    pub tau: f64,
    /// Explicit step; `None` picks half the stability limit of the initial state.
    pub dt: Option<f64>,
    pub steps: usize,
    /// JKO regularization; `None` uses the default rule.
    pub eps: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub compensate: bool,
    pub snapshot_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        let jko = JkoConfig::default();
        Self {
            scheme: Scheme::Jko,
            tau: jko.tau,
            dt: None,
            steps: 100,
            eps: None,
            tol: jko.tol,
            max_iter: jko.max_iter,
            compensate: jko.compensate,
            snapshot_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParticlesConfig {
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    pub drift_mode: DriftMode,
    pub fd_step: f64,
    pub snapshot_every: usize,
    /// Ensemble sizes for the consistency sweep; empty disables it.
    pub sweep: Vec<usize>,
    /// Seeds per sweep size (the median is reported).
    pub sweep_seeds: usize,
}

impl Default for ParticlesConfig {
    fn default() -> Self {
        Self {
            n: 500,
            dt: 0.01,
            steps: 100,
            drift_mode: DriftMode::Meanfield,
            fd_step: DEFAULT_FD_STEP,
            snapshot_every: 10,
            sweep: Vec::new(),
            sweep_seeds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Read, parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::config("<file>", format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Parse and validate config text; errors name the offending field path.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path.is_empty() || path == "." { "<root>".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {v}")))
    }
}

fn at_least(field: &str, v: usize, min: usize) -> Result<()> {
    if v >= min {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be >= {min}, got {v}")))
    }
}

fn check_terms(field: &str, terms: &Option<Vec<ErfTerm>>) -> Result<()> {
    let Some(terms) = terms else { return Ok(()) };
    if terms.is_empty() {
        return Err(Error::config(field, "explicit term list is empty"));
    }
    for (i, t) in terms.iter().enumerate() {
        if !(t.a >= 0.0 && t.a.is_finite()) {
            return Err(Error::config(format!("{field}[{i}].a"), format!("must be finite and >= 0, got {}", t.a)));
        }
        positive(&format!("{field}[{i}].c"), t.c)?;
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        for (name, v) in [("domain.x_min", d.x_min), ("domain.x_max", d.x_max), ("domain.y_min", d.y_min), ("domain.y_max", d.y_max)] {
            if !v.is_finite() {
                return Err(Error::config(name, "must be finite"));
            }
        }
        if d.x_max <= d.x_min {
            return Err(Error::config("domain.x_max", format!("must exceed x_min = {}", d.x_min)));
        }
        if d.y_max <= d.y_min {
            return Err(Error::config("domain.y_max", format!("must exceed y_min = {}", d.y_min)));
        }
        for (name, n) in [("grid.nx", self.grid.nx), ("grid.ny", self.grid.ny)] {
            at_least(name, n, 3)?;
            if n > MAX_NODES_PER_AXIS {
                return Err(Error::config(name, format!("must be <= {MAX_NODES_PER_AXIS}, got {n}")));
            }
        }
        if !self.physics.deterministic {
            positive("physics.beta", self.physics.beta)?;
        }
        let c = &self.control;
        if c.gains.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("control.gains", "must be finite"));
        }
        if !(c.u_min.is_finite() && c.u_max.is_finite() && c.u_min < c.u_max) {
            return Err(Error::config("control.u_max", format!("need finite u_min < u_max, got [{}, {}]", c.u_min, c.u_max)));
        }
        let cap = &self.capacitance;
        at_least("capacitance.terms", cap.terms, 1)?;
        positive("capacitance.delta", cap.delta)?;
        check_terms("capacitance.cc", &cap.cc)?;
        check_terms("capacitance.ce", &cap.ce)?;
        let init = &self.initial;
        if !(d.x_min..=d.x_max).contains(&init.mean[0]) || !(d.y_min..=d.y_max).contains(&init.mean[1]) {
            return Err(Error::config("initial.mean", "must lie inside the domain"));
        }
        let cov = init.cov;
        let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
        if !(cov[0][0] > 0.0 && det > 0.0 && cov[0][1] == cov[1][0]) {
            return Err(Error::config("initial.cov", "must be symmetric positive definite"));
        }
        let f = &self.flow;
        positive("flow.tau", f.tau)?;
        if let Some(dt) = f.dt {
            positive("flow.dt", dt)?;
        }
        if let Some(eps) = f.eps {
            positive("flow.eps", eps)?;
        }
        positive("flow.tol", f.tol)?;
        at_least("flow.max_iter", f.max_iter, 1)?;
        at_least("flow.snapshot_every", f.snapshot_every, 1)?;
        let p = &self.particles;
        at_least("particles.n", p.n, 1)?;
        positive("particles.dt", p.dt)?;
        positive("particles.fd_step", p.fd_step)?;
        at_least("particles.snapshot_every", p.snapshot_every, 1)?;
        at_least("particles.sweep_seeds", p.sweep_seeds, 1)?;
        if let Some(i) = p.sweep.iter().position(|n| *n == 0) {
            return Err(Error::config(format!("particles.sweep[{i}]"), "ensemble size must be >= 1"));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        if self.physics.deterministic {
            f64::INFINITY
        } else {
            self.physics.beta
        }
    }

    pub fn build_grid(&self) -> Result<Grid2D> {
        let d = &self.domain;
        Grid2D::new(d.x_min, d.x_max, d.y_min, d.y_max, self.grid.nx, self.grid.ny)
    }

    pub fn capacitances(&self) -> Result<(CapacitanceModel, CapacitanceModel)> {
        let cap = &self.capacitance;
        let (sampled_cc, sampled_ce) = CapacitanceModel::sample_pair(cap.seed, cap.terms, cap.delta)?;
        let cc = match &cap.cc {
            Some(t) => CapacitanceModel::new(t.clone(), cap.delta, KernelRole::ChipletChiplet)?,
            None => sampled_cc,
        };
        let ce = match &cap.ce {
            Some(t) => CapacitanceModel::new(t.clone(), cap.delta, KernelRole::ChipletElectrode)?,
            None => sampled_ce,
        };
        Ok((cc, ce))
    }

    pub fn build_model(&self) -> Result<InteractionModel> {
        let c = &self.control;
        let policy = ControlPolicy::new(c.gains, c.u_min, c.u_max)?;
        let (cc, ce) = self.capacitances()?;
        InteractionModel::new(self.build_grid()?, policy, cc, ce)
    }

    pub fn initial_density(&self, grid: Grid2D) -> Result<DensityField> {
        DensityField::gaussian(grid, self.initial.mean, self.initial.cov)
    }

    /// The configured time stepper; the explicit step defaults to half the
    /// stability limit at the initial density.
    pub fn stepper(&self, model: &InteractionModel) -> Result<Stepper> {
        let f = &self.flow;
        match f.scheme {
            Scheme::Jko => Ok(Stepper::Jko(JkoConfig {
                tau: f.tau,
                eps: f.eps,
                tol: f.tol,
                max_iter: f.max_iter,
                compensate: f.compensate,
            })),
            Scheme::ExplicitFd => {
                let dt = match f.dt {
                    Some(dt) => dt,
                    None => {
                        let rho = self.initial_density(*model.grid())?;
                        let drift = model::drift_field(&model.context(rho, 0.0)?);
                        0.5 * stable_dt(model.grid(), crate::meanfield::beta_inv(self.beta()), drift.max_abs())
                    }
                };
                if !dt.is_finite() {
                    return Err(Error::config("flow.dt", "no finite default step: set flow.dt explicitly"));
                }
                Ok(Stepper::ExplicitFd { dt })
            }
        }
    }

    pub fn sde_config(&self, seed: u64) -> Result<SdeConfig> {
        let p = &self.particles;
        let mut cfg = SdeConfig::new(p.dt, self.beta(), seed, p.drift_mode)?;
        cfg.fd_step = p.fd_step;
        Ok(cfg)
    }
}
