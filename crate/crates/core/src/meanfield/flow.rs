//! Time loop over either stepper, with an energy history.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DensityField, VectorField};
use crate::model::{self, InteractionModel};
use crate::particles::{interpolate_drift, DriftProvider, ParticleEnsemble};

use super::explicit::{explicit_fd_step, explicit_fd_update, stable_dt};
use super::jko::{jko_step, JkoConfig};
use super::{beta_inv, check_beta, energy, EnergyBreakdown};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Jko,
    ExplicitFd,
}

/// A configured time-stepper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepper {
    Jko(JkoConfig),
    ExplicitFd { dt: f64 },
}

impl Stepper {
    pub fn scheme(&self) -> Scheme {
        match self {
            Stepper::Jko(_) => Scheme::Jko,
            Stepper::ExplicitFd { .. } => Scheme::ExplicitFd,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Stepper::Jko(c) => c.tau,
            Stepper::ExplicitFd { dt } => *dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRecord {
    pub step: usize,
    pub t: f64,
    pub energy: EnergyBreakdown,
}

/// State of a running flow, handed to the observer after every step.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub density: DensityField,
    pub t: f64,
    pub step: usize,
    pub scheme: Scheme,
    pub energy_history: Vec<EnergyRecord>,
    /// Total mass clipped by the explicit scheme so far.
    pub clipped_mass: f64,
    /// Inner iterations and residual of the last proximal step.
    pub inner_iterations: usize,
    pub inner_residual: f64,
}

impl FlowState {
    pub fn totals(&self) -> Vec<f64> {
        self.energy_history.iter().map(|r| r.energy.total).collect()
    }

    pub fn last_energy(&self) -> Option<&EnergyBreakdown> {
        self.energy_history.last().map(|r| &r.energy)
    }

    pub fn write_energy_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,t,phi_cc,phi_ce,internal,total")?;
        for r in &self.energy_history {
            let e = &r.energy;
            writeln!(
                out,
                "{},{:.10e},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.step, r.t, e.phi_cc, e.phi_ce, e.internal, e.total
            )?;
        }
        Ok(())
    }
}

/// Evolve `initial` for `steps` steps.
///
/// `observer` sees the initial state and the state after each step; an error
/// from it stops the run.
pub fn run_flow(
    initial: DensityField,
    model: &InteractionModel,
    beta: f64,
    stepper: &Stepper,
    steps: usize,
    observer: &mut dyn FnMut(&FlowState) -> Result<()>,
) -> Result<FlowState> {
    check_beta(beta)?;
    if initial.grid() != model.grid() {
        return Err(Error::Validation("initial density and model use different grids".into()));
    }
    let dt = stepper.dt();
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::config("flow.dt", format!("must be finite and > 0, got {dt}")));
    }
    let e0 = energy(&model.context(initial.clone(), 0.0)?, beta);
    let mut state = FlowState {
        density: initial,
        t: 0.0,
        step: 0,
        scheme: stepper.scheme(),
        energy_history: vec![EnergyRecord {
            step: 0,
            t: 0.0,
            energy: e0,
        }],
        clipped_mass: 0.0,
        inner_iterations: 0,
        inner_residual: 0.0,
    };
    observer(&state)?;
    for k in 1..=steps {
        let next = match stepper {
            Stepper::Jko(cfg) => {
                let out = jko_step(&state.density, model, state.t, beta, cfg)?;
                state.inner_iterations = out.iterations;
                state.inner_residual = out.residual;
                out.density
            }
            Stepper::ExplicitFd { dt } => {
                let out = explicit_fd_step(&state.density, model, state.t, beta, *dt)?;
                state.clipped_mass += out.clipped_mass;
                out.density
            }
        };
        state.density = next;
        state.step = k;
        state.t = k as f64 * dt;
        let e = energy(&model.context(state.density.clone(), state.t)?, beta);
        if !e.total.is_finite() {
            return Err(Error::Numerical(format!("free energy is not finite at step {k}")));
        }
        state.energy_history.push(EnergyRecord {
            step: k,
            t: state.t,
            energy: e,
        });
        observer(&state)?;
    }
    Ok(state)
}

/// Mean-field particle drift: a grid density is advanced alongside the
/// particles with the explicit scheme and its drift field is interpolated
/// at the particle positions.
#[derive(Debug, Clone)]
pub struct PdeCompanion<'m> {
    model: &'m InteractionModel,
    beta: f64,
    density: DensityField,
    t: f64,
    dt: f64,
    clipped_mass: f64,
}

impl<'m> PdeCompanion<'m> {
    pub fn new(model: &'m InteractionModel, beta: f64, initial: DensityField, dt: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("particles.dt", format!("must be finite and > 0, got {dt}")));
        }
        if initial.grid() != model.grid() {
            return Err(Error::Validation("companion density and model use different grids".into()));
        }
        Ok(Self {
            model,
            beta,
            density: initial,
            t: 0.0,
            dt,
            clipped_mass: 0.0,
        })
    }

    pub fn density(&self) -> &DensityField {
        &self.density
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn clipped_mass(&self) -> f64 {
        self.clipped_mass
    }

    /// Drift field of the current companion density.
    pub fn current_drift(&self) -> Result<VectorField> {
        Ok(model::drift_field(&self.model.context(self.density.clone(), self.t)?))
    }

    /// Advance the companion density by one particle step, sub-stepping for stability.
    pub fn step(&mut self) -> Result<()> {
        let f = self.current_drift()?;
        self.advance_from(f)
    }

    fn advance_from(&mut self, mut f: VectorField) -> Result<()> {
        let bi = beta_inv(self.beta);
        let mut remaining = self.dt;
        loop {
            let h = stable_dt(self.model.grid(), bi, f.max_abs());
            // stay a little under the limit so the drift change within the step is covered
            let n = (remaining / (0.9 * h)).ceil().max(1.0);
            let sub = remaining / n;
            let out = explicit_fd_update(&self.density, &f, bi, sub)?;
            self.clipped_mass += out.clipped_mass;
            self.density = out.density;
            self.t += sub;
            remaining -= sub;
            if remaining <= 1e-12 * self.dt {
                return Ok(());
            }
            f = self.current_drift()?;
        }
    }
}

impl DriftProvider for PdeCompanion<'_> {
    fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
        let f = self.current_drift()?;
        let out = interpolate_drift(&f, ens)?;
        self.advance_from(f)?;
        Ok(out)
    }
}
