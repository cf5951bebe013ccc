//! The `flow`, `particles` and `capacitance-dump` subcommands.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::VectorField;
use crate::meanfield::{
    default_grid_eps, default_jko_eps, lyapunov_check, particle_consistency_metric, run_flow, PdeCompanion, Stepper,
};
use crate::particles::{
    euler_maruyama_step, init_ensemble, interpolate_drift, write_snapshot, write_snapshot_header, DriftMode,
    DriftProvider, EmpiricalDrift, ParticleEnsemble,
};

use super::config::RunConfig;
use super::manifest::Artifacts;

/// Result of a command that ran to completion.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutcome {
    /// False when a post-run invariant check failed (exit status 4).
    pub invariants_passed: bool,
    pub summary: String,
}

fn is_solver_failure(e: &Error) -> bool {
    matches!(
        e,
        Error::Convergence { .. } | Error::Numerical(_) | Error::NumericalBlowup { .. } | Error::Capacity { .. }
    )
}

fn resolved_stepper(cfg: &RunConfig, stepper: &Stepper) -> serde_json::Value {
    match stepper {
        Stepper::Jko(j) => {
            let grid = cfg.build_grid().ok();
            let eps = j
                .eps
                .or_else(|| grid.map(|g| default_jko_eps(&g, j.tau, cfg.beta(), j.compensate)));
            json!({"scheme": "jko", "tau": j.tau, "eps": eps, "tol": j.tol, "max_iter": j.max_iter, "compensate": j.compensate})
        }
        Stepper::ExplicitFd { dt } => json!({"scheme": "explicit_fd", "dt": dt}),
    }
}

/// Evolve the configured initial density and check that the free energy never rises.
pub fn cmd_flow(cfg: &RunConfig) -> Result<CommandOutcome> {
    let model = cfg.build_model()?;
    let grid = *model.grid();
    let rho0 = cfg.initial_density(grid)?;
    let stepper = cfg.stepper(&model)?;
    let beta = cfg.beta();
    let steps = cfg.flow.steps;
    let every = cfg.flow.snapshot_every;
    let resolved = resolved_stepper(cfg, &stepper);

    let mut art = Artifacts::create(&cfg.output.dir)?;
    let mut last_ok: Option<(usize, f64)> = None;
    let result = run_flow(rho0, &model, beta, &stepper, steps, &mut |s| {
        if s.step % every == 0 || s.step == steps {
            let mut w = art.writer(&format!("density_step{:05}.csv", s.step))?;
            s.density.field().write_csv(&mut w)?;
            w.flush()?;
        }
        last_ok = Some((s.step, s.t));
        Ok(())
    });
    let state = match result {
        Ok(state) => state,
        Err(e) if is_solver_failure(&e) => {
            let diag = json!({
                "error": e.to_string(),
                "last_completed_step": last_ok.map(|(k, _)| k),
                "last_completed_t": last_ok.map(|(_, t)| t),
            });
            art.write_json("diagnostics.json", &diag)?;
            art.finish("flow", Some(cfg), resolved, json!({"status": "solver_failure"}))?;
            return Err(e);
        }
        Err(e) => return Err(e),
    };

    {
        let mut w = art.writer("energy.csv")?;
        state.write_energy_csv(&mut w)?;
        w.flush()?;
    }
    let report = lyapunov_check(&state.totals());
    let mass: f64 = state.density.masses().iter().sum();
    let outcome = json!({
        "status": if report.passed { "ok" } else { "energy_increase" },
        "steps": state.step,
        "t_final": state.t,
        "mass_final": mass,
        "clipped_mass": state.clipped_mass,
        "energy_initial": state.totals().first(),
        "energy_final": state.totals().last(),
        "lyapunov": report,
    });
    art.finish("flow", Some(cfg), resolved, outcome)?;
    let summary = format!(
        "flow: {} steps to t = {:.4}, energy {:.6e} -> {:.6e}, lyapunov {}",
        state.step,
        state.t,
        state.totals()[0],
        state.totals().last().copied().unwrap_or(f64::NAN),
        if report.passed { "ok" } else { "FAILED" }
    );
    Ok(CommandOutcome {
        invariants_passed: report.passed,
        summary,
    })
}

/// Drift fields of a companion density, precomputed once and shared by many ensembles.
struct ReplayDrift<'a> {
    fields: &'a [VectorField],
}

impl DriftProvider for ReplayDrift<'_> {
    fn drifts(&mut self, ens: &ParticleEnsemble) -> Result<Vec<[f64; 2]>> {
        let f = self
            .fields
            .get(ens.step())
            .ok_or_else(|| Error::Validation(format!("no companion drift for step {}", ens.step())))?;
        interpolate_drift(f, ens)
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct SweepRow {
    n: usize,
    seed: u64,
    w2: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn write_moments_header<W: Write>(mut w: W) -> Result<()> {
    writeln!(w, "step,t,mean_x,mean_y,var_x,var_y")?;
    Ok(())
}

fn write_moments<W: Write>(mut w: W, ens: &ParticleEnsemble) -> Result<()> {
    let (m, v) = ens.moments();
    writeln!(w, "{},{},{},{},{},{}", ens.step(), ens.t(), m[0], m[1], v[0], v[1])?;
    Ok(())
}

/// Simulate the particle system next to a grid companion and track their distance.
pub fn cmd_particles(cfg: &RunConfig) -> Result<CommandOutcome> {
    let model = cfg.build_model()?;
    let grid = *model.grid();
    let beta = cfg.beta();
    let p = &cfg.particles;
    let sde = cfg.sde_config(cfg.seed)?;
    let rho0 = cfg.initial_density(grid)?;
    let metric_eps = default_grid_eps(&grid);

    let mut art = Artifacts::create(&cfg.output.dir)?;
    let mut ens = init_ensemble(cfg.initial.mean, cfg.initial.cov, p.n, cfg.seed)?;
    ens.reflect_into(&grid);
    let mut companion = PdeCompanion::new(&model, beta, rho0.clone(), p.dt)?;
    let mut empirical = match p.drift_mode {
        DriftMode::Empirical => Some(EmpiricalDrift::new(&model, p.fd_step)?),
        DriftMode::Meanfield => None,
    };

    let mut particles_csv = art.writer("particles.csv")?;
    let mut moments_csv = art.writer("moments.csv")?;
    let mut consistency_csv = art.writer("consistency.csv")?;
    write_snapshot_header(&mut particles_csv)?;
    write_moments_header(&mut moments_csv)?;
    writeln!(consistency_csv, "step,t,w2")?;
    let mut final_w2 = f64::NAN;
    for k in 0..=p.steps {
        if k > 0 {
            match empirical.as_mut() {
                Some(drift) => {
                    euler_maruyama_step(&mut ens, &sde, drift, &grid)?;
                    companion.step()?;
                }
                None => euler_maruyama_step(&mut ens, &sde, &mut companion, &grid)?,
            }
        }
        if k % p.snapshot_every == 0 || k == p.steps {
            write_snapshot(&mut particles_csv, &ens)?;
            write_moments(&mut moments_csv, &ens)?;
            final_w2 = particle_consistency_metric(&ens, companion.density(), Some(metric_eps))?;
            writeln!(consistency_csv, "{},{},{}", ens.step(), ens.t(), final_w2)?;
        }
    }
    particles_csv.flush()?;
    moments_csv.flush()?;
    consistency_csv.flush()?;
    drop((particles_csv, moments_csv, consistency_csv));

    let mut invariants_passed = true;
    let mut sweep_json = serde_json::Value::Null;
    if !p.sweep.is_empty() {
        // The companion does not depend on the particles, so its drift history is shared.
        let mut comp = PdeCompanion::new(&model, beta, rho0, p.dt)?;
        let mut fields = Vec::with_capacity(p.steps);
        for _ in 0..p.steps {
            fields.push(comp.current_drift()?);
            comp.step()?;
        }
        let pde = comp.density();
        let mut sizes = p.sweep.clone();
        sizes.sort_unstable();
        sizes.dedup();
        let jobs: Vec<(usize, u64)> = sizes
            .iter()
            .flat_map(|&n| (0..p.sweep_seeds as u64).map(move |s| (n, s)))
            .collect();
        let rows = jobs
            .par_iter()
            .map(|&(n, s)| {
                let seed = cfg.seed.wrapping_add(s);
                let sde = cfg.sde_config(seed)?;
                let mut e = init_ensemble(cfg.initial.mean, cfg.initial.cov, n, seed)?;
                e.reflect_into(&grid);
                let mut drift = ReplayDrift { fields: &fields };
                for _ in 0..p.steps {
                    euler_maruyama_step(&mut e, &sde, &mut drift, &grid)?;
                }
                let w2 = particle_consistency_metric(&e, pde, Some(metric_eps))?;
                Ok(SweepRow { n, seed, w2 })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut w = art.writer("sweep.csv")?;
        writeln!(w, "n,seed,w2")?;
        for r in &rows {
            writeln!(w, "{},{},{}", r.n, r.seed, r.w2)?;
        }
        w.flush()?;
        let medians: Vec<(usize, f64)> = sizes
            .iter()
            .map(|&n| (n, median(rows.iter().filter(|r| r.n == n).map(|r| r.w2).collect())))
            .collect();
        let mut w = art.writer("sweep_summary.csv")?;
        writeln!(w, "n,median_w2")?;
        for (n, m) in &medians {
            writeln!(w, "{n},{m}")?;
        }
        w.flush()?;
        let decreasing = medians.windows(2).all(|pair| pair[1].1 < pair[0].1);
        invariants_passed = decreasing;
        sweep_json = json!({"medians": medians, "strictly_decreasing": decreasing});
    }

    let outcome = json!({
        "status": if invariants_passed { "ok" } else { "sweep_not_decreasing" },
        "t_final": ens.t(),
        "w2_final": final_w2,
        "companion_clipped_mass": companion.clipped_mass(),
        "sweep": sweep_json,
    });
    let resolved = json!({"metric_eps": metric_eps, "drift_mode": p.drift_mode, "beta": beta});
    art.finish("particles", Some(cfg), resolved, outcome)?;
    let mut summary = format!("particles: n = {}, t = {:.4}, W2 to grid density {:.4e}", p.n, ens.t(), final_w2);
    if !invariants_passed {
        summary.push_str("; sweep medians are not strictly decreasing in n");
    }
    Ok(CommandOutcome {
        invariants_passed,
        summary,
    })
}

/// Tabulate both capacitance kernels on `[0, r_max]`.
pub fn cmd_capacitance_dump(cfg: &RunConfig, r_max: f64, samples: usize) -> Result<CommandOutcome> {
    if !(r_max > 0.0 && r_max.is_finite()) {
        return Err(Error::config("--r-max", format!("must be finite and > 0, got {r_max}")));
    }
    if samples < 2 {
        return Err(Error::config("--samples", format!("must be >= 2, got {samples}")));
    }
    let (cc, ce) = cfg.capacitances()?;
    let mut art = Artifacts::create(&cfg.output.dir)?;
    for (name, kernel) in [("capacitance_cc.csv", &cc), ("capacitance_ce.csv", &ce)] {
        let mut w = art.writer(name)?;
        kernel.write_csv(&mut w, r_max, samples)?;
        w.flush()?;
    }
    let resolved = json!({"r_max": r_max, "samples": samples, "cc_terms": cc.terms(), "ce_terms": ce.terms()});
    art.finish("capacitance-dump", Some(cfg), resolved, json!({"status": "ok"}))?;
    Ok(CommandOutcome {
        invariants_passed: true,
        summary: format!("capacitance-dump: {samples} samples on [0, {r_max}] written to {}", cfg.output.dir.display()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::parse_config_str;

    fn config_in(dir: &std::path::Path, extra: &str) -> RunConfig {
        let text = format!(r#"{{"output": {{"dir": {:?}}}{extra}}}"#, dir.display().to_string());
        parse_config_str(&text).unwrap()
    }

    #[test]
    fn zero_steps_writes_only_initial_snapshot() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config_in(tmp.path(), r#", "flow": {"steps": 0}"#);
        let out = cmd_flow(&cfg).unwrap();
        assert!(out.invariants_passed);
        let snaps: Vec<_> = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with("density_step"))
            .collect();
        assert_eq!(snaps, vec!["density_step00000.csv".to_string()]);
        let energy = std::fs::read_to_string(tmp.path().join("energy.csv")).unwrap();
        assert_eq!(energy.lines().count(), 2);
    }

    #[test]
    fn unstable_explicit_step_is_a_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config_in(tmp.path(), r#", "flow": {"scheme": "explicit_fd", "dt": 10.0, "steps": 2}"#);
        match cmd_flow(&cfg).unwrap_err() {
            Error::Config { field, .. } => assert_eq!(field, "flow.dt"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn snapshots_follow_the_cadence() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config_in(tmp.path(), r#", "flow": {"steps": 5, "snapshot_every": 2}"#);
        cmd_flow(&cfg).unwrap();
        for k in [0, 2, 4, 5] {
            assert!(tmp.path().join(format!("density_step{k:05}.csv")).exists(), "{k}");
        }
        assert!(!tmp.path().join("density_step00003.csv").exists());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(tmp.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["files"].as_array().unwrap().len(), 5);
        assert_eq!(manifest["master_seed"], 42);
    }

    #[test]
    fn particles_writes_outputs_in_both_modes() {
        for mode in ["meanfield", "empirical"] {
            let tmp = tempfile::tempdir().unwrap();
            let extra = format!(r#", "particles": {{"n": 50, "steps": 4, "snapshot_every": 2, "drift_mode": "{mode}"}}"#);
            let cfg = config_in(tmp.path(), &extra);
            let out = cmd_particles(&cfg).unwrap();
            assert!(out.invariants_passed);
            let parts = std::fs::read_to_string(tmp.path().join("particles.csv")).unwrap();
            // header plus three snapshots of 50 particles
            assert_eq!(parts.lines().count(), 1 + 3 * 50);
            let cons = std::fs::read_to_string(tmp.path().join("consistency.csv")).unwrap();
            assert_eq!(cons.lines().count(), 4);
        }
    }

    #[test]
    fn capacitance_dump_writes_both_kernels() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config_in(tmp.path(), "");
        cmd_capacitance_dump(&cfg, 1.0, 11).unwrap();
        let cc = std::fs::read_to_string(tmp.path().join("capacitance_cc.csv")).unwrap();
        assert_eq!(cc.lines().count(), 12);
        assert!(cmd_capacitance_dump(&cfg, 1.0, 1).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
