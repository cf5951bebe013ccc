//! Built-in invariant suite behind the `validate` subcommand.
//!
//! Every check has a stable dotted ID so reports can be diffed across versions.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::grid::{self, DensityField, Grid2D, ScalarField};
use crate::meanfield::{
    energy, explicit_fd_step, gradient_flow_residual, lyapunov_check, run_flow, FlowState, JkoConfig, Stepper,
};
use crate::model::{
    self, phi_cc, phi_ce, CapacitanceModel, ControlPolicy, ErfTerm, InteractionModel, KernelRole,
};
use crate::particles::{init_ensemble, simulate, SdeConfig, DriftMode, ZeroDrift};
use crate::transport::{exact_w2, sinkhorn_w2, CostOperator, DenseCost, DiscreteMeasure};

use super::commands::CommandOutcome;
use super::config::RunConfig;
use super::manifest::Artifacts;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: &'static str,
    pub passed: bool,
    /// Measured quantity compared against `threshold`.
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub drift_flipped: bool,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

#[derive(Debug, Clone, Default)]
pub struct ValidateOptions {
    pub out: Option<PathBuf>,
    /// Reverse every interaction drift; the energy checks are then expected to fail.
    pub flip_drift: bool,
}

fn check(id: &'static str, value: f64, threshold: f64, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        id,
        passed: value <= threshold,
        value,
        threshold,
        detail: detail.into(),
    }
}

/// A check whose computation itself failed counts as a failure.
fn guarded(id: &'static str, threshold: f64, f: impl FnOnce() -> Result<CheckResult>) -> CheckResult {
    f().unwrap_or_else(|e| CheckResult {
        id,
        passed: false,
        value: f64::NAN,
        threshold,
        detail: format!("error: {e}"),
    })
}

/// Interaction strong enough that its drift dominates the entropy on a small domain.
pub(crate) fn strong_model(grid: Grid2D, policy: ControlPolicy) -> Result<InteractionModel> {
    let cc = CapacitanceModel::new(vec![ErfTerm { a: 1.0, c: 1.0 }], 0.5, KernelRole::ChipletChiplet)?;
    let ce = CapacitanceModel::new(vec![ErfTerm { a: 0.8, c: 0.6 }], 0.5, KernelRole::ChipletElectrode)?;
    InteractionModel::new(grid, policy, cc, ce)
}

fn maybe_flip(model: InteractionModel, flip: bool) -> InteractionModel {
    if flip {
        model.with_flipped_drift()
    } else {
        model
    }
}

fn random_measure(rng: &mut ChaCha8Rng, k: usize) -> Result<DiscreteMeasure> {
    let pts = (0..k).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let w = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
    DiscreteMeasure::normalized(pts, w)
}

fn random_density(rng: &mut ChaCha8Rng, grid: Grid2D) -> Result<DensityField> {
    let masses: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>().powi(3)).collect();
    DensityField::from_masses(grid, &masses)
}

fn transport_exact_vs_sinkhorn() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let a = random_measure(&mut rng, m)?;
        let b = random_measure(&mut rng, n)?;
        let (w, _) = exact_w2(&a, &b)?;
        let exact = w * w;
        let eps = 1e-4 * DenseCost::between(&a, &b).max_cost().max(f64::MIN_POSITIVE);
        let (c, _) = sinkhorn_w2(&a, &b, eps, 1e-10, 200_000)?;
        worst = worst.max((c - exact).abs() / exact.max(1e-12));
    }
    Ok(check("transport.exact_vs_sinkhorn", worst, 1e-3, "max relative error of entropic vs exact squared distance, 20 pairs"))
}

fn transport_metric_axioms() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let sizes: [usize; 3] = std::array::from_fn(|_| rng.random_range(1..=6));
        let a = random_measure(&mut rng, sizes[0])?;
        let b = random_measure(&mut rng, sizes[1])?;
        let c = random_measure(&mut rng, sizes[2])?;
        let ab = exact_w2(&a, &b)?.0;
        let ba = exact_w2(&b, &a)?.0;
        let bc = exact_w2(&b, &c)?.0;
        let ac = exact_w2(&a, &c)?.0;
        let aa = exact_w2(&a, &a)?.0;
        worst = worst.max((ab - ba).abs()).max(aa).max(ac - ab - bc).max(-ab);
    }
    Ok(check("transport.metric_axioms", worst, 1e-8, "worst violation of identity, symmetry and triangle inequality, 20 triples"))
}

fn grid_linear_gradient() -> Result<CheckResult> {
    let g = Grid2D::new(-1.0, 2.0, -0.5, 1.5, 9, 7)?;
    let f = ScalarField::from_fn(g, |p| 3.0 * p[0] - 2.0 * p[1] + 0.5);
    let d = grid::gradient(&f);
    let err = d
        .vx()
        .iter()
        .map(|v| (v - 3.0).abs())
        .chain(d.vy().iter().map(|v| (v + 2.0).abs()))
        .fold(0.0, f64::max);
    Ok(check("grid.linear_gradient_exact", err, 1e-12, "max gradient error on an affine field"))
}

fn model_checks(reference: &InteractionModel) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let g = *reference.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pairs = |rng: &mut ChaCha8Rng| -> Vec<(grid::Point, grid::Point)> {
        let mut pt = || [rng.random_range(g.x_min()..=g.x_max()), rng.random_range(g.y_min()..=g.y_max())];
        (0..1000).map(|_| (pt(), pt())).collect()
    };

    out.push(guarded("model.phi_cc_symmetry", 1e-12, || {
        let ctx = reference.context(random_density(&mut rng, g)?, 0.0)?;
        let mut worst = 0.0_f64;
        for (x, y) in pairs(&mut rng) {
            let (a, b) = (phi_cc(x, y, 0.0, &ctx)?, phi_cc(y, x, 0.0, &ctx)?);
            worst = worst.max((a - b).abs() / (1.0 + a.abs()));
        }
        Ok(check("model.phi_cc_symmetry", worst, 1e-12, "max |phi_cc(x,y) - phi_cc(y,x)| over 1000 pairs"))
    }));

    out.push(guarded("model.potentials_nonnegative", 0.0, || {
        let ctx = reference.context(random_density(&mut rng, g)?, 0.0)?;
        let mut most_negative = 0.0_f64;
        for (x, y) in pairs(&mut rng) {
            most_negative = most_negative.max(-phi_cc(x, y, 0.0, &ctx)?).max(-phi_ce(x, y, 0.0, &ctx)?);
        }
        Ok(check("model.potentials_nonnegative", most_negative, 0.0, "largest negative part of phi_cc and phi_ce"))
    }));

    out.push(guarded("model.constant_control_zero", 1e-12, || {
        let m = InteractionModel::new(g, ControlPolicy::constant(3.0), reference.ccap().clone(), reference.ecap().clone())?;
        let ctx = m.context(random_density(&mut rng, g)?, 0.0)?;
        let e = energy(&ctx, 1.0);
        let worst = model::drift_field(&ctx).max_abs().max(e.phi_cc.abs()).max(e.phi_ce.abs());
        Ok(check("model.constant_control_zero", worst, 1e-12, "drift and interaction energy under constant control"))
    }));

    out.push(guarded("model.ubar_bounds", 1e-12, || {
        let (lo, hi) = reference.policy().bounds();
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let ctx = reference.context(random_density(&mut rng, g)?, 0.0)?;
            for u in ctx.ubar().values() {
                worst = worst.max(lo - u).max(u - hi);
            }
        }
        Ok(check("model.ubar_bounds", worst, 1e-12, "largest excursion of ubar outside the voltage range, 100 densities"))
    }));

    out.push(guarded("model.drift_bound_finite", f64::MAX, || {
        let ctx = reference.context(random_density(&mut rng, g)?, 0.0)?;
        let b = model::drift_bound_report(&ctx);
        let v = if b.is_finite() { b } else { f64::INFINITY };
        Ok(check("model.drift_bound_finite", v, f64::MAX, "max drift component on a random density"))
    }));
    out
}

fn particles_diffusion() -> Result<CheckResult> {
    let g = Grid2D::square(50.0, 11)?;
    let s0 = 0.3;
    let mut ens = init_ensemble([0.0, 0.0], [[s0, 0.0], [0.0, s0]], 20_000, 99)?;
    let cfg = SdeConfig::new(0.01, 1.0, 99, DriftMode::Empirical)?;
    let sums = simulate(&mut ens, &cfg, &mut ZeroDrift, &g, 50, 50, &mut |_| Ok(()))?;
    let first = sums.first().expect("initial summary");
    let last = sums.last().expect("final summary");
    let expected = [first.var[0] + 2.0 * last.t, first.var[1] + 2.0 * last.t];
    let rel = (0..2).map(|k| (last.var[k] - expected[k]).abs() / expected[k]).fold(0.0, f64::max);
    Ok(check("particles.diffusion_variance", rel, 0.03, "relative variance error of free particles at t = 0.5"))
}

struct HeatRun {
    variance_error: f64,
    mass_error: f64,
}

fn heat_run(model: &InteractionModel, rho0: DensityField, stepper: Stepper, steps: usize) -> Result<HeatRun> {
    let (_, v0) = rho0.moments();
    let st: FlowState = run_flow(rho0, model, 1.0, &stepper, steps, &mut |_| Ok(()))?;
    let (_, v) = st.density.moments();
    let err = (0..2)
        .map(|k| (v[k] - (v0[k] + 2.0 * st.t)).abs() / (v0[k] + 2.0 * st.t))
        .fold(0.0, f64::max);
    let mass: f64 = st.density.masses().iter().sum();
    Ok(HeatRun {
        variance_error: err,
        mass_error: (mass - 1.0).abs(),
    })
}

fn meanfield_heat(reference: &InteractionModel) -> Vec<CheckResult> {
    let run = || -> Result<(HeatRun, HeatRun)> {
        let g = Grid2D::square(6.0, 49)?;
        let m = InteractionModel::new(g, ControlPolicy::constant(0.0), reference.ccap().clone(), reference.ecap().clone())?;
        let rho0 = DensityField::gaussian(g, [0.0, 0.0], [[0.25, 0.0], [0.0, 0.25]])?;
        let explicit = heat_run(&m, rho0.clone(), Stepper::ExplicitFd { dt: 0.005 }, 40)?;
        let jko = heat_run(&m, rho0, Stepper::Jko(JkoConfig::with_tau(0.02)), 10)?;
        Ok((explicit, jko))
    };
    match run() {
        Ok((e, j)) => vec![
            check("meanfield.heat_explicit", e.variance_error, 0.01, "explicit scheme: relative error of variance growth 2t at t = 0.2"),
            check("meanfield.heat_jko", j.variance_error, 0.01, "proximal scheme: relative error of variance growth 2t at t = 0.2"),
            check(
                "meanfield.mass_conservation",
                e.mass_error.max(j.mass_error),
                1e-9,
                "worst |total mass - 1| after both heat runs",
            ),
        ],
        Err(err) => ["meanfield.heat_explicit", "meanfield.heat_jko", "meanfield.mass_conservation"]
            .into_iter()
            .map(|id| CheckResult {
                id,
                passed: false,
                value: f64::NAN,
                threshold: 0.0,
                detail: format!("error: {err}"),
            })
            .collect(),
    }
}

fn lyapunov(id: &'static str, model: &InteractionModel, rho0: DensityField, beta: f64, stepper: Stepper, steps: usize) -> CheckResult {
    guarded(id, 0.0, || {
        let st = run_flow(rho0, model, beta, &stepper, steps, &mut |_| Ok(()))?;
        let rep = lyapunov_check(&st.totals());
        Ok(CheckResult {
            id,
            passed: rep.passed,
            value: rep.worst_excess,
            threshold: 0.0,
            detail: format!("{} steps, {} energy increases beyond tolerance", rep.checked, rep.violations.len()),
        })
    })
}

fn uniform_residual(reference: &InteractionModel) -> Result<CheckResult> {
    let g = *reference.grid();
    let m = InteractionModel::new(g, ControlPolicy::constant(1.0), reference.ccap().clone(), reference.ecap().clone())?;
    let rho = DensityField::uniform(g);
    let dt = 1e-3;
    let next = explicit_fd_step(&rho, &m, 0.0, 1.0, dt)?.density;
    let r = gradient_flow_residual(&rho, &next, dt, &m, 0.0, 1.0)?;
    Ok(check("meanfield.uniform_residual", r, 1e-10, "gradient-flow residual of the stationary uniform state"))
}

/// Run every check. With `flip_drift` the energy-decay checks must fail.
pub fn run_suite(flip_drift: bool) -> ValidationReport {
    let reference_cfg = RunConfig::default();
    let mut checks = Vec::new();
    checks.push(guarded("transport.exact_vs_sinkhorn", 1e-3, transport_exact_vs_sinkhorn));
    checks.push(guarded("transport.metric_axioms", 1e-8, transport_metric_axioms));
    checks.push(guarded("grid.linear_gradient_exact", 1e-12, grid_linear_gradient));
    match reference_cfg.build_model() {
        Ok(reference) => {
            let reference = maybe_flip(reference, flip_drift);
            checks.extend(model_checks(&reference));
            checks.push(guarded("particles.diffusion_variance", 0.03, particles_diffusion));
            checks.extend(meanfield_heat(&reference));
            checks.push(match reference_cfg.initial_density(*reference.grid()) {
                Ok(rho0) => lyapunov(
                    "meanfield.lyapunov_reference",
                    &reference,
                    rho0,
                    reference_cfg.beta(),
                    Stepper::Jko(JkoConfig::with_tau(reference_cfg.flow.tau)),
                    10,
                ),
                Err(e) => guarded("meanfield.lyapunov_reference", 0.0, || Err(e)),
            });
            checks.push(guarded("meanfield.uniform_residual", 1e-10, || uniform_residual(&reference)));
        }
        Err(e) => checks.push(guarded("model.reference", 0.0, || Err(e))),
    }
    let strong = Grid2D::square(2.0, 13).and_then(|g| {
        // weak enough noise that reversing the drift makes every step climb
        let m = strong_model(g, ControlPolicy::new([3.0, -1.0], -400.0, 400.0)?)?;
        let rho0 = DensityField::gaussian(g, [0.4, -0.3], [[0.3, 0.0], [0.0, 0.2]])?;
        Ok((maybe_flip(m, flip_drift), rho0))
    });
    match strong {
        Ok((m, rho0)) => {
            checks.push(lyapunov("meanfield.lyapunov_strong_jko", &m, rho0.clone(), 10.0, Stepper::Jko(JkoConfig::with_tau(0.05)), 10));
            checks.push(lyapunov("meanfield.lyapunov_strong_explicit", &m, rho0, 10.0, Stepper::ExplicitFd { dt: 0.002 }, 100));
        }
        Err(e) => checks.push(guarded("meanfield.lyapunov_strong_jko", 0.0, || Err(e))),
    }
    ValidationReport {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        drift_flipped: flip_drift,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

/// Print the report as JSON on stdout and optionally save it with a manifest.
pub fn cmd_validate(opts: &ValidateOptions) -> Result<CommandOutcome> {
    let report = run_suite(opts.flip_drift);
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = &opts.out {
        let mut art = Artifacts::create(dir)?;
        art.write_json("validate_report.json", &report)?;
        art.finish(
            "validate",
            None,
            serde_json::json!({"drift_flipped": opts.flip_drift}),
            serde_json::json!({"passed": report.passed}),
        )?;
    }
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    Ok(CommandOutcome {
        invariants_passed: report.passed,
        summary: if failed.is_empty() {
            format!("validate: all {} checks passed", report.checks.len())
        } else {
            format!("validate: {} of {} checks failed: {}", failed.len(), report.checks.len(), failed.join(", "))
        },
    })
}
