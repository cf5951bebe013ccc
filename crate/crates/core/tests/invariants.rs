//! Property tests for invariants that must hold for any admissible input.

use chiplet_meanfield::grid::{DensityField, Grid2D};
use chiplet_meanfield::meanfield::{explicit_fd_step, jko_step, stable_dt, JkoConfig};
use chiplet_meanfield::model::{self, CapacitanceModel, ControlPolicy, ErfTerm, InteractionModel, KernelRole};
use chiplet_meanfield::particles::{histogram_density, init_ensemble};
use chiplet_meanfield::transport::{exact_w2, DiscreteMeasure};
use proptest::prelude::*;

fn model_on(grid: Grid2D, gains: [f64; 2], a: f64, c: f64) -> InteractionModel {
    let cc = CapacitanceModel::new(vec![ErfTerm { a, c }], 0.3, KernelRole::ChipletChiplet).unwrap();
    let ce = CapacitanceModel::new(vec![ErfTerm { a: 0.5 * a, c }], 0.3, KernelRole::ChipletElectrode).unwrap();
    InteractionModel::new(grid, ControlPolicy::new(gains, -400.0, 400.0).unwrap(), cc, ce).unwrap()
}

fn measure(points: Vec<(f64, f64, f64)>) -> DiscreteMeasure {
    let pts = points.iter().map(|p| [p.0, p.1]).collect();
    let w = points.iter().map(|p| p.2).collect();
    DiscreteMeasure::normalized(pts, w).unwrap()
}

fn cloud() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, 0.05..1.0f64), 1..=6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn capacitance_is_positive_and_decreasing(a in 0.01..5.0f64, c in 0.05..2.0f64, delta in 0.001..0.5f64, r in 0.0..3.0f64) {
        let k = CapacitanceModel::new(vec![ErfTerm { a, c }], delta, KernelRole::ChipletChiplet).unwrap();
        let (v0, v1) = (k.value(r), k.value(r + 0.01));
        prop_assert!(v0 >= 0.0);
        prop_assert!(v1 <= v0 + 1e-15);
    }

    #[test]
    fn exact_distance_is_a_metric(a in cloud(), b in cloud(), c in cloud()) {
        let (a, b, c) = (measure(a), measure(b), measure(c));
        let ab = exact_w2(&a, &b).unwrap().0;
        let ba = exact_w2(&b, &a).unwrap().0;
        let bc = exact_w2(&b, &c).unwrap().0;
        let ac = exact_w2(&a, &c).unwrap().0;
        prop_assert!((ab - ba).abs() <= 1e-8);
        prop_assert!(ac <= ab + bc + 1e-8);
        prop_assert!(exact_w2(&a, &a).unwrap().0 <= 1e-8);
    }

    #[test]
    fn explicit_step_conserves_mass_and_positivity(
        mx in -1.0..1.0f64, my in -1.0..1.0f64, s in 0.1..0.6f64, g0 in -2.0..2.0f64, g1 in -2.0..2.0f64,
    ) {
        let g = Grid2D::square(2.0, 11).unwrap();
        let m = model_on(g, [g0, g1], 1.0, 0.8);
        let rho = DensityField::gaussian(g, [mx, my], [[s, 0.0], [0.0, s]]).unwrap();
        let f = model::drift_field(&m.context(rho.clone(), 0.0).unwrap());
        let dt = 0.9 * stable_dt(&g, 1.0, f.max_abs());
        let out = explicit_fd_step(&rho, &m, 0.0, 1.0, dt).unwrap();
        let mass: f64 = out.density.masses().iter().sum();
        prop_assert!((mass - 1.0).abs() <= 1e-12);
        prop_assert!(out.density.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn histogram_is_a_probability_density(n in 1usize..300, seed in any::<u64>(), s in 0.05..1.0f64) {
        let g = Grid2D::square(3.0, 9).unwrap();
        let mut ens = init_ensemble([0.2, -0.1], [[s, 0.0], [0.0, s]], n, seed).unwrap();
        ens.reflect_into(&g);
        let h = histogram_density(&ens, &g).unwrap();
        let mass: f64 = h.masses().iter().sum();
        prop_assert!((mass - 1.0).abs() <= 1e-12);
        prop_assert!(h.values().iter().all(|v| *v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn proximal_step_conserves_mass(mx in -0.5..0.5f64, s in 0.2..0.6f64, g0 in -1.5..1.5f64) {
        let g = Grid2D::square(2.0, 9).unwrap();
        let m = model_on(g, [g0, -0.5], 1.0, 0.8);
        let rho = DensityField::gaussian(g, [mx, 0.1], [[s, 0.0], [0.0, s]]).unwrap();
        let out = jko_step(&rho, &m, 0.0, 1.0, &JkoConfig::with_tau(0.05)).unwrap();
        let mass: f64 = out.density.masses().iter().sum();
        prop_assert!((mass - 1.0).abs() <= 1e-9);
        prop_assert!(out.density.values().iter().all(|v| *v >= 0.0));
        prop_assert!(out.residual <= 1e-9);
    }
}
