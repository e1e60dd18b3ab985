mod common;

use common::{circular_arc, rel, rng, rows};
use freetime_core::action::{
    action_fixed_time, action_gradient, action_supercritical, gradient_norm, jm_length, path_energy_profile,
    DiscretePath, EnergyLevel,
};
use freetime_core::geometry::{potential, Configuration, Masses};
use freetime_core::minimizer::refine;
use proptest::prelude::*;

fn h(v: f64) -> EnergyLevel {
    EnergyLevel::new(v).unwrap()
}

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(11);
    for _ in 0..20 {
        let p = common::random_path(&mut r, 3, 12);
        let got = common::euclidean(&action_gradient(&p).unwrap(), p.masses());
        let want = common::fd_action_gradient(&p, 1e-6);
        let err = common::distance(&got, &want) / common::norm(&want);
        assert!(err < 1e-6, "relative gradient error {err:e}");
    }
}

#[test]
fn straight_single_body_has_zero_gradient() {
    let p = DiscretePath::straight(&rows(&[[0.0, 1.0]]), &rows(&[[4.0, -2.0]]), 2.0, 16, Masses::unit(1)).unwrap();
    let g = action_gradient(&p).unwrap();
    assert_eq!(g.len(), 15);
    assert!(gradient_norm(&g, p.masses()) < 1e-13);
    // pure kinetic action l^2 / (2 tau)
    assert!(rel(action_fixed_time(&p).unwrap(), 25.0 / 4.0) < 1e-14);
    let profile = path_energy_profile(&p).unwrap();
    assert!(profile.iter().all(|e| (e - 25.0 / 8.0).abs() < 1e-13));
    assert!(rel(jm_length(&p, h(0.5)).unwrap(), 5.0) < 1e-14);
}

#[test]
fn constant_path_values() {
    let x = rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]]);
    let m = Masses::new(vec![1.0, 2.0, 0.5]).unwrap();
    let u = potential(&x, &m).unwrap();
    let p = DiscretePath::uniform(0.0, 1.5, vec![x; 9], m).unwrap();
    assert!(rel(action_fixed_time(&p).unwrap(), 1.5 * u) < 1e-14);
    assert!(rel(action_supercritical(&p, h(0.5)).unwrap(), 1.5 * (u + 0.5)) < 1e-14);
    assert_eq!(jm_length(&p, h(0.5)).unwrap(), 0.0);
    assert!(path_energy_profile(&p).unwrap().iter().all(|e| rel(*e, -u) < 1e-14));
}

#[test]
fn circular_arc_quadrature_is_second_order() {
    // the exact arc has L = T + U = 1/4 + 1/2
    let tau = 3.0;
    let errs: Vec<f64> = [50, 100, 200, 400]
        .iter()
        .map(|&k| (action_fixed_time(&circular_arc(tau, k)).unwrap() - 0.75 * tau).abs())
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.8..=2.2).contains(&order), "measured order {order}");
    }
}

#[test]
fn exact_samples_have_vanishing_gradient() {
    let norms: Vec<f64> = [50, 100, 200]
        .iter()
        .map(|&k| {
            let p = circular_arc(3.0, k);
            gradient_norm(&action_gradient(&p).unwrap(), p.masses())
        })
        .collect();
    for w in norms.windows(2) {
        assert!(w[0] / w[1] > 3.5, "gradient norms {norms:?}");
    }
}

#[test]
fn jm_length_refinement_is_second_order() {
    // a fixed non-circular arc, resampled from its K = 200 polygon
    let nodes: Vec<Configuration> = (0..=800)
        .map(|i| {
            let s = i as f64 / 800.0;
            let r = 2.0 + 0.5 * s * s;
            rows(&[[r * s.cos(), r * s.sin()], [-(r * s.cos()), -(r * s.sin())]])
        })
        .collect();
    let sub = |k: usize| {
        let stride = 800 / k;
        let ns = nodes.iter().step_by(stride).cloned().collect();
        DiscretePath::uniform(0.0, 2.0, ns, Masses::unit(2)).unwrap()
    };
    let fine = jm_length(&sub(800), h(0.5)).unwrap();
    let e200 = (jm_length(&sub(200), h(0.5)).unwrap() - fine).abs();
    let e400 = (jm_length(&sub(400), h(0.5)).unwrap() - fine).abs();
    assert!(e400 < e200 / 3.0 && e200 < 1e-4 * fine, "e200 {e200:e} e400 {e400:e}");
    let refined = refine(&sub(200));
    assert_eq!(refined.intervals(), 400);
}

#[test]
fn json_round_trip_of_a_random_path_is_bit_exact() {
    let mut r = rng(5);
    let p = common::random_path(&mut r, 3, 7);
    let back = DiscretePath::from_json(&p.to_json().unwrap()).unwrap();
    assert_eq!(back, p);
    let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
    for key in ["masses", "dim", "times", "nodes"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reversal_preserves_action_and_length(seed in any::<u64>()) {
        let p = common::random_path(&mut rng(seed), 3, 10);
        let q = p.reversed();
        prop_assert!(rel(action_fixed_time(&p).unwrap(), action_fixed_time(&q).unwrap()) < 1e-13);
        prop_assert!(rel(jm_length(&p, h(0.5)).unwrap(), jm_length(&q, h(0.5)).unwrap()) < 1e-13);
    }

    #[test]
    fn jm_length_is_bounded_by_the_supercritical_action(seed in any::<u64>(), hv in 0.0..3.0f64) {
        let p = common::random_path(&mut rng(seed), 3, 10);
        let a = action_supercritical(&p, h(hv)).unwrap();
        prop_assert!(jm_length(&p, h(hv)).unwrap() <= a * (1.0 + 1e-14));
    }

    #[test]
    fn supercritical_action_increases_with_h(seed in any::<u64>()) {
        let p = common::random_path(&mut rng(seed), 2, 6);
        let v: Vec<f64> = [0.0, 0.5, 1.0].iter().map(|&e| action_supercritical(&p, h(e)).unwrap()).collect();
        prop_assert_eq!(v[0], action_fixed_time(&p).unwrap());
        prop_assert!(v[0] < v[1] && v[1] < v[2]);
    }

    #[test]
    fn action_is_invariant_under_rigid_translation(seed in any::<u64>(), c in prop::collection::vec(-3.0..3.0f64, 2)) {
        let p = common::random_path(&mut rng(seed), 3, 8);
        let nodes = p.nodes().iter().map(|x| x.translated(&c)).collect();
        let q = DiscretePath::new(p.times().to_vec(), nodes, p.masses().clone()).unwrap();
        prop_assert!(rel(action_fixed_time(&p).unwrap(), action_fixed_time(&q).unwrap()) < 1e-12);
    }
}
