mod common;

use common::rows;
use freetime_core::experiments::{
    build_direction_sequence, build_hyperbolic_ray, continuity_probe_c, estimate_horofunction, lambda_doubling,
    partially_hyperbolic_experiment, preset, Config, ExperimentOptions, LambdaRule, Perturbation, ProbeFamily,
    RayOptions,
};
use freetime_core::geometry::{center_of_mass, mass_norm, min_mutual_distance, Configuration, Masses};
use freetime_core::Error;

fn flagship_b() -> Configuration {
    let beta = 1.0 / 6f64.sqrt();
    rows(&[[beta, 0.0], [beta, 0.0], [-2.0 * beta, 0.0]])
}

fn vertical_split() -> Vec<Perturbation> {
    vec![Perturbation { body: 0, direction: vec![0.0, 1.0] }, Perturbation { body: 1, direction: vec![0.0, -1.0] }]
}

#[test]
fn flagship_limit_shape_is_normalized() {
    let m = Masses::unit(3);
    let b = flagship_b();
    assert!(center_of_mass(&b, &m).unwrap().iter().all(|g| g.abs() < 1e-15));
    assert!((0.5 * mass_norm(&b, &m).unwrap().powi(2) - 0.5).abs() < 1e-15);
}

#[test]
fn direction_sequence_invariants() {
    let m = Masses::unit(3);
    let eps = [0.2, 0.1, 0.05, 0.025];
    let seq = build_direction_sequence(&flagship_b(), &m, 0.5, &eps, &vertical_split()).unwrap();
    assert_eq!(seq.len(), 4);
    for a in &seq.a {
        assert!(min_mutual_distance(a) > 0.0);
        assert!(center_of_mass(a, &m).unwrap().iter().all(|g| g.abs() <= 1e-12));
        assert!((0.5 * mass_norm(a, &m).unwrap().powi(2) - 0.5).abs() <= 1e-12);
    }
    // distance to b is linear in eps: the ratio stays bounded and settles
    let d = seq.distances_to_limit();
    let ratios: Vec<f64> = d.iter().zip(eps).map(|(d, e)| d / e).collect();
    assert!(ratios.iter().all(|r| *r > 0.1 && *r < 2.0), "{ratios:?}");
    assert!((ratios[3] - ratios[2]).abs() < (ratios[1] - ratios[0]).abs() + 1e-12);
}

#[test]
fn direction_sequence_errors() {
    let m = Masses::unit(3);
    let b = flagship_b();
    let bad_schedule = build_direction_sequence(&b, &m, 0.5, &[0.1, 0.2], &vertical_split());
    assert!(matches!(bad_schedule, Err(Error::InvalidArgument(_))));
    // moving both coincident bodies the same way keeps them together
    let same = vec![Perturbation { body: 0, direction: vec![0.0, 1.0] }, Perturbation { body: 1, direction: vec![0.0, 1.0] }];
    assert!(matches!(build_direction_sequence(&b, &m, 0.5, &[0.1], &same), Err(Error::Construction(_))));
    let total = Configuration::zeros(3, 2);
    assert!(build_direction_sequence(&total, &m, 0.5, &[0.1], &vertical_split()).is_err());
}

fn two_body() -> (Configuration, Configuration, Masses) {
    let x0 = rows(&[[0.5, 0.3], [-0.5, -0.3]]);
    let s = 0.5f64.sqrt();
    (x0, rows(&[[s, 0.0], [-s, 0.0]]), Masses::unit(2))
}

#[test]
fn two_body_ray_follows_its_direction() {
    let (x0, a, m) = two_body();
    let ray = build_hyperbolic_ray(&x0, &a, &m, 0.5, 100.0, &RayOptions::default()).unwrap();
    assert!(ray.solve.discrete.converged);
    assert!(ray.tail_angle <= 0.05, "tail angle {}", ray.tail_angle);
    assert!(ray.sphere_residual <= 1e-3);
    assert_eq!(ray.endpoint, a.scaled(100.0));
}

#[test]
fn two_body_lambda_doubling_contracts() {
    let (x0, a, m) = two_body();
    let study = lambda_doubling(&x0, &a, &m, 0.5, &[50.0, 100.0, 200.0], &RayOptions::default()).unwrap();
    assert!(study.errors.iter().all(Option::is_none));
    assert_eq!(study.differences.len(), 2);
    assert!(study.contracting, "{:?}", study.differences);
}

#[test]
fn ray_rejects_degenerate_inputs() {
    let one = rows(&[[0.0, 0.0]]);
    let a = rows(&[[1.0, 0.0]]);
    let r = build_hyperbolic_ray(&one, &a, &Masses::unit(1), 0.5, 100.0, &RayOptions::default());
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
    let (x0, a, m) = two_body();
    let off_shell = a.scaled(2.0);
    assert!(matches!(build_hyperbolic_ray(&x0, &off_shell, &m, 0.5, 100.0, &RayOptions::default()), Err(Error::InvalidArgument(_))));
    assert!(matches!(build_hyperbolic_ray(&x0, &a, &m, 0.5, 1.0, &RayOptions::default()), Err(Error::InvalidArgument(_))));
}

#[test]
fn two_body_horofunction_is_dominated_and_calibrated() {
    let cfg = preset("two_body").unwrap();
    let seq = cfg.direction_sequence().unwrap();
    let report = estimate_horofunction(
        &cfg.probes().unwrap(),
        &cfg.x_ref().unwrap(),
        &seq,
        &cfg.lambdas().unwrap(),
        &cfg.horofunction_options(),
    )
    .unwrap();
    assert!(report.samples.iter().all(|s| s.ok()));
    assert!(report.max_domination_residual <= 1e-4);
    assert!(report.max_calibration_residual.unwrap() <= 1e-3);
    assert!(report.cauchy_decreasing.iter().all(|&d| d), "{:?}", report.cauchy);
    for s in &report.samples {
        assert_eq!(s.p, seq.a[s.index].scaled(s.lambda));
    }
}

#[test]
fn single_eps_schedule_is_an_experiment_error() {
    let m = Masses::unit(3);
    let x0 = rows(&[[1.0, 0.0], [-0.5, 0.8], [-0.5, -0.8]]);
    let seq = build_direction_sequence(&flagship_b(), &m, 0.5, &[0.1], &vertical_split()).unwrap();
    let rule = LambdaRule::for_start(&x0, &m).unwrap();
    let r = partially_hyperbolic_experiment(&x0, &seq, &rule, 1000.0, &ExperimentOptions::default());
    assert!(matches!(r, Err(Error::Experiment(_))));
}

#[test]
fn probe_family_in_the_hyperbolic_regime_is_bounded() {
    let cfg = preset("two_body").unwrap();
    let (m, x0, _) = cfg.system().unwrap();
    let seq = cfg.direction_sequence().unwrap();
    let family = cfg.probe_family().unwrap();
    let report = continuity_probe_c(&x0, &m, &seq.b, &family).unwrap();
    assert_eq!(report.rows.len(), family.params.len());
    assert!(report.rows.iter().all(|r| r.a.is_some()));
    assert!(report.bounded, "max ratio {:?}", report.max_jump_ratio);
    let mut buf = Vec::new();
    report.write_csv(2, 2, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), family.params.len() + 1);

    let empty = ProbeFamily { params: vec![], ..family };
    assert!(matches!(continuity_probe_c(&x0, &m, &seq.b, &empty), Err(Error::InvalidArgument(_))));
}

#[test]
fn config_round_trip_and_errors() {
    for name in ["flagship", "two_body"] {
        let cfg = preset(name).unwrap();
        let back = Config::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
    assert!(matches!(preset("nope"), Err(Error::Config(_))));
    assert!(matches!(Config::from_toml("[system]\nmasses = 3"), Err(Error::Config(_))));
    let mut cfg = preset("two_body").unwrap();
    cfg.system.masses = vec![1.0];
    assert!(cfg.system().is_err());
}
