mod common;

use std::f64::consts::PI;

use common::{rel, rows};
use freetime_core::flow::{energy, integrate, integrate_with, IntegrateOptions, State, Termination, Trajectory};
use freetime_core::geometry::{center_of_mass, Configuration, Masses};

fn circular() -> State {
    // unit masses at distance 2: force 1/4 on radius 1 needs speed 1/2
    State::new(rows(&[[1.0, 0.0], [-1.0, 0.0]]), rows(&[[0.0, 0.5], [0.0, -0.5]]), 0.0).unwrap()
}

fn end_state(s0: &State, m: &Masses, t_end: f64, rtol: f64) -> State {
    let opts = IntegrateOptions { rtol, record_steps: false, ..Default::default() };
    let tr = integrate_with(s0, m, t_end, &opts).unwrap();
    assert_eq!(tr.terminated_by, Termination::Horizon);
    tr.last().clone()
}

#[test]
fn circular_orbit_period() {
    let m = Masses::unit(2);
    let s0 = circular();
    // secant iteration on the second coordinate of body 0 near one period
    let y = |t: f64| end_state(&s0, &m, t, 1e-13).x.body(0)[1];
    let (mut t0, mut t1) = (4.0 * PI - 0.01, 4.0 * PI + 0.01);
    let (mut y0, mut y1) = (y(t0), y(t1));
    for _ in 0..6 {
        let t2 = t1 - y1 * (t1 - t0) / (y1 - y0);
        (t0, y0, t1) = (t1, y1, t2);
        y1 = y(t1);
        if y1 == 0.0 || (t1 - t0).abs() < 1e-14 {
            break;
        }
    }
    assert!(rel(t1, 4.0 * PI) < 1e-8, "period {t1}");
}

#[test]
fn collinear_drop_ends_in_a_collision() {
    let s0 = State::new(rows(&[[-1.0, 0.0], [1.0, 0.0]]), Configuration::zeros(2, 2), 0.0).unwrap();
    let tr = integrate(&s0, &Masses::unit(2), 10.0, 1e-10).unwrap();
    assert_ne!(tr.terminated_by, Termination::Horizon);
    // free fall of the relative coordinate r'' = -2 / r^2 from rest at r = 2
    let fall = PI / 2.0 * 2f64.sqrt();
    let omega = tr.omega_plus.expect("finite omega_plus");
    assert!((fall - omega).abs() < 1e-3, "omega_plus {omega} vs {fall}");
    assert_eq!(omega, tr.end_time());
}

#[test]
fn eccentric_kepler_energy_drift() {
    let m = Masses::unit(2);
    let s0 = State::new(rows(&[[1.0, 0.0], [-1.0, 0.0]]), rows(&[[0.0, 0.3], [0.0, -0.3]]), 0.0).unwrap();
    let tr = integrate(&s0, &m, 100.0, 1e-13).unwrap();
    assert_eq!(tr.terminated_by, Termination::Horizon);
    assert!(tr.max_drift <= 1e-10, "drift {:e}", tr.max_drift);
    let h0 = energy(&s0, &m).unwrap();
    for s in tr.samples() {
        assert!((energy(s, &m).unwrap() - h0).abs() <= 1e-10 * h0.abs());
    }
}

fn three_body() -> (State, Masses) {
    // a hierarchical triple: a tight binary and a distant companion
    let x = rows(&[[1.0, 0.0], [-1.0, 0.0], [0.0, 8.0]]);
    let v = rows(&[[0.0, 0.5], [0.0, -0.5], [0.35, 0.0]]);
    (State::new(x, v, 0.0).unwrap(), Masses::new(vec![1.0, 1.0, 0.5]).unwrap())
}

#[test]
fn drift_bound_on_two_and_three_bodies() {
    let (s3, m3) = three_body();
    for (s0, m) in [(circular(), Masses::unit(2)), (s3, m3)] {
        for rtol in [1e-8, 1e-10, 1e-12] {
            let tr = integrate(&s0, &m, 100.0, rtol).unwrap();
            assert_eq!(tr.terminated_by, Termination::Horizon);
            let bound = 1e-9f64.max(10.0 * rtol);
            assert!(tr.max_drift <= bound, "drift {:e} at rtol {rtol:e}", tr.max_drift);
            assert!(tr.samples().windows(2).all(|w| w[1].t > w[0].t));
        }
    }
}

#[test]
fn momentum_is_conserved_and_barycenter_moves_affinely() {
    let (mut s0, m) = three_body();
    s0.v.as_mut_slice()[0] += 0.1;
    let tr = integrate(&s0, &m, 100.0, 1e-12).unwrap();
    let momentum = |s: &State| center_of_mass(&s.v, &m).unwrap();
    let (p0, g0) = (momentum(&s0), center_of_mass(&s0.x, &m).unwrap());
    for s in tr.samples() {
        let p = momentum(s);
        let g = center_of_mass(&s.x, &m).unwrap();
        for k in 0..2 {
            assert!((p[k] - p0[k]).abs() <= 1e-11);
            assert!((g[k] - g0[k] - s.t * p0[k]).abs() <= 1e-9 * (1.0 + s.t));
        }
    }
}

#[test]
fn time_reversal_returns_to_the_start() {
    let (s0, m) = three_body();
    let rtol = 1e-12;
    let t_end = 30.0;
    let fwd = end_state(&s0, &m, t_end, rtol);
    let back = State::new(fwd.x.clone(), fwd.v.scaled(-1.0), 0.0).unwrap();
    let ret = end_state(&back, &m, t_end, rtol);
    let dx = common::distance(ret.x.as_slice(), s0.x.as_slice()) / common::norm(s0.x.as_slice());
    let dv = common::distance(ret.v.scaled(-1.0).as_slice(), s0.v.as_slice()) / common::norm(s0.v.as_slice());
    assert!(dx <= 10.0 * rtol && dv <= 10.0 * rtol, "dx {dx:e} dv {dv:e}");
}

#[test]
fn trajectory_round_trips() {
    let tr = integrate(&circular(), &Masses::unit(2), 5.0, 1e-10).unwrap();
    assert_eq!(Trajectory::from_json(&tr.to_json().unwrap()).unwrap(), tr);
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let header = String::from_utf8(buf.clone()).unwrap();
    assert!(header.starts_with("t,x0_0,x0_1,x1_0,x1_1,v0_0,"));
    let samples = Trajectory::read_csv_samples(buf.as_slice(), 2, 2).unwrap();
    assert_eq!(samples, tr.samples);
}

#[test]
fn initial_collision_is_invalid() {
    let s0 = State::new(rows(&[[1.0, 0.0], [1.0, 0.0]]), Configuration::zeros(2, 2), 0.0).unwrap();
    assert!(matches!(integrate(&s0, &Masses::unit(2), 1.0, 1e-10), Err(freetime_core::Error::InvalidArgument(_))));
}
