#![allow(dead_code)]

use freetime_core::geometry::{min_mutual_distance, Configuration, Masses};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[-half, half]^(n d)`, redrawn until no pair is closer than
/// `min_sep`.
pub fn random_configuration(rng: &mut ChaCha8Rng, n: usize, dim: usize, half: f64, min_sep: f64) -> Configuration {
    loop {
        let data: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-half..half)).collect();
        let x = Configuration::new(n, dim, data).unwrap();
        if min_mutual_distance(&x) >= min_sep {
            return x;
        }
    }
}

pub fn random_masses(rng: &mut ChaCha8Rng, n: usize) -> Masses {
    Masses::new((0..n).map(|_| rng.random_range(0.5..2.0)).collect()).unwrap()
}

pub fn rows(r: &[[f64; 2]]) -> Configuration {
    Configuration::from_rows(r).unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Random two-body endpoint pair for free-time solves: both pairs separated
/// by at least 0.8, endpoints apart by at least 0.5.
pub fn two_body_pair(rng: &mut ChaCha8Rng) -> (Configuration, Configuration) {
    loop {
        let x = random_configuration(rng, 2, 2, 1.5, 0.8);
        let y = random_configuration(rng, 2, 2, 1.5, 0.8);
        let d: f64 = x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if d > 0.5 {
            return (x, y);
        }
    }
}

/// Straight segment between two random 3-body configurations with random
/// interior bumps, kept away from collisions.
pub fn random_path(rng: &mut ChaCha8Rng, n: usize, k: usize) -> freetime_core::action::DiscretePath {
    use freetime_core::action::DiscretePath;
    loop {
        let x = random_configuration(rng, n, 2, 2.0, 0.5);
        let y = random_configuration(rng, n, 2, 2.0, 0.5);
        let tau = rng.random_range(0.5..3.0);
        let straight = DiscretePath::straight(&x, &y, tau, k, random_masses(rng, n)).unwrap();
        let mut nodes = straight.nodes().to_vec();
        for node in &mut nodes[1..k] {
            node.as_mut_slice().iter_mut().for_each(|c| *c += rng.random_range(-0.2..0.2));
        }
        if nodes.iter().all(|x| min_mutual_distance(x) > 0.2) {
            return DiscretePath::uniform(0.0, tau, nodes, straight.masses().clone()).unwrap();
        }
    }
}

/// Central differences of the action in every interior coordinate, as
/// Euclidean partial derivatives.
pub fn fd_action_gradient(p: &freetime_core::action::DiscretePath, step: f64) -> Vec<f64> {
    use freetime_core::action::{action_fixed_time, DiscretePath};
    let k = p.intervals();
    let mut out = Vec::new();
    for node in 1..k {
        for c in 0..p.node(node).as_slice().len() {
            let shifted = |s: f64| {
                let mut nodes = p.nodes().to_vec();
                nodes[node].as_mut_slice()[c] += s;
                let q = DiscretePath::new(p.times().to_vec(), nodes, p.masses().clone()).unwrap();
                action_fixed_time(&q).unwrap()
            };
            out.push((shifted(step) - shifted(-step)) / (2.0 * step));
        }
    }
    out
}

/// Euclidean partials from the mass-metric gradient returned by the library.
pub fn euclidean(grad: &[freetime_core::geometry::TangentVector], m: &Masses) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grad {
        for (i, row) in g.as_slice().chunks(g.dim()).enumerate() {
            out.extend(row.iter().map(|c| c * m.as_slice()[i]));
        }
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Samples of the two-body circular orbit with unit masses at distance 2
/// (angular speed 1/2, period 4 pi), on `k` intervals over `[0, tau]`.
pub fn circular_arc(tau: f64, k: usize) -> freetime_core::action::DiscretePath {
    use freetime_core::action::DiscretePath;
    let nodes = (0..=k)
        .map(|i| {
            let th = 0.5 * tau * i as f64 / k as f64;
            rows(&[[th.cos(), th.sin()], [-th.cos(), -th.sin()]])
        })
        .collect();
    DiscretePath::uniform(0.0, tau, nodes, Masses::unit(2)).unwrap()
}
