//! Numerical critical potentials.
//!
//! [`minimize_fixed`] approximates `phi(x, y, tau)`, the least action over
//! paths joining `x` to `y` in time `tau`, by minimizing the discrete action
//! over the interior nodes of a uniform grid and doubling the mesh
//! `refinements` times. [`minimize_free_time`] approximates the
//! supercritical potential `phi_h(x, y) = inf_tau phi(x, y, tau) + h tau` by a
//! golden-section search in `tau` with warm-started inner solves.
//!
//! Only local minimality is certified. A straight-segment start plus
//! `multi_start` randomized bump perturbations are tried and the smallest
//! value wins (ties broken by the smaller duration, then start index).

mod lbfgs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{action_fixed_time, path_energy_profile, ActionProblem, DiscretePath, EnergyLevel};
use crate::error::{Error, Result};
use crate::geometry::{closest_pair, diameter, mass_norm, min_distance_slice, potential, Configuration, Masses};

const GOLDEN: f64 = 0.618_033_988_749_894_8;
const VALUE_TIE: f64 = 1e-10;

/// Knobs shared by the fixed- and free-time solvers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeOptions {
    /// Intervals on the initial mesh.
    pub k0: usize,
    /// Number of mesh doublings after the initial solve.
    pub refinements: usize,
    /// Stopping tolerance on the mass-metric gradient norm.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Guard distance for the line search; `None` means `1e-6 * scale`.
    pub barrier_eps: Option<f64>,
    /// Randomized starts in addition to the straight segment.
    pub multi_start: usize,
    pub seed: u64,
    /// Relative width of the final golden-section bracket in `tau`.
    pub tau_rel_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            k0: 100,
            refinements: 4,
            grad_tol: 1e-9,
            max_iters: 20_000,
            barrier_eps: None,
            multi_start: 4,
            seed: 0,
            tau_rel_tol: 1e-7,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k0 < 8 {
            return Err(Error::invalid(format!("k0 must be >= 8, got {}", self.k0)));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::invalid("grad_tol must be positive"));
        }
        if matches!(self.barrier_eps, Some(e) if !(e >= 0.0)) {
            return Err(Error::invalid("barrier_eps must be >= 0"));
        }
        if !(self.tau_rel_tol > 0.0) {
            return Err(Error::invalid("tau_rel_tol must be positive"));
        }
        Ok(())
    }

    /// Number of intervals after all refinements.
    pub fn final_intervals(&self) -> usize {
        self.k0 << self.refinements
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedTimeResult {
    pub path: DiscretePath,
    pub value: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub min_interior_distance: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeTimeResult {
    pub value: f64,
    pub tau_star: f64,
    pub energy_residual: f64,
    pub converged: bool,
    /// Set when `x == y`: the infimum is approached as `tau -> 0` and the
    /// returned path is constant.
    #[serde(default)]
    pub degenerate: bool,
    pub path: DiscretePath,
}

impl FreeTimeResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Outcome of [`check_interior_collisionfree`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionCheck {
    pub collision_free: bool,
    /// Smallest interior mutual distance, `inf` when there is no pair.
    pub min_distance: f64,
    pub node: Option<usize>,
    pub time: Option<f64>,
    pub pair: Option<(usize, usize)>,
}

/// Characteristic length of an endpoint pair.
pub fn endpoint_scale(x: &Configuration, y: &Configuration, m: &Masses) -> f64 {
    let sep = mass_norm(&(y - x), m).unwrap_or(0.0) / m.total().sqrt();
    let s = diameter(x).max(diameter(y)).max(sep);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

fn check_endpoints(x: &Configuration, y: &Configuration, m: &Masses) -> Result<()> {
    x.check_shape(y)?;
    m.check_bodies(x.n())?;
    if x.dim() < 2 {
        return Err(Error::invalid("minimizers require spatial dimension d >= 2"));
    }
    for (name, c) in [("start", x), ("end", y)] {
        if let Err(Error::Collision { i, j, .. }) = potential(c, m) {
            return Err(Error::invalid(format!("{name} configuration has a collision between bodies {i} and {j}")));
        }
    }
    Ok(())
}

/// `K -> 2K` by inserting the midpoint of every interval.
pub fn refine(p: &DiscretePath) -> DiscretePath {
    let mut nodes = Vec::with_capacity(2 * p.intervals() + 1);
    for w in p.nodes().windows(2) {
        nodes.push(w[0].clone());
        let mut mid = w[0].scaled(0.5);
        mid.axpy(0.5, &w[1]);
        nodes.push(mid);
    }
    nodes.push(p.end().clone());
    DiscretePath::uniform(p.times()[0], p.duration(), nodes, p.masses().clone())
        .expect("refining a valid path yields a valid path")
}

/// Whether every interior node keeps all mutual distances `>= delta`.
pub fn check_interior_collisionfree(p: &DiscretePath, delta: f64) -> CollisionCheck {
    let (min_distance, node) = p.interior_min_distance();
    CollisionCheck {
        collision_free: min_distance >= delta,
        min_distance,
        node,
        time: node.map(|k| p.times()[k]),
        pair: node.and_then(|k| closest_pair(p.node(k))),
    }
}

struct Solver<'a> {
    x: &'a Configuration,
    y: &'a Configuration,
    masses: &'a Masses,
    opts: &'a MinimizeOptions,
    barrier: f64,
}

#[derive(Clone)]
struct InnerSolve {
    /// All node coordinates, node-major.
    flat: Vec<f64>,
    tau: f64,
    value: f64,
    grad_norm: f64,
    converged: bool,
    iterations: usize,
}

impl<'a> Solver<'a> {
    fn new(x: &'a Configuration, y: &'a Configuration, masses: &'a Masses, opts: &'a MinimizeOptions) -> Self {
        let barrier = opts.barrier_eps.unwrap_or(1e-6 * endpoint_scale(x, y, masses));
        Solver { x, y, masses, opts, barrier }
    }

    fn stride(&self) -> usize {
        self.x.as_slice().len()
    }

    /// Solves the fixed-time problem starting from the nodes in `flat`.
    fn solve(&self, mut flat: Vec<f64>, tau: f64) -> Result<InnerSolve> {
        let s = self.stride();
        let intervals = flat.len() / s - 1;
        let problem = ActionProblem::new(
            self.x.as_slice(),
            self.y.as_slice(),
            intervals,
            tau / intervals as f64,
            self.x.dim(),
            self.masses.as_slice(),
        );
        let end = flat.len() - s;
        let report = lbfgs::minimize(
            &problem,
            &mut flat[s..end],
            lbfgs::LbfgsSettings { grad_tol: self.opts.grad_tol, max_iters: self.opts.max_iters, barrier_eps: self.barrier },
        )?;
        Ok(InnerSolve {
            flat,
            tau,
            value: report.value,
            grad_norm: report.grad_norm,
            converged: report.converged,
            iterations: report.iterations,
        })
    }

    fn straight(&self, intervals: usize) -> Vec<f64> {
        let mut flat = Vec::with_capacity((intervals + 1) * self.stride());
        for k in 0..=intervals {
            let s = k as f64 / intervals as f64;
            flat.extend(self.x.as_slice().iter().zip(self.y.as_slice()).map(|(a, b)| (1.0 - s) * a + s * b));
        }
        flat
    }

    /// Initial node sets: the straight segment followed by C^1 bump
    /// perturbations `16 s^2 (1-s)^2 * w` with random body offsets `w`.
    fn starts(&self, intervals: usize) -> Vec<Vec<f64>> {
        let base = self.straight(intervals);
        let mut out = vec![base.clone()];
        if self.x.n() < 2 {
            return out;
        }
        let scale = endpoint_scale(self.x, self.y, self.masses);
        let s = self.stride();
        for start in 0..self.opts.multi_start {
            let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed.wrapping_add(start as u64));
            for _attempt in 0..16 {
                let w: Vec<f64> = (0..s).map(|_| 0.5 * scale * rng.random_range(-1.0..1.0)).collect();
                let mut flat = base.clone();
                for k in 1..intervals {
                    let t = k as f64 / intervals as f64;
                    let bump = 16.0 * t * t * (1.0 - t) * (1.0 - t);
                    for c in 0..s {
                        flat[k * s + c] += bump * w[c];
                    }
                }
                let ok = flat.chunks(s).all(|node| min_distance_slice(node, self.x.dim()) >= self.barrier.max(1e-3 * scale));
                if ok {
                    out.push(flat);
                    break;
                }
            }
        }
        out
    }

    fn to_path(&self, sol: &InnerSolve) -> Result<DiscretePath> {
        DiscretePath::from_flat(0.0, sol.tau, &sol.flat, self.x.n(), self.x.dim(), self.masses.clone())
    }
}

fn refine_flat(flat: &[f64], stride: usize) -> Vec<f64> {
    let nodes = flat.len() / stride;
    let mut out = Vec::with_capacity((2 * nodes - 1) * stride);
    for k in 0..nodes - 1 {
        let (a, b) = (&flat[k * stride..(k + 1) * stride], &flat[(k + 1) * stride..(k + 2) * stride]);
        out.extend_from_slice(a);
        out.extend(a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)));
    }
    out.extend_from_slice(&flat[(nodes - 1) * stride..]);
    out
}

/// Ordering on `value + h tau`, ties broken by the shorter duration.
fn better(a: &InnerSolve, b: &InnerSolve, h: f64) -> bool {
    let (ga, gb) = (a.value + h * a.tau, b.value + h * b.tau);
    ga < gb - VALUE_TIE || ((ga - gb).abs() <= VALUE_TIE && a.tau < b.tau)
}

/// Approximates `phi(x, y, tau)` by a converged discrete local minimizer.
pub fn minimize_fixed(
    x: &Configuration,
    y: &Configuration,
    tau: f64,
    masses: &Masses,
    opts: &MinimizeOptions,
) -> Result<FixedTimeResult> {
    opts.validate()?;
    check_endpoints(x, y, masses)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("duration must be positive, got {tau}")));
    }
    let solver = Solver::new(x, y, masses, opts);
    let starts = solver.starts(opts.k0);
    let solved: Vec<Result<InnerSolve>> = starts.into_par_iter().map(|flat| solver.solve(flat, tau)).collect();
    let mut best: Option<InnerSolve> = None;
    for sol in solved {
        let sol = sol?;
        if best.as_ref().is_none_or(|b| better(&sol, b, 0.0)) {
            best = Some(sol);
        }
    }
    let mut sol = best.expect("at least the straight start is solved");
    let mut iterations = sol.iterations;
    for _ in 0..opts.refinements {
        sol = solver.solve(refine_flat(&sol.flat, solver.stride()), tau)?;
        iterations += sol.iterations;
    }
    let path = solver.to_path(&sol)?;
    let min_interior_distance = path.interior_min_distance().0;
    Ok(FixedTimeResult {
        value: action_fixed_time(&path)?,
        grad_norm: sol.grad_norm,
        converged: sol.converged,
        min_interior_distance,
        iterations,
        path,
    })
}

/// Memoized `g(tau) = phi_K(x, y, tau) + h tau` with warm starts from the
/// nearest evaluated duration.
struct TauSearch<'s, 'a> {
    solver: &'s Solver<'a>,
    h: f64,
    evals: Vec<InnerSolve>,
}

impl<'s, 'a> TauSearch<'s, 'a> {
    fn g(&self, s: &InnerSolve) -> f64 {
        s.value + self.h * s.tau
    }

    fn eval(&mut self, tau: f64, fallback: &[f64]) -> Result<f64> {
        let warm = self
            .evals
            .iter()
            .min_by(|a, b| (a.tau.ln() - tau.ln()).abs().total_cmp(&(b.tau.ln() - tau.ln()).abs()))
            .map(|s| s.flat.clone())
            .unwrap_or_else(|| fallback.to_vec());
        let sol = self.solver.solve(warm, tau)?;
        let g = self.g(&sol);
        self.evals.push(sol);
        Ok(g)
    }

    fn best(&self) -> &InnerSolve {
        self.evals
            .iter()
            .min_by(|a, b| {
                if better(a, b, self.h) {
                    std::cmp::Ordering::Less
                } else if better(b, a, self.h) {
                    std::cmp::Ordering::Greater
                } else {
                    std::cmp::Ordering::Equal
                }
            })
            .expect("search evaluated at least one duration")
    }

    /// Finds a bracket `lo < mid < hi` with `g(mid)` below both ends on a
    /// geometric scan of `[lo, hi]`, expanding an end by a factor 2 up to 10
    /// times when the minimum sits on it, then narrows it by golden section.
    fn run(&mut self, lo: f64, hi: f64, scan: usize, rel_tol: f64, start: &[f64]) -> Result<()> {
        let mut taus: Vec<f64> = (0..scan)
            .map(|i| lo * (hi / lo).powf(i as f64 / (scan - 1) as f64))
            .collect();
        let mut gs = Vec::with_capacity(scan);
        for &t in &taus {
            gs.push(self.eval(t, start)?);
        }
        let mut expansions = 0;
        loop {
            let i = argmin(&gs);
            if i > 0 && i + 1 < taus.len() {
                return self.golden(taus[i - 1], taus[i + 1], rel_tol, start);
            }
            if expansions == 10 {
                return Err(Error::Bracket { lo: taus[0], hi: taus[taus.len() - 1] });
            }
            expansions += 1;
            if i == 0 {
                let t = taus[0] / 2.0;
                let g = self.eval(t, start)?;
                taus.insert(0, t);
                gs.insert(0, g);
            } else {
                let t = taus[taus.len() - 1] * 2.0;
                let g = self.eval(t, start)?;
                taus.push(t);
                gs.push(g);
            }
        }
    }

    fn golden(&mut self, mut a: f64, mut b: f64, rel_tol: f64, start: &[f64]) -> Result<()> {
        let mut c = b - GOLDEN * (b - a);
        let mut d = a + GOLDEN * (b - a);
        let mut gc = self.eval(c, start)?;
        let mut gd = self.eval(d, start)?;
        while (b - a) > rel_tol * 0.5 * (a + b) {
            if gc < gd {
                b = d;
                d = c;
                gd = gc;
                c = b - GOLDEN * (b - a);
                gc = self.eval(c, start)?;
            } else {
                a = c;
                c = d;
                gc = gd;
                d = a + GOLDEN * (b - a);
                gd = self.eval(d, start)?;
            }
        }
        Ok(())
    }
}

fn argmin(v: &[f64]) -> usize {
    v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0)
}

/// Heuristic travel-time bracket `[l / sqrt(2(h + U_max)), 4 l / sqrt(2h)]`
/// with `l` the mass-metric endpoint distance and `U_max` the largest
/// potential met on the straight segment.
pub fn tau_bracket(x: &Configuration, y: &Configuration, masses: &Masses, h: f64) -> (f64, f64) {
    let l = mass_norm(&(y - x), masses).unwrap_or(0.0);
    let mut u_max = 0.0f64;
    for i in 0..=32 {
        let s = i as f64 / 32.0;
        let mut z = x.scaled(1.0 - s);
        z.axpy(s, y);
        if let Ok(u) = potential(&z, masses) {
            u_max = u_max.max(u);
        }
    }
    (l / (2.0 * (h + u_max)).sqrt(), 4.0 * l / (2.0 * h).sqrt())
}

/// Approximates `phi_h(x, y)` and an optimal duration.
pub fn minimize_free_time(
    x: &Configuration,
    y: &Configuration,
    masses: &Masses,
    h: EnergyLevel,
    opts: &MinimizeOptions,
) -> Result<FreeTimeResult> {
    let h = h.require_positive()?.value();
    opts.validate()?;
    check_endpoints(x, y, masses)?;
    let solver = Solver::new(x, y, masses, opts);
    let scale = endpoint_scale(x, y, masses);
    let (lo, hi) = tau_bracket(x, y, masses, h);

    if mass_norm(&(y - x), masses)? <= 1e-12 * scale * masses.total().sqrt() {
        // phi_h(x, x) = 0 is approached by constant paths as tau -> 0
        let u = potential(x, masses)?;
        let tau = 1e-6 * scale / (2.0 * (h + u)).sqrt();
        let path = DiscretePath::straight(x, x, tau, opts.final_intervals(), masses.clone())?;
        let mean = mean(&path_energy_profile(&path)?);
        return Ok(FreeTimeResult {
            value: (u + h) * tau,
            tau_star: tau,
            energy_residual: (mean - h).abs(),
            converged: true,
            degenerate: true,
            path,
        });
    }

    // coarse search, one per start
    let coarse_tol = if opts.refinements == 0 { opts.tau_rel_tol } else { opts.tau_rel_tol.max(1e-5) };
    let starts = solver.starts(opts.k0);
    let coarse: Vec<Result<InnerSolve>> = starts
        .into_par_iter()
        .map(|start| {
            let mut search = TauSearch { solver: &solver, h, evals: Vec::new() };
            search.run(lo, hi, 9, coarse_tol, &start)?;
            Ok(search.best().clone())
        })
        .collect();
    let mut best: Option<InnerSolve> = None;
    for sol in coarse {
        let sol = sol?;
        if best.as_ref().is_none_or(|b| better(&sol, b, h)) {
            best = Some(sol);
        }
    }
    let mut best = best.expect("straight start searched");

    // refinement levels: narrow brackets around the previous optimum
    for level in 1..=opts.refinements {
        let flat = refine_flat(&best.flat, solver.stride());
        let tol = if level == opts.refinements { opts.tau_rel_tol } else { opts.tau_rel_tol.max(1e-5) };
        let width = 2e-2;
        let mut search = TauSearch { solver: &solver, h, evals: Vec::new() };
        search.run(best.tau * (1.0 - width), best.tau * (1.0 + width), 3, tol, &flat)?;
        best = search.best().clone();
    }

    let path = solver.to_path(&best)?;
    let energy = path_energy_profile(&path)?;
    let energy_residual = (mean(&energy) - h).abs();
    Ok(FreeTimeResult {
        value: best.value + h * best.tau,
        tau_star: best.tau,
        energy_residual,
        converged: best.converged,
        degenerate: false,
        path,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean and standard deviation of [`path_energy_profile`].
pub fn energy_statistics(p: &DiscretePath) -> Result<(f64, f64)> {
    let e = path_energy_profile(p)?;
    let mu = mean(&e);
    let var = e.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / e.len() as f64;
    Ok((mu, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts_small() -> MinimizeOptions {
        MinimizeOptions { k0: 16, refinements: 2, multi_start: 0, ..Default::default() }
    }

    #[test]
    fn refine_doubles_straight_line() {
        let x = Configuration::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_rows(&[[1.0, 2.0]]).unwrap();
        let p = DiscretePath::straight(&x, &y, 1.0, 8, Masses::unit(1)).unwrap();
        let r = refine(&p);
        assert_eq!(r.intervals(), 16);
        let direct = DiscretePath::straight(&x, &y, 1.0, 16, Masses::unit(1)).unwrap();
        for (a, b) in r.nodes().iter().zip(direct.nodes()) {
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((u - v).abs() < 1e-15);
            }
        }
        // refining twice keeps the original nodes on the shared stamps
        let rr = refine(&r);
        for k in 0..=8 {
            assert_eq!(rr.node(4 * k), p.node(k));
            assert_eq!(rr.times()[4 * k], p.times()[k]);
        }
    }

    #[test]
    fn free_particle_fixed_time_is_straight() {
        let x = Configuration::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_rows(&[[3.0, -1.0]]).unwrap();
        let r = minimize_fixed(&x, &y, 1.0, &Masses::unit(1), &opts_small()).unwrap();
        assert!(r.converged);
        assert!((r.value - 5.0).abs() < 1e-10);
        assert_eq!(r.min_interior_distance, f64::INFINITY);
    }

    #[test]
    fn collision_check_edges() {
        let x = Configuration::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_rows(&[[3.0, -1.0]]).unwrap();
        let p = DiscretePath::straight(&x, &y, 1.0, 8, Masses::unit(1)).unwrap();
        let c = check_interior_collisionfree(&p, f64::MAX);
        assert!(c.collision_free && c.min_distance.is_infinite() && c.pair.is_none());

        let a = Configuration::from_rows(&[[-1.0, 0.0], [1.0, 0.0]]).unwrap();
        let b = Configuration::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let p = DiscretePath::straight(&a, &b, 1.0, 4, Masses::unit(2)).unwrap();
        let c = check_interior_collisionfree(&p, 1e-9);
        assert!(!c.collision_free);
        assert_eq!(c.node, Some(2));
        assert_eq!(c.pair, Some((0, 1)));
        assert_eq!(c.time, Some(0.5));
    }

    #[test]
    fn endpoint_collision_and_bad_h_are_rejected() {
        let bad = Configuration::from_rows(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        let good = Configuration::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let m = Masses::unit(2);
        assert!(matches!(minimize_fixed(&bad, &good, 1.0, &m, &opts_small()), Err(Error::InvalidArgument(_))));
        let h0 = EnergyLevel::new(0.0).unwrap();
        assert!(matches!(minimize_free_time(&good, &good, &m, h0, &opts_small()), Err(Error::Domain(_))));
        let flat = Configuration::from_rows(&[[0.0], [1.0]]).unwrap();
        assert!(minimize_fixed(&flat, &flat, 1.0, &m, &opts_small()).is_err());
    }

    #[test]
    fn options_validation() {
        assert!(MinimizeOptions { k0: 4, ..Default::default() }.validate().is_err());
        assert!(MinimizeOptions { grad_tol: 0.0, ..Default::default() }.validate().is_err());
        assert!(MinimizeOptions { barrier_eps: Some(-1.0), ..Default::default() }.validate().is_err());
        assert_eq!(MinimizeOptions::default().final_intervals(), 1600);
    }
}
