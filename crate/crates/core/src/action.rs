//! Discrete paths on uniform time grids and the functionals evaluated on
//! them: the Newtonian action, the supercritical action `A_L + h tau`, its
//! first variation, and the Jacobi-Maupertuis length.
//!
//! Quadrature: the kinetic term is exact for the piecewise-linear
//! interpolant and the potential is integrated by the trapezoidal rule, so
//! that for `K` intervals of width `dt`
//!
//! ```text
//! A(p) = sum_k |x_{k+1} - x_k|_m^2 / (2 dt) + dt (U(x_k) + U(x_{k+1})) / 2
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    mass_inner_slice, min_distance_slice, potential_and_force, potential_slice, Configuration, Masses,
    TangentVector,
};

/// Relative tolerance on grid spacing when validating a time grid.
const UNIFORM_GRID_TOL: f64 = 1e-9;

/// A prescribed energy level `h >= 0`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct EnergyLevel(f64);

impl EnergyLevel {
    pub fn new(h: f64) -> Result<Self> {
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::Domain(format!("energy level must be finite and >= 0, got {h}")));
        }
        Ok(EnergyLevel(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Free-time problems need `h > 0`.
    pub fn require_positive(self) -> Result<Self> {
        if self.0 > 0.0 {
            Ok(self)
        } else {
            Err(Error::Domain(
                "free-time minimization requires h > 0; the infimum need not be attained at h = 0".into(),
            ))
        }
    }
}

impl TryFrom<f64> for EnergyLevel {
    type Error = Error;

    fn try_from(h: f64) -> Result<Self> {
        EnergyLevel::new(h)
    }
}

impl From<EnergyLevel> for f64 {
    fn from(h: EnergyLevel) -> f64 {
        h.0
    }
}

/// Node configurations on a uniform time grid `t_0 < t_1 < ... < t_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PathRecord", into = "PathRecord")]
pub struct DiscretePath {
    times: Vec<f64>,
    nodes: Vec<Configuration>,
    masses: Masses,
}

/// Wire format: `{"masses", "dim", "times", "nodes"}` with each node a
/// row-major flattened `N x d` matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct PathRecord {
    masses: Masses,
    dim: usize,
    times: Vec<f64>,
    nodes: Vec<Vec<f64>>,
}

impl TryFrom<PathRecord> for DiscretePath {
    type Error = Error;

    fn try_from(r: PathRecord) -> Result<Self> {
        let n = r.masses.len();
        let nodes = r
            .nodes
            .into_iter()
            .map(|flat| Configuration::new(n, r.dim, flat))
            .collect::<Result<Vec<_>>>()?;
        DiscretePath::new(r.times, nodes, r.masses)
    }
}

impl From<DiscretePath> for PathRecord {
    fn from(p: DiscretePath) -> Self {
        PathRecord {
            dim: p.dim(),
            masses: p.masses,
            times: p.times,
            nodes: p.nodes.into_iter().map(Configuration::into_vec).collect(),
        }
    }
}

impl DiscretePath {
    pub fn new(times: Vec<f64>, nodes: Vec<Configuration>, masses: Masses) -> Result<Self> {
        if times.len() < 2 || times.len() != nodes.len() {
            return Err(Error::invalid(format!(
                "a path needs K + 1 >= 2 time stamps matching the nodes (got {} times, {} nodes)",
                times.len(),
                nodes.len()
            )));
        }
        let first = &nodes[0];
        masses.check_bodies(first.n())?;
        if nodes.iter().any(|x| !x.same_shape(first)) {
            return Err(Error::invalid("all path nodes must have the same shape"));
        }
        let k = times.len() - 1;
        let dt = (times[k] - times[0]) / k as f64;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("time stamps must be strictly increasing"));
        }
        let slack = UNIFORM_GRID_TOL * dt + 4.0 * f64::EPSILON * times[0].abs().max(times[k].abs());
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > slack {
                return Err(Error::invalid("time grid must be uniform"));
            }
        }
        Ok(DiscretePath { times, nodes, masses })
    }

    /// Uniform grid on `[t0, t0 + tau]` through the given nodes.
    pub fn uniform(t0: f64, tau: f64, nodes: Vec<Configuration>, masses: Masses) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::invalid(format!("duration must be positive, got {tau}")));
        }
        let k = nodes.len().saturating_sub(1).max(1);
        let times = uniform_times(t0, tau, k);
        DiscretePath::new(times, nodes, masses)
    }

    /// The mass-metric straight segment from `x` to `y` sampled on `k`
    /// intervals over `[0, tau]`.
    pub fn straight(x: &Configuration, y: &Configuration, tau: f64, k: usize, masses: Masses) -> Result<Self> {
        x.check_shape(y)?;
        if k < 1 {
            return Err(Error::invalid("need at least one interval"));
        }
        let nodes = (0..=k)
            .map(|i| {
                let s = i as f64 / k as f64;
                let mut node = x.scaled(1.0 - s);
                node.axpy(s, y);
                node
            })
            .collect();
        DiscretePath::uniform(0.0, tau, nodes, masses)
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.duration() / self.intervals() as f64
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[Configuration] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &Configuration {
        &self.nodes[k]
    }

    pub fn start(&self) -> &Configuration {
        &self.nodes[0]
    }

    pub fn end(&self) -> &Configuration {
        &self.nodes[self.nodes.len() - 1]
    }

    pub fn masses(&self) -> &Masses {
        &self.masses
    }

    pub fn n(&self) -> usize {
        self.nodes[0].n()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].dim()
    }

    /// Same nodes, traversed backwards on the same time grid.
    pub fn reversed(&self) -> DiscretePath {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        DiscretePath { times: self.times.clone(), nodes, masses: self.masses.clone() }
    }

    /// Same nodes on a rescaled grid of duration `tau` starting at `t_0`.
    pub fn with_duration(&self, tau: f64) -> Result<DiscretePath> {
        DiscretePath::uniform(self.times[0], tau, self.nodes.clone(), self.masses.clone())
    }

    /// All node coordinates, node-major.
    pub fn to_flat(&self) -> Vec<f64> {
        self.nodes.iter().flat_map(|x| x.as_slice().iter().copied()).collect()
    }

    pub(crate) fn from_flat(t0: f64, tau: f64, flat: &[f64], n: usize, dim: usize, masses: Masses) -> Result<Self> {
        let nodes = flat
            .chunks(n * dim)
            .map(|c| Configuration::new(n, dim, c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        DiscretePath::uniform(t0, tau, nodes, masses)
    }

    /// Minimum mutual distance over the interior nodes and where it occurs.
    pub fn interior_min_distance(&self) -> (f64, Option<usize>) {
        let mut best = (f64::INFINITY, None);
        for k in 1..self.intervals() {
            let d = min_distance_slice(self.nodes[k].as_slice(), self.dim());
            if d < best.0 {
                best = (d, Some(k));
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per node: `t`, then the positions `x{i}_{k}`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        for i in 0..self.n() {
            header.extend((0..self.dim()).map(|k| format!("x{i}_{k}")));
        }
        wr.write_record(&header)?;
        for (t, x) in self.times.iter().zip(&self.nodes) {
            let mut row = vec![t.to_string()];
            row.extend(x.as_slice().iter().map(f64::to_string));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn uniform_times(t0: f64, tau: f64, k: usize) -> Vec<f64> {
    (0..=k).map(|i| t0 + tau * (i as f64) / (k as f64)).collect()
}

/// `A_L(p)`: exact piecewise-linear kinetic term plus trapezoidal potential.
pub fn action_fixed_time(p: &DiscretePath) -> Result<f64> {
    let dt = p.dt();
    let m = p.masses.as_slice();
    let dim = p.dim();
    let pots = node_potentials(p)?;
    let mut total = 0.0;
    for (k, w) in p.nodes.windows(2).enumerate() {
        let d = diff(w[1].as_slice(), w[0].as_slice());
        total += mass_inner_slice(&d, &d, dim, m) / (2.0 * dt) + dt * 0.5 * (pots[k] + pots[k + 1]);
    }
    Ok(total)
}

/// `A_{L+h}(p) = A_L(p) + h tau`.
pub fn action_supercritical(p: &DiscretePath, h: EnergyLevel) -> Result<f64> {
    Ok(action_fixed_time(p)? + h.value() * p.duration())
}

/// First variation of [`action_fixed_time`] at the interior nodes with the
/// endpoints held fixed, expressed in the mass metric:
/// `(2 x_k - x_{k-1} - x_{k+1}) / dt + dt grad U(x_k)` for `k = 1..K-1`.
pub fn action_gradient(p: &DiscretePath) -> Result<Vec<TangentVector>> {
    let (n, dim) = (p.n(), p.dim());
    let problem = ActionProblem::new(p.start().as_slice(), p.end().as_slice(), p.intervals(), p.dt(), dim, p.masses.as_slice());
    let flat = p.to_flat();
    let interior = &flat[n * dim..flat.len() - n * dim];
    let mut grad = vec![0.0; interior.len()];
    problem.eval(interior, &mut grad)?;
    let m = p.masses.as_slice();
    grad.chunks(n * dim)
        .map(|g| {
            let mut v = Configuration::new(n, dim, g.to_vec())?;
            for (row, mi) in v.as_mut_slice().chunks_mut(dim).zip(m) {
                row.iter_mut().for_each(|c| *c /= mi);
            }
            Ok(v)
        })
        .collect()
}

/// Mass-metric norm of the stacked gradient `sqrt(sum_k |g_k|_m^2)`.
pub fn gradient_norm(grad: &[TangentVector], m: &Masses) -> f64 {
    grad.iter()
        .map(|g| mass_inner_slice(g.as_slice(), g.as_slice(), g.dim(), m.as_slice()))
        .sum::<f64>()
        .sqrt()
}

/// Jacobi-Maupertuis length `sum_k sqrt(2 (h + Ubar_k)) |x_{k+1} - x_k|_m`
/// with `Ubar_k` the trapezoidal average of `U` on the interval. Per interval
/// this is bounded by the supercritical action term (AM-GM).
pub fn jm_length(p: &DiscretePath, h: EnergyLevel) -> Result<f64> {
    let m = p.masses.as_slice();
    let dim = p.dim();
    let pots = node_potentials(p)?;
    let mut total = 0.0;
    for (k, w) in p.nodes.windows(2).enumerate() {
        let d = diff(w[1].as_slice(), w[0].as_slice());
        let ubar = 0.5 * (pots[k] + pots[k + 1]);
        total += (2.0 * (h.value() + ubar)).sqrt() * mass_inner_slice(&d, &d, dim, m).sqrt();
    }
    Ok(total)
}

/// Per-interval energy `|x_{k+1} - x_k|_m^2 / (2 dt^2) - U(midpoint)`.
pub fn path_energy_profile(p: &DiscretePath) -> Result<Vec<f64>> {
    let dt = p.dt();
    let m = p.masses.as_slice();
    let dim = p.dim();
    p.nodes
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let d = diff(w[1].as_slice(), w[0].as_slice());
            let mid: Vec<f64> = w[0].as_slice().iter().zip(w[1].as_slice()).map(|(a, b)| 0.5 * (a + b)).collect();
            let u = potential_slice(&mid, dim, m).map_err(|e| e.at_node(k))?;
            Ok(mass_inner_slice(&d, &d, dim, m) / (2.0 * dt * dt) - u)
        })
        .collect()
}

fn node_potentials(p: &DiscretePath) -> Result<Vec<f64>> {
    let dim = p.dim();
    let m = p.masses.as_slice();
    p.nodes
        .iter()
        .enumerate()
        .map(|(k, x)| potential_slice(x.as_slice(), dim, m).map_err(|e| e.at_node(k)))
        .collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p - q).collect()
}

/// The discrete fixed-endpoint action as a function of the stacked interior
/// nodes, with its Euclidean gradient. Shared by [`action_gradient`] and the
/// optimizer.
pub(crate) struct ActionProblem<'a> {
    pub start: &'a [f64],
    pub end: &'a [f64],
    pub intervals: usize,
    pub dt: f64,
    pub dim: usize,
    pub masses: &'a [f64],
    force: std::cell::RefCell<Vec<f64>>,
}

impl<'a> ActionProblem<'a> {
    pub fn new(start: &'a [f64], end: &'a [f64], intervals: usize, dt: f64, dim: usize, masses: &'a [f64]) -> Self {
        ActionProblem { start, end, intervals, dt, dim, masses, force: std::cell::RefCell::new(vec![0.0; start.len()]) }
    }

    pub fn node_len(&self) -> usize {
        self.start.len()
    }

    fn node<'b>(&'b self, interior: &'b [f64], k: usize) -> &'b [f64] {
        let s = self.node_len();
        if k == 0 {
            self.start
        } else if k == self.intervals {
            self.end
        } else {
            &interior[(k - 1) * s..k * s]
        }
    }

    /// Action value; writes the Euclidean gradient w.r.t. interior nodes.
    pub fn eval(&self, interior: &[f64], grad: &mut [f64]) -> Result<f64> {
        let s = self.node_len();
        let (dt, dim, m) = (self.dt, self.dim, self.masses);
        debug_assert_eq!(interior.len(), (self.intervals - 1) * s);
        let mut force = self.force.borrow_mut();
        let mut value = 0.0;
        let mut diff = vec![0.0; s];
        for k in 0..self.intervals {
            let (a, b) = (self.node(interior, k), self.node(interior, k + 1));
            for c in 0..s {
                diff[c] = b[c] - a[c];
            }
            value += mass_inner_slice(&diff, &diff, dim, m) / (2.0 * dt);
            // node k+1 is first touched here, node k was set by interval k-1
            if k >= 1 {
                let g = &mut grad[(k - 1) * s..k * s];
                for c in 0..s {
                    g[c] -= m[c / dim] * diff[c] / dt;
                }
            }
            if k + 1 < self.intervals {
                let g = &mut grad[k * s..(k + 1) * s];
                for c in 0..s {
                    g[c] = m[c / dim] * diff[c] / dt;
                }
            }
        }
        for k in 0..=self.intervals {
            let x = self.node(interior, k);
            let weight = if k == 0 || k == self.intervals { 0.5 } else { 1.0 };
            if k == 0 || k == self.intervals {
                value += weight * dt * potential_slice(x, dim, m).map_err(|e| e.at_node(k))?;
            } else {
                let u = potential_and_force(x, dim, m, &mut force).map_err(|e| e.at_node(k))?;
                value += dt * u;
                let g = &mut grad[(k - 1) * s..k * s];
                for c in 0..s {
                    g[c] += dt * force[c];
                }
            }
        }
        Ok(value)
    }
}
