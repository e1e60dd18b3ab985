//! Newtonian flow `x'' = grad U(x)` integrated with an adaptive 8(5,3)
//! Runge-Kutta pair, with energy monitoring and early stops near
//! collisions.

mod dop853;
mod shooting;
#[rustfmt::skip]
mod tableau;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    diameter, mass_inner_slice, min_distance_slice, potential, potential_and_force, Configuration, Masses,
    TangentVector,
};
use dop853::{DenseSegment, Dop853, OdeSystem, StepOutcome};

pub(crate) use shooting::initial_velocity as discrete_initial_velocity;
pub use shooting::{shoot_and_compare, shoot_free_time, shoot_multiple, shooting_guess, MultiShot, ShootOptions, ShotResult};

const STEP_RTOL_FACTOR: f64 = 0.1;
const MIN_STEP_RTOL: f64 = 1e-14;

/// Position, velocity and time of the whole system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: Configuration,
    pub v: TangentVector,
    pub t: f64,
}

impl State {
    pub fn new(x: Configuration, v: TangentVector, t: f64) -> Result<Self> {
        x.check_shape(&v)?;
        if !t.is_finite() {
            return Err(Error::invalid("state time must be finite"));
        }
        Ok(State { x, v, t })
    }
}

/// `E = |v|_m^2 / 2 - U(x)`.
pub fn energy(s: &State, m: &Masses) -> Result<f64> {
    s.x.check_shape(&s.v)?;
    let u = potential(&s.x, m)?;
    Ok(0.5 * mass_inner_slice(s.v.as_slice(), s.v.as_slice(), s.v.dim(), m.as_slice()) - u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Horizon,
    CollisionGuard,
    StepUnderflow,
}

/// Integrator settings beyond the relative tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegrateOptions {
    pub rtol: f64,
    /// Absolute tolerance; `None` scales `rtol` by the initial position and
    /// velocity magnitudes.
    pub atol: Option<f64>,
    /// Stop when two bodies come closer than this; `None` means
    /// `1e-9 * diameter(x0)`.
    pub guard: Option<f64>,
    /// Abort when `|E(t) - E(0)|` exceeds this fraction of
    /// `max(|E(0)|, T(t) + U(t))`.
    pub drift_tol: f64,
    /// Record a sample at every accepted step.
    pub record_steps: bool,
    /// Extra output times, filled from the dense interpolant.
    pub sample_times: Vec<f64>,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rtol: 1e-10,
            atol: None,
            guard: None,
            drift_tol: 1e-6,
            record_steps: true,
            sample_times: Vec::new(),
        }
    }
}

impl IntegrateOptions {
    pub fn with_rtol(rtol: f64) -> Self {
        IntegrateOptions { rtol, ..Default::default() }
    }
}

/// Time-ordered samples of one solution together with how it ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub masses: Masses,
    pub samples: Vec<State>,
    /// Energy of the initial state.
    pub h: f64,
    /// Last accepted time when the run stopped before the horizon; `None`
    /// stands for `+inf` as far as the run can tell.
    pub omega_plus: Option<f64>,
    pub terminated_by: Termination,
    /// Largest relative energy drift over the samples.
    pub max_drift: f64,
}

struct NBody<'a> {
    masses: &'a [f64],
    dim: usize,
    /// When set, the last state component accumulates `|v|_m^2/2 + U + h`.
    action_h: Option<f64>,
    force: std::cell::RefCell<Vec<f64>>,
}

impl<'a> NBody<'a> {
    fn new(masses: &'a [f64], dim: usize, action_h: Option<f64>) -> Self {
        NBody { masses, dim, action_h, force: std::cell::RefCell::new(vec![0.0; masses.len() * dim]) }
    }
}

impl OdeSystem for NBody<'_> {
    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let nd = self.masses.len() * self.dim;
        let (x, v) = (&y[..nd], &y[nd..2 * nd]);
        let mut force = self.force.borrow_mut();
        let u = potential_and_force(x, self.dim, self.masses, &mut force)?;
        dy[..nd].copy_from_slice(v);
        for c in 0..nd {
            dy[nd + c] = force[c] / self.masses[c / self.dim];
        }
        if let Some(h) = self.action_h {
            dy[2 * nd] = 0.5 * mass_inner_slice(v, v, self.dim, self.masses) + u + h;
        }
        Ok(())
    }

    /// Position errors are measured against the closest mutual distance, so
    /// close encounters are resolved whatever the size of the coordinates.
    fn tighten_scale(&self, y: &[f64], rtol: f64, scale: &mut [f64]) {
        let nd = self.masses.len() * self.dim;
        if self.masses.len() < 2 {
            return;
        }
        let r = rtol * min_distance_slice(&y[..nd], self.dim);
        scale[..nd].iter_mut().for_each(|s| *s = s.min(r));
    }
}

fn default_atol(y: &[f64], nd: usize, rtol: f64) -> Vec<f64> {
    let pos = y[..nd].iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let vel = y[nd..2 * nd].iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-3);
    let mut atol = vec![rtol * pos; nd];
    atol.extend(std::iter::repeat_n(rtol * vel, y.len() - nd));
    atol
}

fn state_from(y: &[f64], t: f64, n: usize, dim: usize) -> State {
    let nd = n * dim;
    State {
        x: Configuration::new(n, dim, y[..nd].to_vec()).expect("finite state"),
        v: Configuration::new(n, dim, y[nd..2 * nd].to_vec()).expect("finite state"),
        t,
    }
}

/// Integrates from `s0` to `t_end` with relative tolerance `rtol` and the
/// remaining options at their defaults.
pub fn integrate(s0: &State, m: &Masses, t_end: f64, rtol: f64) -> Result<Trajectory> {
    integrate_with(s0, m, t_end, &IntegrateOptions::with_rtol(rtol))
}

pub fn integrate_with(s0: &State, m: &Masses, t_end: f64, opts: &IntegrateOptions) -> Result<Trajectory> {
    Ok(run(s0, m, t_end, opts, None)?.0)
}

/// Integrates and also returns the accumulated `A_{L+h}` over the run.
pub(crate) fn integrate_action(
    s0: &State,
    m: &Masses,
    t_end: f64,
    h: f64,
    opts: &IntegrateOptions,
) -> Result<(Trajectory, f64)> {
    let (tr, action) = run(s0, m, t_end, opts, Some(h))?;
    Ok((tr, action.unwrap_or(0.0)))
}

/// `|E(s) - e0|` relative to `max(|e0|, T(s) + U(s))`. Near a collision
/// `T` and `U` blow up and cancel, so the attainable precision of `E` scales
/// with `T + U` rather than with the initial energy.
fn relative_drift(s: &State, m: &Masses, e0: f64) -> Result<f64> {
    let u = potential(&s.x, m)?;
    let t = 0.5 * mass_inner_slice(s.v.as_slice(), s.v.as_slice(), s.v.dim(), m.as_slice());
    Ok((t - u - e0).abs() / e0.abs().max(t + u).max(f64::MIN_POSITIVE))
}

/// Local error target of the stepper. Per-step errors accumulate over a
/// run, so the stepper works a decade below the requested tolerance.
fn step_rtol(rtol: f64) -> f64 {
    (STEP_RTOL_FACTOR * rtol).max(MIN_STEP_RTOL).min(rtol)
}

fn check_initial(s0: &State, m: &Masses, t_end: f64, opts: &IntegrateOptions) -> Result<()> {
    s0.x.check_shape(&s0.v)?;
    m.check_bodies(s0.x.n())?;
    if !(t_end > s0.t) || !t_end.is_finite() {
        return Err(Error::invalid(format!("t_end = {t_end} must exceed the initial time {}", s0.t)));
    }
    if !(opts.rtol > 0.0 && opts.rtol < 1.0) {
        return Err(Error::invalid("rtol must lie in (0, 1)"));
    }
    if !(opts.drift_tol > 0.0) {
        return Err(Error::invalid("drift tolerance must be positive"));
    }
    if let Err(Error::Collision { i, j, .. }) = potential(&s0.x, m) {
        return Err(Error::invalid(format!("initial configuration has a collision between bodies {i} and {j}")));
    }
    Ok(())
}

fn run(s0: &State, m: &Masses, t_end: f64, opts: &IntegrateOptions, action_h: Option<f64>) -> Result<(Trajectory, Option<f64>)> {
    check_initial(s0, m, t_end, opts)?;
    let (n, dim) = (s0.x.n(), s0.x.dim());
    let nd = n * dim;
    let ms = m.as_slice();
    let sys = NBody::new(ms, dim, action_h);

    let mut y0 = s0.x.as_slice().to_vec();
    y0.extend_from_slice(s0.v.as_slice());
    if action_h.is_some() {
        y0.push(0.0);
    }
    let rtol = step_rtol(opts.rtol);
    let atol = match opts.atol {
        Some(a) => vec![a; y0.len()],
        None => default_atol(&y0, nd, rtol),
    };

    let e0 = energy(s0, m)?;
    let guard = opts.guard.unwrap_or(1e-9 * diameter(&s0.x));
    let mut wanted: Vec<f64> = opts.sample_times.iter().copied().filter(|&t| t > s0.t && t <= t_end).collect();
    wanted.sort_by(f64::total_cmp);
    wanted.dedup();
    let mut next_wanted = 0;

    let mut samples = vec![s0.clone()];
    let mut max_drift = 0.0f64;
    let mut record = |st: State, samples: &mut Vec<State>| -> Result<()> {
        let drift = relative_drift(&st, m, e0)?;
        max_drift = max_drift.max(drift);
        if drift > opts.drift_tol {
            return Err(Error::EnergyDrift { t: st.t, drift, tol: opts.drift_tol });
        }
        if samples.last().is_some_and(|last| st.t > last.t) {
            samples.push(st);
        }
        Ok(())
    };

    let mut stepper = Dop853::new(&sys, s0.t, y0, t_end, rtol, atol)?;
    let mut terminated_by = Termination::Horizon;
    let mut omega_plus = None;
    while !stepper.finished() {
        if stepper.step()? == StepOutcome::Underflow {
            terminated_by = Termination::StepUnderflow;
            omega_plus = Some(stepper.t);
            break;
        }
        if next_wanted < wanted.len() && wanted[next_wanted] <= stepper.t {
            let seg: DenseSegment = stepper.dense()?;
            while next_wanted < wanted.len() && wanted[next_wanted] <= stepper.t {
                let t = wanted[next_wanted];
                let y = if t == stepper.t { stepper.y.clone() } else { seg.eval(t) };
                record(state_from(&y, t, n, dim), &mut samples)?;
                next_wanted += 1;
            }
        }
        if opts.record_steps || stepper.finished() {
            record(state_from(&stepper.y, stepper.t, n, dim), &mut samples)?;
        }
        if n > 1 && min_distance_slice(&stepper.y[..nd], dim) < guard {
            if !opts.record_steps {
                record(state_from(&stepper.y, stepper.t, n, dim), &mut samples)?;
            }
            terminated_by = Termination::CollisionGuard;
            omega_plus = Some(stepper.t);
            break;
        }
    }
    let action = action_h.map(|_| stepper.y[2 * nd]);
    let tr = Trajectory { masses: m.clone(), samples, h: e0, omega_plus, terminated_by, max_drift };
    Ok((tr, action))
}

impl Trajectory {
    pub fn samples(&self) -> &[State] {
        &self.samples
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    pub fn last(&self) -> &State {
        &self.samples[self.samples.len() - 1]
    }

    pub fn n(&self) -> usize {
        self.samples[0].x.n()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].x.dim()
    }

    /// Relative energy drift of every sample.
    pub fn energy_drifts(&self) -> Result<Vec<f64>> {
        self.samples.iter().map(|s| relative_drift(s, &self.masses, self.h)).collect()
    }

    /// Builds a trajectory from given samples, e.g. synthetic data for the
    /// asymptotic fits. `h` is stored as the energy level.
    pub fn from_samples(masses: Masses, samples: Vec<State>, h: f64) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::invalid("trajectory needs at least one sample"))?;
        masses.check_bodies(first.x.n())?;
        for s in &samples {
            first.x.check_shape(&s.x)?;
            first.x.check_shape(&s.v)?;
        }
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("sample times must be strictly increasing"));
        }
        Ok(Trajectory { masses, samples, h, omega_plus: None, terminated_by: Termination::Horizon, max_drift: 0.0 })
    }

    /// Bracketing samples of `t` and the local coordinate in `[0, 1]`.
    fn locate(&self, t: f64) -> Result<(&State, &State, f64)> {
        let (t0, t1) = (self.start_time(), self.end_time());
        if !(t >= t0 && t <= t1) {
            return Err(Error::invalid(format!("t = {t} outside the trajectory span [{t0}, {t1}]")));
        }
        if self.samples.len() == 1 {
            return Ok((&self.samples[0], &self.samples[0], 0.0));
        }
        let k = self.samples.partition_point(|s| s.t <= t).clamp(1, self.samples.len() - 1);
        let (a, b) = (&self.samples[k - 1], &self.samples[k]);
        Ok((a, b, (t - a.t) / (b.t - a.t)))
    }

    /// Positions at time `t` by cubic Hermite interpolation of positions
    /// and velocities.
    pub fn position_at(&self, t: f64) -> Result<Configuration> {
        let (a, b, s) = self.locate(t)?;
        if s == 0.0 {
            return Ok(a.x.clone());
        }
        let x = hermite(s, b.t - a.t, a.x.as_slice(), a.v.as_slice(), b.x.as_slice(), b.v.as_slice());
        Configuration::new(a.x.n(), a.x.dim(), x)
    }

    /// State at time `t`; velocities are interpolated with the
    /// accelerations at the bracketing samples.
    pub fn state_at(&self, t: f64) -> Result<State> {
        let (a, b, s) = self.locate(t)?;
        if s == 0.0 {
            return Ok(State { t, ..a.clone() });
        }
        let (n, dim) = (self.n(), self.dim());
        let ms = self.masses.as_slice();
        let acc = |s: &State| -> Result<Vec<f64>> {
            let mut f = vec![0.0; n * dim];
            potential_and_force(s.x.as_slice(), dim, ms, &mut f)?;
            Ok(f.iter().enumerate().map(|(c, v)| v / ms[c / dim]).collect())
        };
        let dt = b.t - a.t;
        let x = hermite(s, dt, a.x.as_slice(), a.v.as_slice(), b.x.as_slice(), b.v.as_slice());
        let v = hermite(s, dt, a.v.as_slice(), &acc(a)?, b.v.as_slice(), &acc(b)?);
        State::new(Configuration::new(n, dim, x)?, Configuration::new(n, dim, v)?, t)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let tr: Trajectory = serde_json::from_str(s)?;
        if tr.samples.is_empty() {
            return Err(Error::invalid("trajectory has no samples"));
        }
        Ok(tr)
    }

    pub fn csv_header(n: usize, dim: usize) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for prefix in ["x", "v"] {
            for i in 0..n {
                for k in 0..dim {
                    h.push(format!("{prefix}{i}_{k}"));
                }
            }
        }
        h.push("energy".into());
        h
    }

    /// One row per sample: `t`, positions, velocities, energy.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(Self::csv_header(self.n(), self.dim()))?;
        for s in &self.samples {
            let mut row = vec![s.t.to_string()];
            row.extend(s.x.as_slice().iter().map(f64::to_string));
            row.extend(s.v.as_slice().iter().map(f64::to_string));
            row.push(energy(s, &self.masses)?.to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the samples written by [`Trajectory::write_csv`]. The energy
    /// column is ignored.
    pub fn read_csv_samples<R: Read>(r: R, n: usize, dim: usize) -> Result<Vec<State>> {
        let mut rd = csv::Reader::from_reader(r);
        let expected = Self::csv_header(n, dim);
        if rd.headers()?.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::invalid("unexpected trajectory CSV header"));
        }
        let nd = n * dim;
        let mut out = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::invalid(format!("bad CSV number {f:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            out.push(State::new(
                Configuration::new(n, dim, vals[1..1 + nd].to_vec())?,
                Configuration::new(n, dim, vals[1 + nd..1 + 2 * nd].to_vec())?,
                vals[0],
            )?);
        }
        Ok(out)
    }
}

fn hermite(s: f64, dt: f64, p0: &[f64], m0: &[f64], p1: &[f64], m1: &[f64]) -> Vec<f64> {
    let h00 = 2.0 * s.powi(3) - 3.0 * s * s + 1.0;
    let h10 = s.powi(3) - 2.0 * s * s + s;
    let h01 = -2.0 * s.powi(3) + 3.0 * s * s;
    let h11 = s.powi(3) - s * s;
    (0..p0.len()).map(|c| h00 * p0[c] + h10 * dt * m0[c] + h01 * p1[c] + h11 * dt * m1[c]).collect()
}
