//! Shooting between configurations with the true flow.
//!
//! [`shoot_free_time`] solves the two-point problem "leave `x` with energy
//! `h` and reach `y`" by Newton iteration on the unknowns `(v, tau)`. It is
//! used to polish discrete free-time minimizers: the discrete solution
//! supplies the starting guess, the shot supplies the accurate velocity and
//! action.

use serde::{Deserialize, Serialize};

use super::{integrate_action, integrate_with, IntegrateOptions, State, Termination};
use crate::action::DiscretePath;
use crate::error::{Error, Result};
use crate::geometry::{diameter, mass_inner_slice, potential, Configuration, Masses, TangentVector};
use crate::minimizer::endpoint_scale;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootOptions {
    pub rtol: f64,
    /// Relative tolerance on the endpoint miss and the energy residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Relative perturbation of the velocity in finite-difference columns.
    pub fd_step: f64,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions { rtol: 1e-12, tol: 1e-10, max_iters: 40, fd_step: 1e-7 }
    }
}

/// A true motion from `x` to `y` with energy `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotResult {
    pub v: TangentVector,
    pub tau: f64,
    /// `A_{L+h}` along the motion.
    pub value: f64,
    /// Velocity on arrival.
    pub end_velocity: TangentVector,
    /// Endpoint miss in the mass metric, relative to the endpoint scale.
    pub residual: f64,
    pub iterations: usize,
}

struct Shot {
    end: State,
    action: f64,
}

fn fire(x: &Configuration, v: &[f64], tau: f64, m: &Masses, h: f64, rtol: f64) -> Result<Shot> {
    if !(tau > 0.0) {
        return Err(Error::Domain("nonpositive flight time".into()));
    }
    let v = Configuration::new(x.n(), x.dim(), v.to_vec())?;
    let opts = IntegrateOptions { rtol, record_steps: false, drift_tol: 1e-4, ..Default::default() };
    let (tr, action) = integrate_action(&State::new(x.clone(), v, 0.0)?, m, tau, h, &opts)?;
    if tr.terminated_by != Termination::Horizon {
        return Err(Error::Domain(format!("shot stopped early ({:?}) at t = {:?}", tr.terminated_by, tr.omega_plus)));
    }
    Ok(Shot { end: tr.last().clone(), action })
}

/// Solves `A z = b` in place by Gaussian elimination with partial pivoting.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<()> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        if a[piv][col] == 0.0 || !a[piv][col].is_finite() {
            return Err(Error::NonConvergence("singular shooting Jacobian".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a[col][c] * b[c];
        }
        b[col] = acc / a[col][col];
    }
    Ok(())
}

/// Newton shooting for the energy-`h` motion from `x` to `y`, starting from
/// the guess `(v_guess, tau_guess)`.
pub fn shoot_free_time(
    x: &Configuration,
    y: &Configuration,
    m: &Masses,
    h: f64,
    v_guess: &TangentVector,
    tau_guess: f64,
    opts: &ShootOptions,
) -> Result<ShotResult> {
    x.check_shape(y)?;
    x.check_shape(v_guess)?;
    m.check_bodies(x.n())?;
    if !(h >= 0.0) {
        return Err(Error::invalid("energy level must be nonnegative"));
    }
    let (n, dim) = (x.n(), x.dim());
    let nd = n * dim;
    let ms = m.as_slice();
    let u0 = potential(x, m)?;
    let scale = endpoint_scale(x, y, m) * m.total().sqrt();
    let e_scale = h + u0;

    let residual = |shot: &Shot, v: &[f64]| -> (Vec<f64>, f64) {
        let mut r: Vec<f64> = shot.end.x.as_slice().iter().zip(y.as_slice()).map(|(a, b)| a - b).collect();
        r.push(0.5 * mass_inner_slice(v, v, dim, ms) - u0 - h);
        let miss = mass_inner_slice(&r[..nd], &r[..nd], dim, ms).sqrt() / scale;
        let merit = miss.max(r[nd].abs() / e_scale);
        (r, merit)
    };

    let mut v = v_guess.as_slice().to_vec();
    let mut tau = tau_guess;
    let mut shot = fire(x, &v, tau, m, h, opts.rtol)?;
    let (mut r, mut merit) = residual(&shot, &v);
    let mut iterations = 0;
    while merit > opts.tol {
        if iterations == opts.max_iters {
            return Err(Error::NonConvergence(format!("shooting stalled at relative residual {merit:e}")));
        }
        iterations += 1;

        let vmax = v.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1e-8);
        let mut jac = vec![vec![0.0; nd + 1]; nd + 1];
        for c in 0..nd {
            let dv = opts.fd_step * vmax;
            let mut vp = v.clone();
            vp[c] += dv;
            let sp = fire(x, &vp, tau, m, h, opts.rtol)?;
            for row in 0..nd {
                jac[row][c] = (sp.end.x.as_slice()[row] - shot.end.x.as_slice()[row]) / dv;
            }
            jac[nd][c] = ms[c / dim] * v[c];
        }
        for row in 0..nd {
            jac[row][nd] = shot.end.v.as_slice()[row];
        }
        let mut step: Vec<f64> = r.iter().map(|c| -c).collect();
        solve_dense(&mut jac, &mut step)?;

        let mut alpha = 1.0;
        loop {
            let vt: Vec<f64> = (0..nd).map(|c| v[c] + alpha * step[c]).collect();
            let taut = tau + alpha * step[nd];
            let trial = if taut > 0.0 { fire(x, &vt, taut, m, h, opts.rtol).ok() } else { None };
            if let Some(st) = trial {
                let (rt, mt) = residual(&st, &vt);
                if mt < merit || alpha < 1e-3 && mt.is_finite() {
                    v = vt;
                    tau = taut;
                    shot = st;
                    r = rt;
                    merit = mt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return Err(Error::NonConvergence(format!("shooting line search failed at residual {merit:e}")));
            }
        }
    }
    let miss = mass_inner_slice(&r[..nd], &r[..nd], dim, ms).sqrt() / scale;
    Ok(ShotResult {
        v: Configuration::new(n, dim, v)?,
        tau,
        value: shot.action,
        end_velocity: shot.end.v,
        residual: miss,
        iterations,
    })
}

/// A true motion through `nodes`, the states at the segment boundaries of
/// a multiple-shooting solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiShot {
    pub nodes: Vec<State>,
    pub tau: f64,
    /// `A_{L+h}` along the motion.
    pub value: f64,
    /// `A_{L+h}` of each segment between consecutive nodes.
    pub segment_actions: Vec<f64>,
    /// Largest scaled defect at convergence.
    pub residual: f64,
    pub iterations: usize,
}

impl MultiShot {
    pub fn initial_velocity(&self) -> &TangentVector {
        &self.nodes[0].v
    }

    pub fn end_velocity(&self) -> &TangentVector {
        &self.nodes[self.nodes.len() - 1].v
    }
}

struct Segment {
    end: Vec<f64>,
    accel: Vec<f64>,
    action: f64,
}

fn flow_segment(z: &[f64], n: usize, dim: usize, m: &Masses, h: f64, dur: f64, rtol: f64) -> Result<Segment> {
    let nd = n * dim;
    let x = Configuration::new(n, dim, z[..nd].to_vec())?;
    let v = Configuration::new(n, dim, z[nd..2 * nd].to_vec())?;
    let shot = fire(&x, v.as_slice(), dur, m, h, rtol)?;
    let mut end = shot.end.x.into_vec();
    end.extend_from_slice(shot.end.v.as_slice());
    let mut force = vec![0.0; nd];
    crate::geometry::potential_and_force(&end[..nd], dim, m.as_slice(), &mut force)?;
    let accel = force.iter().enumerate().map(|(c, f)| f / m.as_slice()[c / dim]).collect();
    Ok(Segment { end, accel, action: shot.action })
}

/// Multiple-shooting solve of the energy-`h` motion from `x` to `y`.
///
/// `guess` holds approximate states at increasing times; its first and last
/// positions are replaced by `x` and `y`. The unknowns are the initial
/// velocity, the interior node states and the total duration, whose
/// segments keep the relative lengths of the guess.
pub fn shoot_multiple(
    x: &Configuration,
    y: &Configuration,
    m: &Masses,
    h: f64,
    guess: &[State],
    opts: &ShootOptions,
) -> Result<MultiShot> {
    x.check_shape(y)?;
    m.check_bodies(x.n())?;
    if guess.len() < 2 {
        return Err(Error::invalid("multiple shooting needs at least two guess states"));
    }
    if guess.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::invalid("guess times must be strictly increasing"));
    }
    for s in guess {
        x.check_shape(&s.x)?;
        x.check_shape(&s.v)?;
    }
    let (n, dim) = (x.n(), x.dim());
    let nd = n * dim;
    let ms = m.as_slice();
    let segs = guess.len() - 1;
    let tau0 = guess[segs].t - guess[0].t;
    let frac: Vec<f64> = guess.windows(2).map(|w| (w[1].t - w[0].t) / tau0).collect();
    let u0 = potential(x, m)?;
    let len_scale = endpoint_scale(x, y, m);
    let speed_scale = (2.0 * (h + u0) / m.total()).sqrt();
    let e_scale = h + u0;

    // unknowns: v_0, (x_j, v_j) for interior j, tau
    let dim_z = nd + 2 * nd * (segs - 1) + 1;
    let mut z = Vec::with_capacity(dim_z);
    z.extend_from_slice(guess[0].v.as_slice());
    for s in &guess[1..segs] {
        z.extend_from_slice(s.x.as_slice());
        z.extend_from_slice(s.v.as_slice());
    }
    z.push(tau0);
    let weights: Vec<f64> = {
        let mut w = Vec::with_capacity(dim_z);
        for j in 0..segs {
            let rows = if j + 1 < segs { 2 * nd } else { nd };
            w.extend((0..rows).map(|r| if r < nd { 1.0 / len_scale } else { 1.0 / speed_scale }));
        }
        w.push(1.0 / e_scale);
        w
    };
    let start_of = |z: &[f64], j: usize| -> Vec<f64> {
        if j == 0 {
            let mut s = x.as_slice().to_vec();
            s.extend_from_slice(&z[..nd]);
            s
        } else {
            let off = nd + 2 * nd * (j - 1);
            z[off..off + 2 * nd].to_vec()
        }
    };
    let evaluate = |z: &[f64]| -> Result<(Vec<f64>, Vec<Segment>)> {
        let tau = z[dim_z - 1];
        if !(tau > 0.0) {
            return Err(Error::Domain("nonpositive duration".into()));
        }
        let mut r = Vec::with_capacity(dim_z);
        let mut out = Vec::with_capacity(segs);
        for j in 0..segs {
            let seg = flow_segment(&start_of(z, j), n, dim, m, h, frac[j] * tau, opts.rtol)?;
            if j + 1 < segs {
                let next = start_of(z, j + 1);
                r.extend(seg.end.iter().zip(&next).map(|(a, b)| a - b));
            } else {
                r.extend(seg.end[..nd].iter().zip(y.as_slice()).map(|(a, b)| a - b));
            }
            out.push(seg);
        }
        r.push(0.5 * mass_inner_slice(&z[..nd], &z[..nd], dim, ms) - u0 - h);
        Ok((r, out))
    };
    let norms = |r: &[f64]| -> (f64, f64) {
        let scaled = r.iter().zip(&weights).map(|(a, w)| a * w);
        scaled.fold((0.0f64, 0.0f64), |(mx, sq), v| (mx.max(v.abs()), sq + v * v))
    };

    let (mut r, mut segments) = evaluate(&z)?;
    let (mut worst, mut merit) = norms(&r);
    let mut iterations = 0;
    while worst > opts.tol {
        if iterations == opts.max_iters {
            return Err(Error::NonConvergence(format!("multiple shooting stalled at scaled defect {worst:e}")));
        }
        iterations += 1;
        let tau = z[dim_z - 1];
        let mut jac = vec![vec![0.0; dim_z]; dim_z];
        let mut row0 = 0;
        for j in 0..segs {
            let rows = if j + 1 < segs { 2 * nd } else { nd };
            let start = start_of(&z, j);
            // columns of this segment's own unknowns
            let (first, col0) = if j == 0 { (nd, 0) } else { (0, nd + 2 * nd * (j - 1)) };
            for c in first..2 * nd {
                let typical = if c < nd { len_scale } else { speed_scale };
                let d = opts.fd_step * start[c].abs().max(typical);
                let mut pert = start.clone();
                pert[c] += d;
                let sp = flow_segment(&pert, n, dim, m, h, frac[j] * tau, opts.rtol)?;
                for row in 0..rows {
                    jac[row0 + row][col0 + c - first] = (sp.end[row] - segments[j].end[row]) / d;
                }
            }
            if j + 1 < segs {
                let next0 = nd + 2 * nd * j;
                for row in 0..rows {
                    jac[row0 + row][next0 + row] = -1.0;
                }
            }
            for row in 0..rows {
                let deriv = if row < nd { segments[j].end[nd + row] } else { segments[j].accel[row - nd] };
                jac[row0 + row][dim_z - 1] = frac[j] * deriv;
            }
            row0 += rows;
        }
        for c in 0..nd {
            jac[dim_z - 1][c] = ms[c / dim] * z[c];
        }
        let mut step: Vec<f64> = r.iter().map(|c| -c).collect();
        solve_dense(&mut jac, &mut step)?;

        let mut alpha = 1.0;
        loop {
            let zt: Vec<f64> = z.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
            if let Ok((rt, st)) = evaluate(&zt) {
                let (wt, mt) = norms(&rt);
                if mt < merit || (alpha < 1e-3 && wt.is_finite()) {
                    z = zt;
                    r = rt;
                    segments = st;
                    worst = wt;
                    merit = mt;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return Err(Error::NonConvergence(format!("multiple shooting line search failed at defect {worst:e}")));
            }
        }
    }

    let tau = z[dim_z - 1];
    let mut nodes = Vec::with_capacity(segs + 1);
    let mut t = 0.0;
    for j in 0..segs {
        let s = start_of(&z, j);
        nodes.push(State::new(
            Configuration::new(n, dim, s[..nd].to_vec())?,
            Configuration::new(n, dim, s[nd..].to_vec())?,
            t,
        )?);
        t += frac[j] * tau;
    }
    let last = &segments[segs - 1].end;
    nodes.push(State::new(
        Configuration::new(n, dim, last[..nd].to_vec())?,
        Configuration::new(n, dim, last[nd..].to_vec())?,
        tau,
    )?);
    let segment_actions: Vec<f64> = segments.iter().map(|s| s.action).collect();
    Ok(MultiShot { nodes, tau, value: segment_actions.iter().sum(), segment_actions, residual: worst, iterations })
}

/// Guess states for [`shoot_multiple`] read off a discrete path at
/// `segments + 1` geometrically graded times, dense near the start where
/// the motion is fastest.
pub fn shooting_guess(p: &DiscretePath, segments: usize) -> Result<Vec<State>> {
    if segments == 0 {
        return Err(Error::invalid("need at least one shooting segment"));
    }
    let (tau, dt, k) = (p.duration(), p.dt(), p.intervals());
    let x = p.start();
    let m = p.masses();
    let speed = (2.0 * (potential(x, m)? + 1.0) / m.total()).sqrt();
    let first = (tau / segments as f64).min(diameter(x) / speed);
    let times = graded_times(tau, segments, first);
    let n = p.n();
    let dim = p.dim();
    let mut out = Vec::with_capacity(segments + 1);
    for (j, &t) in times.iter().enumerate() {
        let s = ((t - p.times()[0]) / dt).clamp(0.0, k as f64);
        let i = (s.floor() as usize).min(k - 1);
        let f = s - i as f64;
        let (a, b) = (p.node(i).as_slice(), p.node(i + 1).as_slice());
        let pos: Vec<f64> = a.iter().zip(b).map(|(a, b)| a + f * (b - a)).collect();
        let vel = if j == 0 { initial_velocity(p) } else { Configuration::new(n, dim, a.iter().zip(b).map(|(a, b)| (b - a) / dt).collect())? };
        out.push(State::new(Configuration::new(n, dim, pos)?, vel, t)?);
    }
    Ok(out)
}

/// `segments + 1` times from 0 to `tau` whose steps grow geometrically from
/// `first`.
fn graded_times(tau: f64, segments: usize, first: f64) -> Vec<f64> {
    let total = |q: f64| partial_sum(first, q, segments);
    let (mut lo, mut hi) = (1.0, 2.0);
    while total(hi) < tau {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let q = 0.5 * (lo + hi);
    let mut times: Vec<f64> = (0..segments).map(|j| partial_sum(first, q, j)).collect();
    times.push(tau);
    times
}

/// `first * (1 + q + ... + q^(j-1))`.
fn partial_sum(first: f64, q: f64, j: usize) -> f64 {
    if (q - 1.0).abs() < 1e-12 {
        first * j as f64
    } else {
        first * (q.powi(j as i32) - 1.0) / (q - 1.0)
    }
}

/// Initial velocity of a discrete path by a one-sided difference, fourth
/// order when the path has at least four intervals.
pub(crate) fn initial_velocity(p: &DiscretePath) -> TangentVector {
    let dt = p.dt();
    let x = |k: usize| p.node(k).as_slice();
    let len = x(0).len();
    let data: Vec<f64> = if p.intervals() >= 4 {
        (0..len)
            .map(|c| (-25.0 * x(0)[c] + 48.0 * x(1)[c] - 36.0 * x(2)[c] + 16.0 * x(3)[c] - 3.0 * x(4)[c]) / (12.0 * dt))
            .collect()
    } else {
        (0..len).map(|c| (x(1)[c] - x(0)[c]) / dt).collect()
    };
    Configuration::new(p.n(), p.dim(), data).expect("finite path")
}

/// Integrates from the first node of `p` with its fitted initial velocity
/// over the path duration and returns the endpoint miss, in the mass metric
/// and relative to the endpoint scale.
pub fn shoot_and_compare(p: &DiscretePath, rtol: f64) -> Result<f64> {
    let m = p.masses();
    let v = initial_velocity(p);
    let s0 = State::new(p.start().clone(), v, 0.0)?;
    let opts = IntegrateOptions { rtol, record_steps: false, drift_tol: 1e-2, ..Default::default() };
    let tr = integrate_with(&s0, m, p.duration(), &opts)?;
    if tr.terminated_by != Termination::Horizon {
        return Err(Error::Domain(format!("integration stopped at t = {} before the path ends", tr.end_time())));
    }
    let d: Vec<f64> = tr.last().x.as_slice().iter().zip(p.end().as_slice()).map(|(a, b)| a - b).collect();
    let miss = mass_inner_slice(&d, &d, p.dim(), m.as_slice()).sqrt();
    Ok(miss / (endpoint_scale(p.start(), p.end(), m) * m.total().sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_solver() {
        let mut a = vec![vec![0.0, 2.0, 1.0], vec![1.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]];
        let mut b = vec![5.0, 3.0, 6.0];
        solve_dense(&mut a, &mut b).unwrap();
        // solution (1.4, 1.6, 1.8)
        for (got, want) in b.iter().zip([1.4, 1.6, 1.8]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn straight_single_body_path_has_no_miss() {
        let x = Configuration::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_rows(&[[3.0, -1.0]]).unwrap();
        let p = DiscretePath::straight(&x, &y, 2.0, 10, Masses::unit(1)).unwrap();
        assert!(shoot_and_compare(&p, 1e-12).unwrap() < 1e-12);
    }

    #[test]
    fn free_particle_shot_hits_target() {
        let x = Configuration::from_rows(&[[0.0, 0.0]]).unwrap();
        let y = Configuration::from_rows(&[[3.0, 4.0]]).unwrap();
        let m = Masses::unit(1);
        // speed 1 at h = 1/2, so tau = 5 and the action is 2 h tau = 5
        let guess = Configuration::from_rows(&[[0.5, 0.9]]).unwrap();
        let shot = shoot_free_time(&x, &y, &m, 0.5, &guess, 4.0, &ShootOptions::default()).unwrap();
        assert!((shot.tau - 5.0).abs() < 1e-9);
        assert!((shot.value - 5.0).abs() < 1e-9);
        assert!((shot.v.as_slice()[0] - 0.6).abs() < 1e-9);
    }
}
