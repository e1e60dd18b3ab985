//! Limited-memory BFGS on the interior nodes of a discrete path.
//!
//! The initial inverse-Hessian guess is the inverse of the kinetic part of
//! the action Hessian, `(m_i / dt) tridiag(-1, 2, -1)` per coordinate, so the
//! iteration count stays roughly independent of the mesh size. Steps that
//! bring two bodies closer than the guard distance are halved, never
//! penalized.

use std::collections::VecDeque;

use crate::action::ActionProblem;
use crate::error::{Error, Result};
use crate::geometry::min_distance_slice;

const MEMORY: usize = 12;
const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Clone, Copy, Debug)]
pub(crate) struct LbfgsSettings {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub barrier_eps: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LbfgsReport {
    pub value: f64,
    /// Mass-metric norm of the gradient at the returned point.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Thomas-algorithm factors for the constant `tridiag(-1, 2, -1)` matrix.
struct KineticPreconditioner {
    denom: Vec<f64>,
    stride: usize,
    dim: usize,
    dt: f64,
}

impl KineticPreconditioner {
    fn new(rows: usize, stride: usize, dim: usize, dt: f64) -> Self {
        let mut denom = Vec::with_capacity(rows);
        let mut c_prev = 0.0;
        for _ in 0..rows {
            let d = 2.0 + c_prev;
            denom.push(d);
            c_prev = -1.0 / d;
        }
        KineticPreconditioner { denom, stride, dim, dt }
    }

    /// `out = P^{-1} r` with `P = (m / dt) T`.
    fn apply(&self, r: &[f64], masses: &[f64], out: &mut [f64]) {
        let rows = self.denom.len();
        let s = self.stride;
        for c in 0..s {
            // forward sweep
            let mut prev = 0.0;
            for k in 0..rows {
                let v = (r[k * s + c] + prev) / self.denom[k];
                out[k * s + c] = v;
                prev = v;
            }
            // back substitution, c'_k = -1 / denom_k
            for k in (0..rows.saturating_sub(1)).rev() {
                out[k * s + c] += out[(k + 1) * s + c] / self.denom[k];
            }
            let w = self.dt / masses[c / self.dim];
            for k in 0..rows {
                out[k * s + c] *= w;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mass_grad_norm(g: &[f64], dim: usize, masses: &[f64]) -> f64 {
    let n = masses.len();
    g.iter()
        .enumerate()
        .map(|(c, v)| v * v / masses[(c / dim) % n])
        .sum::<f64>()
        .sqrt()
}

fn guard_ok(z: &[f64], stride: usize, dim: usize, eps: f64) -> bool {
    eps <= 0.0 || z.chunks(stride).all(|node| min_distance_slice(node, dim) >= eps)
}

/// Minimizes the discrete action over the interior nodes `z` in place.
pub(crate) fn minimize(problem: &ActionProblem, z: &mut [f64], settings: LbfgsSettings) -> Result<LbfgsReport> {
    let stride = problem.node_len();
    let dim = problem.dim;
    let masses = problem.masses;
    let rows = z.len() / stride;
    if rows == 0 {
        let value = problem.eval(z, &mut [])?;
        return Ok(LbfgsReport { value, grad_norm: 0.0, iterations: 0, converged: true });
    }
    let precond = KineticPreconditioner::new(rows, stride, dim, problem.dt);
    let len = z.len();

    let mut g = vec![0.0; len];
    let mut f = problem.eval(z, &mut g)?;
    let mut gnorm = mass_grad_norm(&g, dim, masses);

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let mut dir = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut g_trial = vec![0.0; len];
    let mut alpha_buf = [0.0; MEMORY];
    let mut tmp = vec![0.0; len];

    let mut iterations = 0;
    let mut restarted = false;
    while iterations < settings.max_iters {
        if gnorm <= settings.grad_tol {
            return Ok(LbfgsReport { value: f, grad_norm: gnorm, iterations, converged: true });
        }
        iterations += 1;

        // two-loop recursion with the kinetic preconditioner as H0
        let mut q = g.clone();
        for (i, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &q);
            alpha_buf[i] = a;
            q.iter_mut().zip(y).for_each(|(qc, yc)| *qc -= a * yc);
        }
        precond.apply(&q, masses, &mut dir);
        if let Some((s, y, _)) = history.back() {
            precond.apply(y, masses, &mut tmp);
            let gamma = dot(s, y) / dot(y, &tmp);
            if gamma.is_finite() && gamma > 0.0 {
                dir.iter_mut().for_each(|d| *d *= gamma);
            }
        }
        for (i, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &dir);
            let a = alpha_buf[i];
            dir.iter_mut().zip(s).for_each(|(d, sc)| *d += (a - b) * sc);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            // not a descent direction: fall back to the preconditioned gradient
            history.clear();
            precond.apply(&g, masses, &mut dir);
            dir.iter_mut().for_each(|d| *d = -*d);
            slope = dot(&g, &dir);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for i in 0..len {
                trial[i] = z[i] + alpha * dir[i];
            }
            if !guard_ok(&trial, stride, dim, settings.barrier_eps) {
                alpha *= 0.5;
                continue;
            }
            let f_trial = match problem.eval(&trial, &mut g_trial) {
                Ok(v) => v,
                Err(Error::Collision { .. }) => {
                    alpha *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let armijo = f_trial <= f + ARMIJO_C1 * alpha * slope;
            // near the optimum f is dominated by rounding; accept on the
            // approximate Wolfe conditions instead
            let approx = f_trial <= f + 1e-12 * f.abs().max(1e-300) && {
                let slope_new = dot(&g_trial, &dir);
                slope_new >= 0.9 * slope && slope_new <= -(1.0 - 2.0 * 0.1) * slope
            };
            if armijo || approx {
                accepted = Some(f_trial);
                break;
            }
            alpha *= 0.5;
        }

        let Some(f_new) = accepted else {
            if restarted || history.is_empty() {
                break;
            }
            history.clear();
            restarted = true;
            continue;
        };
        restarted = false;

        let s: Vec<f64> = trial.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == MEMORY {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        z.copy_from_slice(&trial);
        g.copy_from_slice(&g_trial);
        f = f_new;
        gnorm = mass_grad_norm(&g, dim, masses);
    }
    Ok(LbfgsReport { value: f, grad_norm: gnorm, iterations, converged: gnorm <= settings.grad_tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preconditioner_inverts_scaled_laplacian() {
        let rows = 7;
        let masses = [2.0, 0.5];
        let (dim, stride, dt) = (1, 2, 0.3);
        let p = KineticPreconditioner::new(rows, stride, dim, dt);
        let x: Vec<f64> = (0..rows * stride).map(|i| (i as f64 * 0.37).sin()).collect();
        // r = (m/dt) T x
        let mut r = vec![0.0; x.len()];
        for k in 0..rows {
            for c in 0..stride {
                let left = if k > 0 { x[(k - 1) * stride + c] } else { 0.0 };
                let right = if k + 1 < rows { x[(k + 1) * stride + c] } else { 0.0 };
                r[k * stride + c] = masses[c] / dt * (2.0 * x[k * stride + c] - left - right);
            }
        }
        let mut out = vec![0.0; x.len()];
        p.apply(&r, &masses, &mut out);
        for (a, b) in out.iter().zip(&x) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
