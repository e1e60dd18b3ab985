//! Adaptive explicit Runge-Kutta stepper of order 8 with embedded 5th and
//! 3rd order error estimators and 7th-order dense output.

use super::tableau::{A, B, C, D, E3, E5, STAGES, STAGES_EXT};
use crate::error::{Error, Result};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;
const ERROR_EXPONENT: f64 = -1.0 / 8.0;

/// First-order system `y' = f(t, y)`.
pub(crate) trait OdeSystem {
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]) -> Result<()>;

    /// May shrink the per-component error scales at state `y`.
    fn tighten_scale(&self, _y: &[f64], _rtol: f64, _scale: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum StepOutcome {
    Accepted,
    /// The step size fell below the underflow threshold.
    Underflow,
}

pub(crate) struct Dop853<'s, S: OdeSystem> {
    sys: &'s S,
    pub t: f64,
    pub y: Vec<f64>,
    pub f: Vec<f64>,
    pub t_old: f64,
    y_old: Vec<f64>,
    f_old: Vec<f64>,
    direction: f64,
    t_bound: f64,
    h_abs: f64,
    h_prev: f64,
    rtol: f64,
    atol: Vec<f64>,
    /// Minimum step, as a fraction of the time scale of the run.
    min_step: f64,
    k: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

fn rms(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    (v.map(|x| x * x).sum::<f64>() / n as f64).sqrt()
}

impl<'s, S: OdeSystem> Dop853<'s, S> {
    pub fn new(sys: &'s S, t0: f64, y0: Vec<f64>, t_bound: f64, rtol: f64, atol: Vec<f64>) -> Result<Self> {
        let n = y0.len();
        debug_assert_eq!(atol.len(), n);
        let mut f = vec![0.0; n];
        sys.rhs(t0, &y0, &mut f)?;
        let direction = if t_bound >= t0 { 1.0 } else { -1.0 };
        let t_scale = t0.abs().max((t_bound - t0).abs()).max(f64::MIN_POSITIVE);
        let mut stepper = Dop853 {
            sys,
            t: t0,
            y_old: y0.clone(),
            y: y0,
            f_old: f.clone(),
            f,
            t_old: t0,
            direction,
            t_bound,
            h_abs: 0.0,
            h_prev: 0.0,
            rtol,
            atol,
            min_step: 1e-14 * t_scale,
            k: vec![vec![0.0; n]; STAGES_EXT],
            scratch: vec![0.0; n],
        };
        stepper.h_abs = stepper.initial_step()?;
        Ok(stepper)
    }

    fn scale(&self, y: &[f64], y_new: &[f64]) -> Vec<f64> {
        let mut sc: Vec<f64> =
            (0..y.len()).map(|i| self.atol[i] + y[i].abs().max(y_new[i].abs()) * self.rtol).collect();
        self.sys.tighten_scale(y, self.rtol, &mut sc);
        sc
    }

    fn initial_step(&mut self) -> Result<f64> {
        let n = self.y.len();
        let span = (self.t_bound - self.t).abs();
        if span == 0.0 {
            return Ok(0.0);
        }
        let sc = self.scale(&self.y, &self.y);
        let d0 = rms((0..n).map(|i| self.y[i] / sc[i]), n);
        let d1 = rms((0..n).map(|i| self.f[i] / sc[i]), n);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        let h0 = h0.min(span);
        let y1: Vec<f64> = (0..n).map(|i| self.y[i] + self.direction * h0 * self.f[i]).collect();
        let mut f1 = vec![0.0; n];
        self.sys.rhs(self.t + self.direction * h0, &y1, &mut f1)?;
        let d2 = rms((0..n).map(|i| (f1[i] - self.f[i]) / sc[i]), n) / h0;
        let h1 = if d1 <= 1e-15 && d2 <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / 8.0)
        };
        Ok((100.0 * h0).min(h1).min(span))
    }

    pub fn finished(&self) -> bool {
        self.direction * (self.t - self.t_bound) >= 0.0
    }

    /// Attempts steps until one is accepted.
    pub fn step(&mut self) -> Result<StepOutcome> {
        let n = self.y.len();
        let mut h_abs = self.h_abs.max(self.min_step);
        let mut rejected = false;
        loop {
            if h_abs < self.min_step {
                return Ok(StepOutcome::Underflow);
            }
            let mut h = h_abs * self.direction;
            let mut t_new = self.t + h;
            if self.direction * (t_new - self.t_bound) > 0.0 {
                t_new = self.t_bound;
            }
            h = t_new - self.t;
            h_abs = h.abs();

            let (y_new, f_new) = match self.attempt(h, t_new) {
                Ok(v) => v,
                // a stage landed on a collision: the step is far too long
                Err(Error::Collision { .. }) => {
                    h_abs *= MIN_FACTOR;
                    rejected = true;
                    continue;
                }
                Err(e) => return Err(e),
            };

            let scale = self.scale(&self.y, &y_new);
            let mut e5 = 0.0;
            let mut e3 = 0.0;
            for i in 0..n {
                let sc = scale[i];
                let (mut a5, mut a3) = (0.0, 0.0);
                for j in 0..=STAGES {
                    a5 += E5[j] * self.k[j][i];
                    a3 += E3[j] * self.k[j][i];
                }
                e5 += (a5 / sc).powi(2);
                e3 += (a3 / sc).powi(2);
            }
            let err = if e5 == 0.0 && e3 == 0.0 { 0.0 } else { h_abs * e5 / ((e5 + 0.01 * e3) * n as f64).sqrt() };

            if err < 1.0 {
                let mut factor = if err == 0.0 { MAX_FACTOR } else { MAX_FACTOR.min(SAFETY * err.powf(ERROR_EXPONENT)) };
                if rejected {
                    factor = factor.min(1.0);
                }
                self.h_abs = h_abs * factor;
                self.h_prev = h;
                self.t_old = self.t;
                std::mem::swap(&mut self.y_old, &mut self.y);
                std::mem::swap(&mut self.f_old, &mut self.f);
                self.y = y_new;
                self.f = f_new;
                self.t = t_new;
                return Ok(StepOutcome::Accepted);
            }
            h_abs *= MIN_FACTOR.max(SAFETY * err.powf(ERROR_EXPONENT));
            rejected = true;
        }
    }

    fn attempt(&mut self, h: f64, t_new: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.y.len();
        self.k[0].copy_from_slice(&self.f);
        for s in 1..STAGES {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.scratch[i] = self.y[i] + h * acc;
            }
            let (_, tail) = self.k.split_at_mut(s);
            self.sys.rhs(self.t + C[s] * h, &self.scratch, &mut tail[0])?;
        }
        let mut y_new = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..STAGES {
                acc += B[j] * self.k[j][i];
            }
            y_new[i] = self.y[i] + h * acc;
        }
        let mut f_new = vec![0.0; n];
        self.sys.rhs(t_new, &y_new, &mut f_new)?;
        self.k[STAGES].copy_from_slice(&f_new);
        Ok((y_new, f_new))
    }

    /// Interpolant over the last accepted step.
    pub fn dense(&mut self) -> Result<DenseSegment> {
        let n = self.y.len();
        let h = self.h_prev;
        for s in STAGES + 1..STAGES_EXT {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.scratch[i] = self.y_old[i] + h * acc;
            }
            let (_, tail) = self.k.split_at_mut(s);
            self.sys.rhs(self.t_old + C[s] * h, &self.scratch, &mut tail[0])?;
        }
        let mut coeffs = vec![vec![0.0; n]; 7];
        for i in 0..n {
            let dy = self.y[i] - self.y_old[i];
            coeffs[0][i] = dy;
            coeffs[1][i] = h * self.f_old[i] - dy;
            coeffs[2][i] = 2.0 * dy - h * (self.f[i] + self.f_old[i]);
            for (r, drow) in D.iter().enumerate() {
                let mut acc = 0.0;
                for j in 0..STAGES_EXT {
                    acc += drow[j] * self.k[j][i];
                }
                coeffs[3 + r][i] = h * acc;
            }
        }
        Ok(DenseSegment { t_old: self.t_old, h, y_old: self.y_old.clone(), coeffs })
    }
}

pub(crate) struct DenseSegment {
    t_old: f64,
    h: f64,
    y_old: Vec<f64>,
    coeffs: Vec<Vec<f64>>,
}

impl DenseSegment {
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let x = (t - self.t_old) / self.h;
        let n = self.y_old.len();
        let mut y = vec![0.0; n];
        for (idx, f) in self.coeffs.iter().rev().enumerate() {
            for i in 0..n {
                y[i] += f[i];
                y[i] *= if idx % 2 == 0 { x } else { 1.0 - x };
            }
        }
        for i in 0..n {
            y[i] += self.y_old[i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Oscillator;

    impl OdeSystem for Oscillator {
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        }
    }

    #[test]
    fn harmonic_oscillator_to_tolerance() {
        let sys = Oscillator;
        let mut st = Dop853::new(&sys, 0.0, vec![1.0, 0.0], 20.0, 1e-12, vec![1e-14; 2]).unwrap();
        let mut checked = 0;
        while !st.finished() {
            assert_eq!(st.step().unwrap(), StepOutcome::Accepted);
            let seg = st.dense().unwrap();
            let tm = 0.5 * (st.t_old + st.t);
            let y = seg.eval(tm);
            assert!((y[0] - tm.cos()).abs() < 1e-10, "dense output at {tm}");
            checked += 1;
        }
        assert!(checked > 5);
        assert!((st.y[0] - 20f64.cos()).abs() < 1e-10);
        assert!((st.y[1] + 20f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn integrates_backwards() {
        let sys = Oscillator;
        let mut st = Dop853::new(&sys, 5.0, vec![5f64.cos(), -5f64.sin()], 0.0, 1e-12, vec![1e-14; 2]).unwrap();
        while !st.finished() {
            st.step().unwrap();
        }
        assert!((st.y[0] - 1.0).abs() < 1e-10);
        assert!(st.y[1].abs() < 1e-10);
    }
}
