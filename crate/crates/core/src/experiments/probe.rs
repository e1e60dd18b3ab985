use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flagship::project_velocity;
use crate::asymptotics::{fit_final_configuration, Window};
use crate::error::{Error, Result};
use crate::flow::{integrate_with, IntegrateOptions, State, Termination};
use crate::geometry::{mass_norm, Configuration, Masses, TangentVector};

/// Initial velocities `v(s) = base + s * direction` from a fixed start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeFamily {
    pub base_velocity: TangentVector,
    pub direction: TangentVector,
    pub params: Vec<f64>,
    /// When set, each velocity loses its total momentum and is rescaled to
    /// this energy.
    pub energy: Option<f64>,
    pub horizon: f64,
    pub fit_window: Window,
    pub rtol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub param: f64,
    pub a: Option<Configuration>,
    pub distance_to_b: Option<f64>,
    pub fit_residual: Option<f64>,
    pub terminated_by: Option<Termination>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub rows: Vec<ProbeRow>,
    /// `|a(s_{k+1}) - a(s_k)|_m` over consecutive fitted rows.
    pub jumps: Vec<f64>,
    /// Each jump divided by its parameter step.
    pub jump_ratios: Vec<f64>,
    pub max_jump: Option<f64>,
    pub max_jump_ratio: Option<f64>,
    /// Every jump is at most ten parameter steps.
    pub bounded: bool,
}

impl ProbeReport {
    pub fn csv_header(n: usize, dim: usize) -> Vec<String> {
        let mut h = vec!["param".to_string()];
        for i in 0..n {
            for k in 0..dim {
                h.push(format!("a{i}_{k}"));
            }
        }
        h.extend(["distance_to_b", "fit_residual", "error"].map(String::from));
        h
    }

    pub fn write_csv<W: std::io::Write>(&self, n: usize, dim: usize, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::csv_header(n, dim))?;
        for r in &self.rows {
            let mut rec = vec![r.param.to_string()];
            match &r.a {
                Some(a) => rec.extend(a.as_slice().iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat_n(String::new(), n * dim)),
            }
            rec.push(r.distance_to_b.map(|d| d.to_string()).unwrap_or_default());
            rec.push(r.fit_residual.map(|d| d.to_string()).unwrap_or_default());
            rec.push(r.error.clone().unwrap_or_default());
            out.write_record(rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn probe_row(x0: &Configuration, m: &Masses, b: &Configuration, family: &ProbeFamily, s: f64) -> ProbeRow {
    let mut row = ProbeRow { param: s, a: None, distance_to_b: None, fit_residual: None, terminated_by: None, error: None };
    let run = || -> Result<_> {
        let mut v = family.base_velocity.clone();
        v.axpy(s, &family.direction);
        if let Some(h) = family.energy {
            v = project_velocity(x0, &v, m, h)?;
        }
        let opts = IntegrateOptions { rtol: family.rtol, record_steps: true, drift_tol: 1e-3, ..Default::default() };
        let tr = integrate_with(&State::new(x0.clone(), v, 0.0)?, m, family.horizon, &opts)?;
        let term = tr.terminated_by;
        Ok((term, fit_final_configuration(&tr, family.fit_window)))
    };
    match run() {
        Ok((term, fit)) => {
            row.terminated_by = Some(term);
            match fit {
                Ok(fit) => {
                    row.distance_to_b = mass_norm(&(&fit.a - b), m).ok();
                    row.fit_residual = Some(fit.fit_residual);
                    row.a = Some(fit.a);
                }
                Err(e) => row.error = Some(format!("stopped ({term:?}): {e}")),
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Fits the final configuration along a family of motions from `x0` and
/// reports how much it jumps between neighbouring parameters.
pub fn continuity_probe_c(x0: &Configuration, m: &Masses, b: &Configuration, family: &ProbeFamily) -> Result<ProbeReport> {
    if family.params.is_empty() {
        return Err(Error::invalid("empty probe family"));
    }
    x0.check_shape(b)?;
    x0.check_shape(&family.base_velocity)?;
    x0.check_shape(&family.direction)?;
    m.check_bodies(x0.n())?;
    if family.params.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("probe parameters must be increasing"));
    }
    if !(family.horizon >= family.fit_window.1) {
        return Err(Error::invalid("fit window ends after the horizon"));
    }
    let rows: Vec<ProbeRow> = family.params.par_iter().map(|&s| probe_row(x0, m, b, family, s)).collect();
    let fitted: Vec<(f64, &Configuration)> = rows.iter().filter_map(|r| r.a.as_ref().map(|a| (r.param, a))).collect();
    let mut jumps = Vec::new();
    let mut jump_ratios = Vec::new();
    for w in fitted.windows(2) {
        let j = mass_norm(&(w[1].1 - w[0].1), m)?;
        jumps.push(j);
        jump_ratios.push(j / (w[1].0 - w[0].0));
    }
    let max_jump = jumps.iter().copied().reduce(f64::max);
    let max_jump_ratio = jump_ratios.iter().copied().reduce(f64::max);
    let bounded = jump_ratios.iter().all(|r| *r <= 10.0);
    Ok(ProbeReport { rows, jumps, jump_ratios, max_jump, max_jump_ratio, bounded })
}
