use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_energy, solve_phi, DirectionSequence, PhiOptions, PhiSolve};
use crate::action::{action_supercritical, DiscretePath, EnergyLevel};
use crate::error::{Error, Result};
use crate::geometry::{min_mutual_distance, Configuration, Masses};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HorofunctionOptions {
    pub phi: PhiOptions,
    /// The calibration check splits the ray from `x_ref` at this fraction
    /// of its duration.
    pub calibration_fraction: f64,
}

impl Default for HorofunctionOptions {
    fn default() -> Self {
        HorofunctionOptions { phi: PhiOptions::default(), calibration_fraction: 0.25 }
    }
}

/// Values of `u_n(x) = phi_h(x, p_n) - phi_h(x_ref, p_n)` for one `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorofunctionSample {
    pub index: usize,
    pub eps: f64,
    pub lambda: f64,
    pub p: Configuration,
    pub phi_ref: Option<f64>,
    /// `phi_h(x, p_n)` per probe.
    pub phi_probes: Vec<f64>,
    /// `u_n(x)` per probe.
    pub u_values: Vec<f64>,
    /// Whether each value came from a polished true motion; the reference
    /// point comes last.
    pub polished: Vec<bool>,
    /// `|u_n(g(0)) - u_n(g(s)) - A_{L+h}(g|[0, s])| / A` along the ray `g`
    /// from `x_ref` to `p_n`.
    pub calib_residual: Option<f64>,
    pub calibration_action: Option<f64>,
    pub error: Option<String>,
}

impl HorofunctionSample {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// `(u_n(x) - u_n(y)) - phi_h(x, y)` for one ordered pair of points; index
/// `probes.len()` stands for `x_ref`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationEntry {
    pub index: usize,
    pub from: usize,
    pub to: usize,
    pub u_difference: f64,
    pub phi: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorofunctionReport {
    pub probes: Vec<Configuration>,
    pub x_ref: Configuration,
    pub samples: Vec<HorofunctionSample>,
    /// `(from, to, phi_h(from, to))` over ordered pairs of points.
    pub pair_phi: Vec<(usize, usize, f64)>,
    pub domination: Vec<DominationEntry>,
    pub max_domination_residual: f64,
    /// Per probe, `|u_{n+1}(x) - u_n(x)|` over consecutive successful samples.
    pub cauchy: Vec<Vec<f64>>,
    pub cauchy_decreasing: Vec<bool>,
    pub max_calibration_residual: Option<f64>,
}

fn calibration(solve: &PhiSolve, p: &Configuration, m: &Masses, h: f64, opts: &HorofunctionOptions) -> Result<(f64, f64)> {
    let f = opts.calibration_fraction;
    let (split, action) = match &solve.shot {
        Some(shot) => {
            let target = f * shot.tau;
            let j = (1..shot.nodes.len() - 1)
                .min_by(|&i, &k| (shot.nodes[i].t - target).abs().total_cmp(&(shot.nodes[k].t - target).abs()))
                .ok_or_else(|| Error::invalid("ray has no interior node for the calibration split"))?;
            (shot.nodes[j].x.clone(), shot.segment_actions[..j].iter().sum::<f64>())
        }
        None => {
            let path = &solve.discrete.path;
            let k = ((f * path.intervals() as f64).round() as usize).clamp(1, path.intervals() - 1);
            let head = DiscretePath::new(path.times()[..=k].to_vec(), path.nodes()[..=k].to_vec(), m.clone())?;
            (path.node(k).clone(), action_supercritical(&head, EnergyLevel::new(h)?)?)
        }
    };
    let rest = solve_phi(&split, p, m, h, &opts.phi)?;
    let residual = (solve.value - rest.value - action).abs() / action;
    Ok((residual, action))
}

fn sample(
    index: usize,
    seq: &DirectionSequence,
    lambda: f64,
    points: &[Configuration],
    opts: &HorofunctionOptions,
) -> HorofunctionSample {
    let (m, h) = (&seq.masses, seq.h);
    let p = seq.a[index].scaled(lambda);
    let mut out = HorofunctionSample {
        index,
        eps: seq.eps_schedule[index],
        lambda,
        p: p.clone(),
        phi_ref: None,
        phi_probes: Vec::new(),
        u_values: Vec::new(),
        polished: Vec::new(),
        calib_residual: None,
        calibration_action: None,
        error: None,
    };
    if min_mutual_distance(&p) <= 0.0 {
        out.error = Some(Error::Construction(format!("endpoint p_{index} is a collision")).to_string());
        return out;
    }
    let mut solves = Vec::with_capacity(points.len());
    for x in points {
        match solve_phi(x, &p, m, h, &opts.phi) {
            Ok(s) => solves.push(s),
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        }
    }
    let reference = solves.pop().expect("reference point");
    out.phi_ref = Some(reference.value);
    out.phi_probes = solves.iter().map(|s| s.value).collect();
    out.u_values = solves.iter().map(|s| s.value - reference.value).collect();
    out.polished = solves.iter().chain(std::iter::once(&reference)).map(PhiSolve::polished).collect();
    match calibration(&reference, &p, m, h, opts) {
        Ok((r, a)) => {
            out.calib_residual = Some(r);
            out.calibration_action = Some(a);
        }
        Err(e) => out.error = Some(format!("calibration: {e}")),
    }
    out
}

/// Horofunction differences along the endpoints `p_n = a_n * lambda_n`.
pub fn estimate_horofunction(
    probes: &[Configuration],
    x_ref: &Configuration,
    seq: &DirectionSequence,
    lambdas: &[f64],
    opts: &HorofunctionOptions,
) -> Result<HorofunctionReport> {
    let h = check_energy(seq.h)?;
    if lambdas.len() != seq.len() {
        return Err(Error::invalid(format!("{} lambdas for {} directions", lambdas.len(), seq.len())));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) || lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("lambda schedule must be positive and increasing"));
    }
    if !(opts.calibration_fraction > 0.0 && opts.calibration_fraction < 1.0) {
        return Err(Error::invalid("calibration fraction must lie in (0, 1)"));
    }
    let mut points: Vec<Configuration> = probes.to_vec();
    points.push(x_ref.clone());
    for x in &points {
        seq.b.check_shape(x)?;
        if min_mutual_distance(x) <= 0.0 {
            return Err(Error::invalid("probe points must be collisionless"));
        }
    }
    let m = &seq.masses;

    let samples: Vec<HorofunctionSample> =
        (0..seq.len()).into_par_iter().map(|n| sample(n, seq, lambdas[n], &points, opts)).collect();

    let pairs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|i| (0..points.len()).filter(move |&j| j != i).map(move |j| (i, j))).collect();
    let pair_phi: Vec<(usize, usize, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| Ok((i, j, solve_phi(&points[i], &points[j], m, h, &opts.phi)?.value)))
        .collect::<Result<_>>()?;

    let u_at = |s: &HorofunctionSample, i: usize| if i == probes.len() { 0.0 } else { s.u_values[i] };
    let mut domination = Vec::new();
    for s in samples.iter().filter(|s| s.u_values.len() == probes.len() && s.phi_ref.is_some()) {
        for &(i, j, phi) in &pair_phi {
            let u_difference = u_at(s, i) - u_at(s, j);
            domination.push(DominationEntry { index: s.index, from: i, to: j, u_difference, phi, residual: u_difference - phi });
        }
    }
    let max_domination_residual = domination.iter().map(|d| d.residual).fold(f64::NEG_INFINITY, f64::max);

    let complete: Vec<&HorofunctionSample> = samples.iter().filter(|s| s.u_values.len() == probes.len()).collect();
    let cauchy: Vec<Vec<f64>> = (0..probes.len())
        .map(|k| complete.windows(2).map(|w| (w[1].u_values[k] - w[0].u_values[k]).abs()).collect())
        .collect();
    let cauchy_decreasing = cauchy.iter().map(|c: &Vec<f64>| c.windows(2).all(|w| w[1] < w[0])).collect();
    let max_calibration_residual = samples.iter().filter_map(|s| s.calib_residual).reduce(f64::max);

    Ok(HorofunctionReport {
        probes: probes.to_vec(),
        x_ref: x_ref.clone(),
        samples,
        pair_phi,
        domination,
        max_domination_residual,
        cauchy,
        cauchy_decreasing,
        max_calibration_residual,
    })
}
