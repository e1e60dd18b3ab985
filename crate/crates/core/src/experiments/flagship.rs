use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ray::{angle, cauchy_differences};
use super::{build_hyperbolic_ray, lambda_doubling, DirectionSequence, DoublingStudy, HyperbolicRay, LambdaRule, RayOptions};
use crate::asymptotics::{classify_motion, ClassifyOptions, MotionReport};
use crate::error::{Error, Result};
use crate::flow::{energy, integrate_with, IntegrateOptions, State, Termination, Trajectory};
use crate::geometry::{center_of_mass, mass_inner, mass_norm, min_mutual_distance, potential, Configuration, Masses, TangentVector};

/// How the limit velocity is read off the sequence `v_n`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extrapolation {
    #[default]
    Last,
    /// Linear extrapolation in `eps` to `eps = 0` from the last two terms.
    Richardson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    pub ray: RayOptions,
    pub extrapolation: Extrapolation,
    pub rtol: f64,
    /// Spacing of the recorded samples of the limit motion.
    pub sample_step: f64,
    pub classify: ClassifyOptions,
    pub sphere_tol: f64,
    /// Tolerance on the energy and center-of-mass checks of the limit
    /// motion.
    pub invariant_tol: f64,
    /// Tolerance on `|G(b')|`.
    pub b_prime_tol: f64,
    /// Rebuild the last ray at half and twice its `lambda`.
    pub doubling: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            ray: RayOptions::default(),
            extrapolation: Extrapolation::Last,
            rtol: 1e-12,
            sample_step: 0.5,
            classify: ClassifyOptions::default(),
            sphere_tol: 1e-3,
            invariant_tol: 1e-6,
            b_prime_tol: 1e-3,
            doubling: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayRecord {
    pub index: usize,
    pub eps: f64,
    pub lambda: f64,
    pub ray: Option<HyperbolicRay>,
    pub error: Option<String>,
}

impl RayRecord {
    pub fn survived(&self) -> bool {
        self.ray.is_some() && self.error.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentChecks {
    pub sphere: bool,
    pub cauchy_decreasing: bool,
    pub energy: bool,
    pub center_of_mass: bool,
    pub b_prime_center: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub h: f64,
    pub x0: Configuration,
    pub b: Configuration,
    pub lambda_rule: LambdaRule,
    pub rays: Vec<RayRecord>,
    pub surviving: Vec<usize>,
    /// `|v_{n+1} - v_n|_m` over surviving indices.
    pub cauchy: Vec<f64>,
    pub extrapolation: Extrapolation,
    pub v_extrapolated: TangentVector,
    /// The extrapolated velocity with zero total momentum on the energy
    /// sphere at `x0`.
    pub v: TangentVector,
    pub projection_shift: f64,
    pub doubling: Option<DoublingStudy>,
    pub horizon: f64,
    pub terminated_by: Termination,
    pub omega_plus: Option<f64>,
    /// Largest `|E(t) - h|` over the samples.
    pub energy_error: f64,
    /// Largest `|G(zeta(t)) - G(x0)|` over the samples.
    pub center_drift: f64,
    pub motion: Option<MotionReport>,
    pub b_prime: Option<Configuration>,
    /// `|G(b')|`.
    pub b_prime_center: Option<f64>,
    pub b_prime_energy: Option<f64>,
    /// Mass-metric angle between `b'` and `b`.
    pub b_prime_angle: Option<f64>,
    pub checks: ExperimentChecks,
    pub notes: Vec<String>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub trajectory: Trajectory,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Builds the rays of `seq`, extrapolates their initial velocities and
/// integrates and classifies the limit motion from `x0`.
pub fn partially_hyperbolic_experiment(
    x0: &Configuration,
    seq: &DirectionSequence,
    rule: &LambdaRule,
    horizon: f64,
    opts: &ExperimentOptions,
) -> Result<ExperimentOutput> {
    let m = &seq.masses;
    let h = seq.h;
    seq.b.check_shape(x0)?;
    if x0.dim() < 2 {
        return Err(Error::invalid("the experiment needs dimension at least 2"));
    }
    if min_mutual_distance(x0) <= 0.0 {
        return Err(Error::invalid("x0 must be collisionless"));
    }
    if !(horizon > 0.0 && rule.c > 0.0) {
        return Err(Error::invalid("horizon and lambda rule constant must be positive"));
    }
    if seq.len() < 3 {
        return Err(Error::Experiment(format!("{} directions given, at least 3 are needed", seq.len())));
    }

    let built: Vec<Result<HyperbolicRay>> = (0..seq.len())
        .into_par_iter()
        .map(|n| build_hyperbolic_ray(x0, &seq.a[n], m, h, rule.lambda(seq.eps_schedule[n]), &opts.ray))
        .collect();
    let mut rays = Vec::with_capacity(seq.len());
    for (n, r) in built.into_iter().enumerate() {
        let (eps, lambda) = (seq.eps_schedule[n], rule.lambda(seq.eps_schedule[n]));
        let record = match r {
            Ok(ray) if ray.sphere_residual.abs() > opts.sphere_tol => {
                let msg = format!("sphere residual {:e} exceeds {:e}", ray.sphere_residual, opts.sphere_tol);
                RayRecord { index: n, eps, lambda, ray: Some(ray), error: Some(msg) }
            }
            Ok(ray) => RayRecord { index: n, eps, lambda, ray: Some(ray), error: None },
            Err(e) => RayRecord { index: n, eps, lambda, ray: None, error: Some(e.to_string()) },
        };
        rays.push(record);
    }
    let surviving: Vec<usize> = rays.iter().filter(|r| r.survived()).map(|r| r.index).collect();
    if surviving.len() < 3 {
        let reasons: Vec<String> = rays.iter().filter_map(|r| r.error.as_ref().map(|e| format!("n = {}: {e}", r.index))).collect();
        return Err(Error::Experiment(format!(
            "only {} of {} rays survived ({})",
            surviving.len(),
            seq.len(),
            reasons.join("; ")
        )));
    }
    let vs: Vec<&TangentVector> = surviving.iter().map(|&n| &rays[n].ray.as_ref().expect("survivor").v).collect();
    let cauchy = cauchy_differences(&vs, m);
    let cauchy_decreasing = cauchy.windows(2).all(|w| w[1] < w[0]);

    let last = *surviving.last().expect("survivors");
    let v_last = vs[vs.len() - 1];
    let v_extrapolated = match opts.extrapolation {
        Extrapolation::Last => v_last.clone(),
        Extrapolation::Richardson => {
            let prev = surviving[surviving.len() - 2];
            let (e1, e0) = (seq.eps_schedule[last], seq.eps_schedule[prev]);
            let mut v = v_last.clone();
            v.axpy(e1 / (e0 - e1), &(v_last - vs[vs.len() - 2]));
            v
        }
    };
    let v = project_velocity(x0, &v_extrapolated, m, h)?;
    let projection_shift = mass_norm(&(&v - &v_extrapolated), m)?;

    let doubling = if opts.doubling {
        let l = rays[last].lambda;
        Some(lambda_doubling(x0, &seq.a[last], m, h, &[0.5 * l, l, 2.0 * l], &opts.ray)?)
    } else {
        None
    };

    let steps = (horizon / opts.sample_step).ceil() as usize;
    let int_opts = IntegrateOptions {
        rtol: opts.rtol,
        drift_tol: 1e-3,
        record_steps: false,
        sample_times: (1..=steps).map(|k| (k as f64 * opts.sample_step).min(horizon)).collect(),
        ..Default::default()
    };
    let trajectory = integrate_with(&State::new(x0.clone(), v.clone(), 0.0)?, m, horizon, &int_opts)?;
    let g0 = center_of_mass(x0, m)?;
    let mut energy_error = 0.0f64;
    let mut center_drift = 0.0f64;
    for s in trajectory.samples() {
        energy_error = energy_error.max((energy(s, m)? - h).abs());
        let g = center_of_mass(&s.x, m)?;
        center_drift = center_drift.max(norm(&g.iter().zip(&g0).map(|(a, b)| a - b).collect::<Vec<_>>()));
    }

    let mut notes = Vec::new();
    for r in &rays {
        if let Some(ray) = &r.ray {
            if let Some(note) = &ray.solve.polish_note {
                notes.push(format!("ray {}: discrete velocity used ({note})", r.index));
            }
        }
    }
    if trajectory.terminated_by != Termination::Horizon {
        notes.push(format!("limit motion stopped early ({:?}) at t = {:?}", trajectory.terminated_by, trajectory.omega_plus));
    }
    let motion = match classify_motion(&trajectory, &opts.classify) {
        Ok(r) => Some(r),
        Err(e) => {
            notes.push(format!("classification skipped: {e}"));
            None
        }
    };
    let b_prime = motion.as_ref().map(|r| r.a.clone());
    let b_prime_center = b_prime.as_ref().map(|b| center_of_mass(b, m).map(|g| norm(&g))).transpose()?;
    let b_prime_energy = b_prime.as_ref().map(|b| mass_inner(b, b, m).map(|e| 0.5 * e)).transpose()?;
    let b_prime_angle = b_prime.as_ref().map(|b| angle(b, &seq.b, m)).transpose()?;

    let checks = ExperimentChecks {
        sphere: surviving.iter().all(|&n| rays[n].ray.as_ref().is_some_and(|r| r.sphere_residual.abs() <= opts.sphere_tol)),
        cauchy_decreasing,
        energy: energy_error <= opts.invariant_tol,
        center_of_mass: center_drift <= opts.invariant_tol,
        b_prime_center: b_prime_center.is_some_and(|g| g <= opts.b_prime_tol),
    };
    let report = ExperimentReport {
        h,
        x0: x0.clone(),
        b: seq.b.clone(),
        lambda_rule: *rule,
        rays,
        surviving,
        cauchy,
        extrapolation: opts.extrapolation,
        v_extrapolated,
        v,
        projection_shift,
        doubling,
        horizon,
        terminated_by: trajectory.terminated_by,
        omega_plus: trajectory.omega_plus,
        energy_error,
        center_drift,
        motion,
        b_prime,
        b_prime_center,
        b_prime_energy,
        b_prime_angle,
        checks,
        notes,
    };
    Ok(ExperimentOutput { report, trajectory })
}

/// Removes the total momentum and rescales onto `|v|_m^2 / 2 = U(x0) + h`.
pub(crate) fn project_velocity(x0: &Configuration, v: &TangentVector, m: &Masses, h: f64) -> Result<TangentVector> {
    let (n, dim) = (v.n(), v.dim());
    let total = m.total();
    let mut out = v.clone();
    for k in 0..dim {
        let p: f64 = (0..n).map(|i| m.as_slice()[i] * v.body(i)[k]).sum::<f64>() / total;
        for i in 0..n {
            out.body_mut(i)[k] -= p;
        }
    }
    let kinetic = 0.5 * mass_inner(&out, &out, m)?;
    let target = potential(x0, m)? + h;
    if !(kinetic > 0.0) {
        return Err(Error::Experiment("velocity has no motion relative to the barycenter".into()));
    }
    Ok(out.scaled((target / kinetic).sqrt()))
}
