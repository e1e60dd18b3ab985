use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_energy, configuration_scale, solve_phi, PhiOptions, PhiSolve};
use crate::error::{Error, Result};
use crate::geometry::{mass_inner, mass_norm, min_mutual_distance, potential, Configuration, Masses, TangentVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RayOptions {
    pub phi: PhiOptions,
    /// The tail direction is fitted over this final fraction of the path.
    pub tail_fraction: f64,
    /// Smallest accepted `lambda / scale(x0)`.
    pub min_lambda_factor: f64,
}

impl Default for RayOptions {
    fn default() -> Self {
        RayOptions { phi: PhiOptions::default(), tail_fraction: 0.5, min_lambda_factor: 50.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocitySource {
    /// Initial velocity of the polished true motion.
    Shot,
    /// One-sided difference on the discrete minimizer.
    Discrete,
}

/// Free-time minimizer from `x0` to `a * lambda` with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicRay {
    pub lambda: f64,
    pub a: Configuration,
    pub endpoint: Configuration,
    pub solve: PhiSolve,
    pub v: TangentVector,
    pub velocity_source: VelocitySource,
    /// Least-squares velocity over the tail of the path.
    pub tail_direction: TangentVector,
    /// Mass-metric angle between the tail direction and `a`, in radians.
    pub tail_angle: f64,
    /// `|v|_m^2 / 2 - U(x0) - h`.
    pub sphere_residual: f64,
}

pub(crate) fn angle(x: &Configuration, y: &Configuration, m: &Masses) -> Result<f64> {
    let c = mass_inner(x, y, m)? / (mass_norm(x, m)? * mass_norm(y, m)?);
    Ok(c.clamp(-1.0, 1.0).acos())
}

fn tail_velocity(solve: &PhiSolve, fraction: f64) -> Result<TangentVector> {
    let p = &solve.discrete.path;
    let t0 = p.times()[0] + (1.0 - fraction) * p.duration();
    let idx: Vec<usize> = (0..p.times().len()).filter(|&k| p.times()[k] >= t0).collect();
    if idx.len() < 2 {
        return Err(Error::invalid("tail window holds fewer than two nodes"));
    }
    let tm = idx.iter().map(|&k| p.times()[k]).sum::<f64>() / idx.len() as f64;
    let stt: f64 = idx.iter().map(|&k| (p.times()[k] - tm).powi(2)).sum();
    let nd = p.n() * p.dim();
    let mut slope = vec![0.0; nd];
    for &k in &idx {
        let w = (p.times()[k] - tm) / stt;
        slope.iter_mut().zip(p.node(k).as_slice()).for_each(|(s, x)| *s += w * x);
    }
    Configuration::new(p.n(), p.dim(), slope)
}

/// Builds the finite stand-in for the hyperbolic ray from `x0` with
/// asymptotic velocity `a`.
pub fn build_hyperbolic_ray(
    x0: &Configuration,
    a: &Configuration,
    m: &Masses,
    h: f64,
    lambda: f64,
    opts: &RayOptions,
) -> Result<HyperbolicRay> {
    let h = check_energy(h)?;
    x0.check_shape(a)?;
    m.check_bodies(x0.n())?;
    if x0.n() < 2 {
        return Err(Error::invalid("a ray needs at least two bodies"));
    }
    if min_mutual_distance(x0) <= 0.0 || min_mutual_distance(a) <= 0.0 {
        return Err(Error::invalid("x0 and a must be collisionless"));
    }
    let ea = 0.5 * mass_inner(a, a, m)?;
    if (ea - h).abs() > 1e-9 * h.max(1.0) {
        return Err(Error::invalid(format!("|a|^2/2 = {ea} differs from h = {h}")));
    }
    let scale = configuration_scale(x0, m)?;
    if !(lambda >= opts.min_lambda_factor * scale) {
        return Err(Error::invalid(format!(
            "lambda = {lambda} is below {} times the scale {scale} of x0",
            opts.min_lambda_factor
        )));
    }
    let endpoint = a.scaled(lambda);
    let solve = solve_phi(x0, &endpoint, m, h, &opts.phi)?;
    let (v, velocity_source) = match &solve.shot {
        Some(s) => (s.initial_velocity().clone(), VelocitySource::Shot),
        None => (crate::flow::discrete_initial_velocity(&solve.discrete.path), VelocitySource::Discrete),
    };
    let tail_direction = tail_velocity(&solve, opts.tail_fraction)?;
    let tail_angle = angle(&tail_direction, a, m)?;
    let sphere_residual = 0.5 * mass_inner(&v, &v, m)? - potential(x0, m)? - h;
    Ok(HyperbolicRay {
        lambda,
        a: a.clone(),
        endpoint,
        solve,
        v,
        velocity_source,
        tail_direction,
        tail_angle,
        sphere_residual,
    })
}

/// Initial velocities of rays over a schedule of `lambda` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublingStudy {
    pub lambdas: Vec<f64>,
    pub velocities: Vec<Option<TangentVector>>,
    pub errors: Vec<Option<String>>,
    /// `|v_{k+1} - v_k|_m` for consecutive successful builds.
    pub differences: Vec<f64>,
    /// Every difference is smaller than the one before.
    pub contracting: bool,
}

pub fn lambda_doubling(
    x0: &Configuration,
    a: &Configuration,
    m: &Masses,
    h: f64,
    lambdas: &[f64],
    opts: &RayOptions,
) -> Result<DoublingStudy> {
    if lambdas.is_empty() {
        return Err(Error::invalid("empty lambda schedule"));
    }
    let built: Vec<Result<HyperbolicRay>> =
        lambdas.par_iter().map(|&l| build_hyperbolic_ray(x0, a, m, h, l, opts)).collect();
    let mut velocities = Vec::with_capacity(lambdas.len());
    let mut errors = Vec::with_capacity(lambdas.len());
    for r in built {
        match r {
            Ok(ray) => {
                velocities.push(Some(ray.v));
                errors.push(None);
            }
            Err(e @ Error::InvalidArgument(_)) => return Err(e),
            Err(e) => {
                velocities.push(None);
                errors.push(Some(e.to_string()));
            }
        }
    }
    let ok: Vec<&TangentVector> = velocities.iter().flatten().collect();
    let differences = cauchy_differences(&ok, m);
    let contracting = differences.windows(2).all(|w| w[1] < w[0]);
    Ok(DoublingStudy { lambdas: lambdas.to_vec(), velocities, errors, differences, contracting })
}

pub(crate) fn cauchy_differences(v: &[&TangentVector], m: &Masses) -> Vec<f64> {
    v.windows(2).map(|w| mass_norm(&(w[1] - w[0]), m).unwrap_or(f64::NAN)).collect()
}
