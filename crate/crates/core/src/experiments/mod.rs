//! The limit construction end to end.
//!
//! A [`DirectionSequence`] of collisionless shapes `a_n` converges to a
//! collision shape `b`. For each `n` a free-time minimizer from `x0` towards
//! `a_n * lambda_n` stands in for the hyperbolic ray of direction `a_n`; the
//! initial velocities of the rays are extrapolated to a velocity `v` and the
//! motion from `(x0, v)` is integrated and classified. Horofunction samples
//! `phi_h(x, p_n) - phi_h(x_ref, p_n)` are computed along the same endpoints,
//! and the continuity probe tabulates final configurations along a family of
//! initial velocities.
//!
//! Discrete solutions are polished into true motions by multiple shooting
//! whenever that converges; the discrete values are kept as a fallback and
//! the records say which one was used.

mod config;
mod direction;
mod flagship;
mod horofunction;
mod probe;
mod ray;

use serde::{Deserialize, Serialize};

use crate::action::EnergyLevel;
use crate::error::{Error, Result};
use crate::flow::{shoot_multiple, shooting_guess, MultiShot, ShootOptions};
use crate::geometry::{barycenter, Configuration, Masses};
use crate::minimizer::{minimize_free_time, FreeTimeResult, MinimizeOptions};

pub use config::{preset, Config, DirectionSpec, ExperimentSpec, FlowSpec, HorofunctionSpec, MinimizeSpec, ProbeSpec, ProbeSet, SystemSpec};
pub use direction::{build_direction_sequence, DirectionSequence, Perturbation};
pub use flagship::{partially_hyperbolic_experiment, ExperimentOptions, ExperimentOutput, ExperimentReport, Extrapolation, RayRecord};
pub use horofunction::{estimate_horofunction, DominationEntry, HorofunctionOptions, HorofunctionReport, HorofunctionSample};
pub use probe::{continuity_probe_c, ProbeFamily, ProbeReport, ProbeRow};
pub use ray::{build_hyperbolic_ray, lambda_doubling, DoublingStudy, HyperbolicRay, RayOptions};

/// `lambda_n = c / eps_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaRule {
    pub c: f64,
}

impl LambdaRule {
    /// `c = 100 * scale(x0)`, the scale being the largest distance of a body
    /// from the barycenter.
    pub fn for_start(x0: &Configuration, m: &Masses) -> Result<Self> {
        Ok(LambdaRule { c: 100.0 * configuration_scale(x0, m)? })
    }

    pub fn lambda(&self, eps: f64) -> f64 {
        self.c / eps
    }
}

/// Largest distance of a body from the barycenter.
pub fn configuration_scale(x: &Configuration, m: &Masses) -> Result<f64> {
    let c = barycenter(x, m)?;
    Ok((0..x.n())
        .map(|i| x.body(i).iter().zip(&c).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
        .fold(0.0, f64::max))
}

/// Solver settings for `phi_h` evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhiOptions {
    pub minimize: MinimizeOptions,
    pub shoot: ShootOptions,
    /// Polish discrete minimizers into true motions by multiple shooting.
    pub polish: bool,
    pub segments: usize,
    /// Largest accepted relative gap between the polished and discrete
    /// values; a larger gap means the shot left the minimizer's branch.
    pub polish_gap: f64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        PhiOptions {
            minimize: MinimizeOptions::default(),
            shoot: ShootOptions::default(),
            polish: true,
            segments: 30,
            polish_gap: 1e-3,
        }
    }
}

/// A `phi_h(x, y)` evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiSolve {
    pub value: f64,
    pub tau: f64,
    pub discrete: FreeTimeResult,
    pub shot: Option<MultiShot>,
    /// Why the polish was skipped or rejected.
    pub polish_note: Option<String>,
}

impl PhiSolve {
    pub fn polished(&self) -> bool {
        self.shot.is_some()
    }
}

pub(crate) fn solve_phi(x: &Configuration, y: &Configuration, m: &Masses, h: f64, opts: &PhiOptions) -> Result<PhiSolve> {
    let discrete = minimize_free_time(x, y, m, EnergyLevel::new(h)?, &opts.minimize)?;
    if !opts.polish || discrete.degenerate {
        return Ok(PhiSolve { value: discrete.value, tau: discrete.tau_star, discrete, shot: None, polish_note: None });
    }
    let attempt = shooting_guess(&discrete.path, opts.segments)
        .and_then(|g| shoot_multiple(x, y, m, h, &g, &opts.shoot));
    let (shot, note) = match attempt {
        Ok(s) if (s.value - discrete.value).abs() <= opts.polish_gap * discrete.value => (Some(s), None),
        Ok(s) => (None, Some(format!("polished value {} too far from discrete value {}", s.value, discrete.value))),
        Err(e) => (None, Some(e.to_string())),
    };
    let (value, tau) = shot.as_ref().map_or((discrete.value, discrete.tau_star), |s| (s.value, s.tau));
    Ok(PhiSolve { value, tau, discrete, shot, polish_note: note })
}

pub(crate) fn check_energy(h: f64) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("energy level must be positive, got {h}")));
    }
    Ok(h)
}
