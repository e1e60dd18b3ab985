use serde::{Deserialize, Serialize};

use super::check_energy;
use crate::error::{Error, Result};
use crate::geometry::{diameter, mass_norm, min_mutual_distance, recenter, Configuration, Masses};

/// Displacement of one body per unit of `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub body: usize,
    pub direction: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSequence {
    /// The limit shape, recentered and scaled to energy `h`.
    pub b: Configuration,
    pub masses: Masses,
    pub h: f64,
    pub eps_schedule: Vec<f64>,
    pub perturbations: Vec<Perturbation>,
    pub a: Vec<Configuration>,
}

impl DirectionSequence {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// Mass-metric distances `|a_n - b|_m`.
    pub fn distances_to_limit(&self) -> Vec<f64> {
        self.a.iter().map(|a| mass_norm(&(a - &self.b), &self.masses).unwrap_or(f64::NAN)).collect()
    }
}

fn normalize(x: &Configuration, m: &Masses, h: f64) -> Result<Configuration> {
    let c = recenter(x, m)?;
    let norm = mass_norm(&c, m)?;
    if !(norm > 0.0) {
        return Err(Error::Construction("shape is a total collision after recentering".into()));
    }
    Ok(c.scaled((2.0 * h).sqrt() / norm))
}

/// `a_n = normalize(recenter(b + eps_n * sum of perturbations))` with
/// `|a_n|_m^2 / 2 = h` and `G(a_n) = 0`.
pub fn build_direction_sequence(
    b: &Configuration,
    m: &Masses,
    h: f64,
    eps_schedule: &[f64],
    perturbations: &[Perturbation],
) -> Result<DirectionSequence> {
    let h = check_energy(h)?;
    m.check_bodies(b.n())?;
    if eps_schedule.is_empty() {
        return Err(Error::invalid("empty eps schedule"));
    }
    if eps_schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::invalid("eps values must be positive"));
    }
    if eps_schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::invalid("eps schedule must be strictly decreasing"));
    }
    for p in perturbations {
        if p.body >= b.n() || p.direction.len() != b.dim() {
            return Err(Error::invalid(format!("perturbation of body {} does not fit the configuration", p.body)));
        }
    }
    let b = normalize(b, m, h).map_err(|_| Error::invalid("b is zero after recentering"))?;
    let mut a = Vec::with_capacity(eps_schedule.len());
    for &eps in eps_schedule {
        let mut x = b.clone();
        for p in perturbations {
            x.body_mut(p.body).iter_mut().zip(&p.direction).for_each(|(c, d)| *c += eps * d);
        }
        let an = normalize(&x, m, h)?;
        if min_mutual_distance(&an) <= 1e-12 * diameter(&an) {
            return Err(Error::Construction(format!("perturbation at eps = {eps} leaves a collision")));
        }
        a.push(an);
    }
    Ok(DirectionSequence {
        b,
        masses: m.clone(),
        h,
        eps_schedule: eps_schedule.to_vec(),
        perturbations: perturbations.to_vec(),
        a,
    })
}
