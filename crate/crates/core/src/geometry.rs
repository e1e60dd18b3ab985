//! Configuration space `E^N` with the mass inner product, the Newtonian
//! potential and its gradient, and collision diagnostics.
//!
//! Configurations are stored as flattened row-major `N x d` matrices. The
//! gravitational constant is 1 and the potential is
//! `U(x) = sum_{i<j} m_i m_j / |x_i - x_j|`, so Newton's equations read
//! `x'' = grad U(x)` when the gradient is taken in the mass metric.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairs closer than this fraction of the configuration diameter count as
/// collisions.
pub const COLLISION_REL_THRESHOLD: f64 = 1e-12;

/// Positive body masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Masses(Vec<f64>);

impl Masses {
    pub fn new(m: Vec<f64>) -> Result<Self> {
        if m.is_empty() {
            return Err(Error::invalid("at least one mass is required"));
        }
        if let Some((i, mi)) = m.iter().enumerate().find(|(_, mi)| !(**mi > 0.0 && mi.is_finite())) {
            return Err(Error::invalid(format!("mass {i} must be positive and finite, got {mi}")));
        }
        Ok(Masses(m))
    }

    /// `n` unit masses.
    pub fn unit(n: usize) -> Self {
        Masses(vec![1.0; n.max(1)])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub(crate) fn check_bodies(&self, n: usize) -> Result<()> {
        if n != self.0.len() {
            return Err(Error::invalid(format!(
                "configuration has {n} bodies but {} masses were given",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Masses {
    type Error = Error;

    fn try_from(m: Vec<f64>) -> Result<Self> {
        Masses::new(m)
    }
}

impl From<Masses> for Vec<f64> {
    fn from(m: Masses) -> Self {
        m.0
    }
}

/// Positions of `N` bodies in `R^d`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

/// Velocities share the configuration layout.
pub type TangentVector = Configuration;

impl Configuration {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || dim == 0 {
            return Err(Error::invalid("configuration needs n >= 1 bodies and d >= 1"));
        }
        if data.len() != n * dim {
            return Err(Error::invalid(format!(
                "expected {} coordinates for {n} bodies in dimension {dim}, got {}",
                n * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("configuration entries must be finite"));
        }
        Ok(Configuration { n, dim, data })
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Configuration { n, dim, data: vec![0.0; n * dim] }
    }

    /// Builds a configuration from one row per body.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != dim) {
            return Err(Error::invalid("all bodies must have the same dimension"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Configuration::new(rows.len(), dim, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn body(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn body_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn same_shape(&self, other: &Configuration) -> bool {
        self.n == other.n && self.dim == other.dim
    }

    pub(crate) fn check_shape(&self, other: &Configuration) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::invalid(format!(
                "shape mismatch: {}x{} vs {}x{}",
                self.n, self.dim, other.n, other.dim
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Configuration {
        Configuration { n: self.n, dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Configuration) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Adds `c` to every body.
    pub fn translated(&self, c: &[f64]) -> Configuration {
        let mut out = self.clone();
        for row in out.data.chunks_mut(self.dim) {
            for (a, b) in row.iter_mut().zip(c) {
                *a += b;
            }
        }
        out
    }
}

impl Add for &Configuration {
    type Output = Configuration;

    fn add(self, rhs: &Configuration) -> Configuration {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &Configuration {
    type Output = Configuration;

    fn sub(self, rhs: &Configuration) -> Configuration {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<f64> for &Configuration {
    type Output = Configuration;

    fn mul(self, rhs: f64) -> Configuration {
        self.scaled(rhs)
    }
}

/// `<x, y> = sum_i m_i <x_i, y_i>`.
pub fn mass_inner(x: &Configuration, y: &Configuration, m: &Masses) -> Result<f64> {
    x.check_shape(y)?;
    m.check_bodies(x.n)?;
    Ok(mass_inner_slice(x.as_slice(), y.as_slice(), x.dim, m.as_slice()))
}

pub fn mass_norm(x: &Configuration, m: &Masses) -> Result<f64> {
    mass_inner(x, x, m).map(f64::sqrt)
}

pub(crate) fn mass_inner_slice(x: &[f64], y: &[f64], dim: usize, m: &[f64]) -> f64 {
    x.chunks(dim)
        .zip(y.chunks(dim))
        .zip(m)
        .map(|((xi, yi), mi)| mi * xi.iter().zip(yi).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Newtonian potential `U(x) = sum_{i<j} m_i m_j / r_ij` (positive).
pub fn potential(x: &Configuration, m: &Masses) -> Result<f64> {
    m.check_bodies(x.n)?;
    potential_slice(x.as_slice(), x.dim, m.as_slice())
}

/// Gradient of `U` with respect to the mass inner product:
/// component `i` is `sum_{j != i} m_j (x_j - x_i) / r_ij^3`.
pub fn potential_gradient(x: &Configuration, m: &Masses) -> Result<TangentVector> {
    m.check_bodies(x.n)?;
    let mut g = Configuration::zeros(x.n, x.dim);
    potential_and_force(x.as_slice(), x.dim, m.as_slice(), g.as_mut_slice())?;
    for (row, mi) in g.data.chunks_mut(x.dim).zip(m.as_slice()) {
        for v in row {
            *v /= mi;
        }
    }
    Ok(g)
}

/// Unnormalized center of mass `G(x) = sum_i m_i x_i`.
pub fn center_of_mass(x: &Configuration, m: &Masses) -> Result<Vec<f64>> {
    m.check_bodies(x.n)?;
    Ok(center_of_mass_slice(x.as_slice(), x.dim, m.as_slice()))
}

pub(crate) fn center_of_mass_slice(x: &[f64], dim: usize, m: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; dim];
    for (xi, mi) in x.chunks(dim).zip(m) {
        for (gk, xk) in g.iter_mut().zip(xi) {
            *gk += mi * xk;
        }
    }
    g
}

/// `G(x) / sum m_i`, the usual barycenter.
pub fn barycenter(x: &Configuration, m: &Masses) -> Result<Vec<f64>> {
    let total = m.total();
    Ok(center_of_mass(x, m)?.into_iter().map(|g| g / total).collect())
}

/// Translates `x` so that `G(x) = 0`.
pub fn recenter(x: &Configuration, m: &Masses) -> Result<Configuration> {
    let c = barycenter(x, m)?;
    let neg: Vec<f64> = c.iter().map(|v| -v).collect();
    Ok(x.translated(&neg))
}

/// Smallest mutual distance, `+inf` for a single body.
pub fn min_mutual_distance(x: &Configuration) -> f64 {
    pair_extremes(x.as_slice(), x.dim).0 .0
}

/// Index pair realizing [`min_mutual_distance`], if there is a pair at all.
pub fn closest_pair(x: &Configuration) -> Option<(usize, usize)> {
    let ((_, pair), _) = pair_extremes(x.as_slice(), x.dim);
    pair
}

/// Largest mutual distance, 0 for a single body.
pub fn diameter(x: &Configuration) -> f64 {
    pair_extremes(x.as_slice(), x.dim).1
}

/// `L(x, v) = |v|_m^2 / 2 + U(x)`.
pub fn lagrangian(x: &Configuration, v: &TangentVector, m: &Masses) -> Result<f64> {
    x.check_shape(v)?;
    let kinetic = 0.5 * mass_inner(v, v, m)?;
    Ok(kinetic + potential(x, m)?)
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn pair_extremes(x: &[f64], dim: usize) -> ((f64, Option<(usize, usize)>), f64) {
    let n = x.len() / dim;
    let mut min = f64::INFINITY;
    let mut arg = None;
    let mut max = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let r2 = dist2(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
            if r2 < min {
                min = r2;
                arg = Some((i, j));
            }
            max = max.max(r2);
        }
    }
    ((min.sqrt(), arg), max.sqrt())
}

pub(crate) fn min_distance_slice(x: &[f64], dim: usize) -> f64 {
    pair_extremes(x, dim).0 .0
}

fn collision_check(x: &[f64], dim: usize) -> Result<()> {
    let ((min, pair), diam) = pair_extremes(x, dim);
    if let Some((i, j)) = pair {
        if !(min > COLLISION_REL_THRESHOLD * diam) {
            return Err(Error::Collision { i, j, node: None });
        }
    }
    Ok(())
}

pub(crate) fn potential_slice(x: &[f64], dim: usize, m: &[f64]) -> Result<f64> {
    collision_check(x, dim)?;
    let n = m.len();
    let mut u = 0.0;
    for i in 0..n {
        let xi = &x[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            u += m[i] * m[j] / dist2(xi, &x[j * dim..(j + 1) * dim]).sqrt();
        }
    }
    Ok(u)
}

/// Returns `U(x)` and writes the Euclidean partial derivatives
/// `dU/dx_i = sum_j m_i m_j (x_j - x_i) / r^3` into `force`.
pub(crate) fn potential_and_force(x: &[f64], dim: usize, m: &[f64], force: &mut [f64]) -> Result<f64> {
    collision_check(x, dim)?;
    force.fill(0.0);
    let n = m.len();
    let mut u = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let r2 = dist2(&x[i * dim..(i + 1) * dim], &x[j * dim..(j + 1) * dim]);
            let r = r2.sqrt();
            let mm = m[i] * m[j];
            u += mm / r;
            let c = mm / (r2 * r);
            for k in 0..dim {
                let d = x[j * dim + k] - x[i * dim + k];
                force[i * dim + k] += c * d;
                force[j * dim + k] -= c * d;
            }
        }
    }
    Ok(u)
}
