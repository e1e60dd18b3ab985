//! Final configurations and cluster structure of expanding motions.
//!
//! For a motion `x(t) = a t + o(t)` the limit shape `a` is estimated by a
//! least-squares fit over a late time window. Bodies whose components of
//! `a` coincide form clusters; inside a cluster mutual distances grow
//! sublinearly (like `t^{2/3}` for a parabolic pair), across clusters
//! linearly. Labels are statements about the finite window only.

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::geometry::{diameter, mass_inner_slice, Configuration};

/// A time window `[start, end]`.
pub type Window = (f64, f64);

/// Regression model for the positions over the fit window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitModel {
    /// `x(t) = a t + c`.
    Affine,
    /// `x(t) = a t + c + d ln t`, which also absorbs the logarithmic drift of
    /// hyperbolic escapes.
    #[default]
    AffineLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticConfiguration {
    pub a: Configuration,
    pub fit_window: Window,
    /// Largest mass-metric miss of the fit over the window, divided by
    /// `t sqrt(M)`.
    pub fit_residual: f64,
    /// `|a|_m^2 / 2`.
    pub energy_of_a: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    /// Zero-based body indices; each block sorted, blocks ordered by their
    /// smallest member.
    pub blocks: Vec<Vec<usize>>,
    /// Smallest distance between components of `a` in different blocks over
    /// the larger of the largest intra-block distance and the linkage
    /// threshold. Zero when there is a single block.
    pub separation_margin: f64,
    pub threshold: f64,
}

impl ClusterPartition {
    pub fn all_singletons(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }

    pub fn block_of(&self, body: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&body))
    }
}

/// Least squares `min |A c - y|` by modified Gram-Schmidt on the columns.
fn lstsq(cols: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let p = cols.len();
    let mut q: Vec<Vec<f64>> = cols.to_vec();
    let mut r = vec![vec![0.0; p]; p];
    for j in 0..p {
        for i in 0..j {
            let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r[i][j] = d;
            let qi = q[i].clone();
            q[j].iter_mut().zip(&qi).for_each(|(c, e)| *c -= d * e);
        }
        let norm = q[j].iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 1e-12 * cols[j].iter().map(|c| c * c).sum::<f64>().sqrt()) {
            return Err(Error::invalid("fit window too short for the regression model"));
        }
        r[j][j] = norm;
        q[j].iter_mut().for_each(|c| *c /= norm);
    }
    let mut coef: Vec<f64> = (0..p).map(|j| q[j].iter().zip(y).map(|(a, b)| a * b).sum()).collect();
    for j in (0..p).rev() {
        for k in j + 1..p {
            coef[j] -= r[j][k] * coef[k];
        }
        coef[j] /= r[j][j];
    }
    Ok(coef)
}

fn check_window(tr: &Trajectory, w: Window) -> Result<()> {
    let (t0, t1) = (tr.start_time(), tr.end_time());
    if !(w.0 > 0.0 && w.1 > w.0) {
        return Err(Error::invalid(format!("window [{}, {}] must satisfy 0 < start < end", w.0, w.1)));
    }
    if w.0 < t0 || w.1 > t1 {
        return Err(Error::invalid(format!("window [{}, {}] outside the trajectory span [{t0}, {t1}]", w.0, w.1)));
    }
    Ok(())
}

/// Fits `a` over `window` with 200 uniformly spaced samples and the default
/// model.
pub fn fit_final_configuration(tr: &Trajectory, window: Window) -> Result<AsymptoticConfiguration> {
    fit_final_configuration_with(tr, window, 200, FitModel::default())
}

pub fn fit_final_configuration_with(
    tr: &Trajectory,
    window: Window,
    samples: usize,
    model: FitModel,
) -> Result<AsymptoticConfiguration> {
    check_window(tr, window)?;
    let min_samples = if model == FitModel::Affine { 2 } else { 3 };
    if samples < min_samples {
        return Err(Error::invalid(format!("need at least {min_samples} samples for the fit")));
    }
    let times: Vec<f64> = (0..samples)
        .map(|k| window.0 + (window.1 - window.0) * k as f64 / (samples - 1) as f64)
        .collect();
    let xs = times.iter().map(|&t| tr.position_at(t)).collect::<Result<Vec<_>>>()?;

    // scaled columns keep the Gram-Schmidt well conditioned
    let ts = window.1;
    let mut cols = vec![times.iter().map(|t| t / ts).collect::<Vec<_>>(), vec![1.0; samples]];
    if model == FitModel::AffineLog {
        cols.push(times.iter().map(|t| (t / ts).ln()).collect());
    }
    let (n, dim) = (tr.n(), tr.dim());
    let nd = n * dim;
    let mut a = vec![0.0; nd];
    let mut fitted = vec![vec![0.0; nd]; samples];
    for c in 0..nd {
        let y: Vec<f64> = xs.iter().map(|x| x.as_slice()[c]).collect();
        let coef = lstsq(&cols, &y)?;
        a[c] = coef[0] / ts;
        for k in 0..samples {
            fitted[k][c] = cols.iter().zip(&coef).map(|(col, w)| col[k] * w).sum();
        }
    }
    let ms = tr.masses.as_slice();
    let sqrt_m = tr.masses.total().sqrt();
    let mut fit_residual = 0.0f64;
    for k in 0..samples {
        let d: Vec<f64> = (0..nd).map(|c| xs[k].as_slice()[c] - fitted[k][c]).collect();
        fit_residual = fit_residual.max(mass_inner_slice(&d, &d, dim, ms).sqrt() / (sqrt_m * times[k]));
    }
    let energy_of_a = 0.5 * mass_inner_slice(&a, &a, dim, ms);
    Ok(AsymptoticConfiguration { a: Configuration::new(n, dim, a)?, fit_window: window, fit_residual, energy_of_a })
}

fn dist(a: &Configuration, i: usize, j: usize) -> f64 {
    a.body(i).iter().zip(a.body(j)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Single-linkage clustering of the components `a_i` at distance threshold
/// `rel_tol * diameter(a)`.
pub fn detect_clusters(a: &Configuration, rel_tol: f64) -> Result<ClusterPartition> {
    if !(rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be nonnegative"));
    }
    let n = a.n();
    let diam = diameter(a);
    if diam == 0.0 {
        return Ok(ClusterPartition { blocks: vec![(0..n).collect()], separation_margin: 0.0, threshold: 0.0 });
    }
    let threshold = rel_tol * diam;
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if dist(a, i, j) <= threshold {
                uf.union(i, j);
            }
        }
    }
    let labels = uf.into_labeling();
    let mut blocks: Vec<Vec<usize>> = Vec::new();
    let mut root_block = vec![usize::MAX; n];
    for (i, &root) in labels.iter().enumerate() {
        if root_block[root] == usize::MAX {
            root_block[root] = blocks.len();
            blocks.push(Vec::new());
        }
        blocks[root_block[root]].push(i);
    }
    let block_of: Vec<usize> = labels.iter().map(|&r| root_block[r]).collect();
    let (mut inter, mut intra) = (f64::INFINITY, 0.0f64);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist(a, i, j);
            if block_of[i] == block_of[j] {
                intra = intra.max(d);
            } else {
                inter = inter.min(d);
            }
        }
    }
    let separation_margin = if blocks.len() < 2 { 0.0 } else { inter / intra.max(threshold) };
    Ok(ClusterPartition { blocks, separation_margin, threshold })
}

/// Log-log slope of `|x_i(t) - x_j(t)|` over `window` from 200
/// log-spaced samples.
pub fn growth_exponent(tr: &Trajectory, pair: (usize, usize), window: Window) -> Result<f64> {
    growth_exponent_with(tr, pair, window, 200)
}

pub fn growth_exponent_with(tr: &Trajectory, pair: (usize, usize), window: Window, samples: usize) -> Result<f64> {
    check_window(tr, window)?;
    let (i, j) = pair;
    if i == j || i >= tr.n() || j >= tr.n() {
        return Err(Error::invalid(format!("bad body pair ({i}, {j})")));
    }
    if samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let (la, lb) = (window.0.ln(), window.1.ln());
    let mut lt = Vec::with_capacity(samples);
    let mut lr = Vec::with_capacity(samples);
    for k in 0..samples {
        let l = la + (lb - la) * k as f64 / (samples - 1) as f64;
        let x = tr.position_at(l.exp())?;
        let r = dist(&x, i, j);
        if !(r > 0.0) {
            return Err(Error::invalid(format!("bodies {i} and {j} coincide at t = {}", l.exp())));
        }
        lt.push(l);
        lr.push(r.ln());
    }
    let coef = lstsq(&[lt, vec![1.0; samples]], &lr)?;
    Ok(coef[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionLabel {
    Hyperbolic,
    PartiallyHyperbolic,
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    pub fit_window: Window,
    pub exponent_window: Window,
    pub samples: usize,
    pub model: FitModel,
    pub rel_tol: f64,
    /// Allowed distance of cross-cluster exponents from 1.
    pub cross_tol: f64,
    /// Margin required for the hyperbolic label.
    pub hyperbolic_margin: f64,
    /// Also classify on the doubled windows and demote to unresolved when
    /// the labels disagree.
    pub doubling_check: bool,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            fit_window: (100.0, 1000.0),
            exponent_window: (100.0, 1000.0),
            samples: 200,
            model: FitModel::default(),
            rel_tol: 1e-2,
            cross_tol: 0.05,
            hyperbolic_margin: 2.0,
            doubling_check: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairExponent {
    pub i: usize,
    pub j: usize,
    pub same_block: bool,
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub separation: f64,
    pub threshold: f64,
    pub hyperbolic_required: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Windows {
    pub fit: Window,
    pub exponent: Window,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub fit: f64,
    /// `| |a|_m^2/2 - h |` with `h` the trajectory energy.
    pub energy_of_a: f64,
    /// Label obtained on the doubled windows, when checked.
    pub doubled_label: Option<MotionLabel>,
}

/// Classification outcome with every intermediate quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionReport {
    pub label: MotionLabel,
    pub a: Configuration,
    pub blocks: Vec<Vec<usize>>,
    pub margins: Margins,
    pub exponents: Vec<PairExponent>,
    pub windows: Windows,
    pub residuals: Residuals,
}

impl MotionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Exponents of pairs in different blocks.
    pub fn cross_exponents(&self) -> impl Iterator<Item = f64> + '_ {
        self.exponents.iter().filter(|e| !e.same_block).map(|e| e.exponent)
    }

    /// Exponents of pairs in the same block.
    pub fn intra_exponents(&self) -> impl Iterator<Item = f64> + '_ {
        self.exponents.iter().filter(|e| e.same_block).map(|e| e.exponent)
    }
}

/// Labels a motion from its late-time behaviour. Falls back to
/// [`MotionLabel::Unresolved`] whenever a check fails; only windows that do
/// not fit the trajectory are errors.
pub fn classify_motion(tr: &Trajectory, opts: &ClassifyOptions) -> Result<MotionReport> {
    let mut report = classify_once(tr, opts)?;
    if opts.doubling_check {
        let doubled = ClassifyOptions {
            fit_window: (2.0 * opts.fit_window.0, 2.0 * opts.fit_window.1),
            exponent_window: (2.0 * opts.exponent_window.0, 2.0 * opts.exponent_window.1),
            doubling_check: false,
            ..opts.clone()
        };
        let label = classify_once(tr, &doubled).map(|r| r.label).unwrap_or(MotionLabel::Unresolved);
        report.residuals.doubled_label = Some(label);
        if label != report.label {
            report.label = MotionLabel::Unresolved;
        }
    }
    Ok(report)
}

fn classify_once(tr: &Trajectory, opts: &ClassifyOptions) -> Result<MotionReport> {
    let fit = fit_final_configuration_with(tr, opts.fit_window, opts.samples, opts.model)?;
    let part = detect_clusters(&fit.a, opts.rel_tol)?;
    let n = tr.n();
    let mut exponents = Vec::new();
    let mut exponents_ok = true;
    for i in 0..n {
        for j in i + 1..n {
            let same_block = part.block_of(i) == part.block_of(j);
            match growth_exponent_with(tr, (i, j), opts.exponent_window, opts.samples) {
                Ok(exponent) => exponents.push(PairExponent { i, j, same_block, exponent }),
                Err(_) => exponents_ok = false,
            }
        }
    }
    let cross_linear = exponents_ok
        && exponents.iter().filter(|e| !e.same_block).all(|e| (e.exponent - 1.0).abs() <= opts.cross_tol);
    let label = if part.blocks.len() < 2 || !cross_linear {
        MotionLabel::Unresolved
    } else if part.all_singletons() {
        if part.separation_margin > opts.hyperbolic_margin {
            MotionLabel::Hyperbolic
        } else {
            MotionLabel::Unresolved
        }
    } else {
        MotionLabel::PartiallyHyperbolic
    };
    Ok(MotionReport {
        label,
        blocks: part.blocks,
        margins: Margins {
            separation: part.separation_margin,
            threshold: part.threshold,
            hyperbolic_required: opts.hyperbolic_margin,
        },
        exponents,
        windows: Windows { fit: opts.fit_window, exponent: opts.exponent_window },
        residuals: Residuals { fit: fit.fit_residual, energy_of_a: (fit.energy_of_a - tr.h).abs(), doubled_label: None },
        a: fit.a,
    })
}
