use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_direction_sequence, DirectionSequence, ExperimentOptions, Extrapolation, HorofunctionOptions, LambdaRule,
    Perturbation, PhiOptions, ProbeFamily, RayOptions,
};
use crate::asymptotics::{ClassifyOptions, Window};
use crate::error::{Error, Result};
use crate::flow::ShootOptions;
use crate::geometry::{min_mutual_distance, Configuration, Masses, TangentVector};
use crate::minimizer::MinimizeOptions;

const FLAGSHIP: &str = include_str!("../../presets/flagship.toml");
const TWO_BODY: &str = include_str!("../../presets/two_body.toml");

type Rows = Vec<Vec<f64>>;

/// Parses a bundled preset: `flagship` or `two_body`.
pub fn preset(name: &str) -> Result<Config> {
    match name {
        "flagship" => Config::from_toml(FLAGSHIP),
        "two_body" => Config::from_toml(TWO_BODY),
        other => Err(Error::Config(format!("unknown preset `{other}`"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub masses: Vec<f64>,
    pub x0: Rows,
    pub h: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizeSpec {
    /// Target configuration of the `minimize` command.
    pub y: Option<Rows>,
    /// Fixed duration; free time when absent.
    pub tau: Option<f64>,
    #[serde(flatten)]
    pub options: MinimizeOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub v0: Option<Rows>,
    pub t_end: f64,
    pub rtol: f64,
    /// Spacing of extra dense-output samples.
    pub sample_step: Option<f64>,
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec { v0: None, t_end: 100.0, rtol: 1e-10, sample_step: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionSpec {
    pub b: Rows,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub perturb: Vec<Perturbation>,
    /// Constant of `lambda_n = c / eps_n`; defaults to `100 * scale(x0)`.
    pub lambda_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub horizon: f64,
    pub extrapolation: Extrapolation,
    pub rtol: f64,
    pub sample_step: f64,
    pub doubling: bool,
    pub polish: bool,
    pub segments: usize,
    pub classify: ClassifyOptions,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let d = ExperimentOptions::default();
        ExperimentSpec {
            horizon: 1000.0,
            extrapolation: d.extrapolation,
            rtol: d.rtol,
            sample_step: d.sample_step,
            doubling: d.doubling,
            polish: d.ray.phi.polish,
            segments: d.ray.phi.segments,
            classify: d.classify,
        }
    }
}

/// Probes drawn uniformly from a box of half-width `radius` around `x0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    pub count: usize,
    pub radius: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorofunctionSpec {
    pub probes: Vec<Rows>,
    pub random: Option<ProbeSet>,
    /// Defaults to `x0`.
    pub x_ref: Option<Rows>,
    /// Defaults to the lambda rule applied to the eps schedule.
    pub lambdas: Option<Vec<f64>>,
    pub calibration_fraction: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub base_velocity: Rows,
    pub direction: Rows,
    pub start: f64,
    pub end: f64,
    pub count: usize,
    /// Rescale each member to the system energy.
    #[serde(default = "yes")]
    pub project: bool,
    #[serde(default = "default_probe_horizon")]
    pub horizon: f64,
    #[serde(default = "default_probe_window")]
    pub fit_window: Window,
    #[serde(default = "default_probe_rtol")]
    pub rtol: f64,
}

fn yes() -> bool {
    true
}

fn default_probe_horizon() -> f64 {
    1000.0
}

fn default_probe_window() -> Window {
    (100.0, 1000.0)
}

fn default_probe_rtol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSpec,
    #[serde(default)]
    pub minimize: MinimizeSpec,
    #[serde(default)]
    pub shoot: ShootOptions,
    #[serde(default)]
    pub flow: FlowSpec,
    pub direction: Option<DirectionSpec>,
    #[serde(default)]
    pub experiment: ExperimentSpec,
    #[serde(default)]
    pub horofunction: HorofunctionSpec,
    pub probe: Option<ProbeSpec>,
}

fn rows(name: &str, r: &Rows) -> Result<Configuration> {
    Configuration::from_rows(r).map_err(|e| Error::Config(format!("{name}: {e}")))
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        let (m, x0, _) = self.system()?;
        let check = |name: &str, r: &Rows| -> Result<()> {
            let c = rows(name, r)?;
            if !c.same_shape(&x0) {
                return Err(Error::Config(format!("{name} does not match the shape of x0")));
            }
            Ok(())
        };
        if let Some(y) = &self.minimize.y {
            check("minimize.y", y)?;
        }
        if let Some(v) = &self.flow.v0 {
            check("flow.v0", v)?;
        }
        if let Some(d) = &self.direction {
            check("direction.b", &d.b)?;
        }
        for p in &self.horofunction.probes {
            check("horofunction.probes", p)?;
        }
        if let Some(p) = &self.probe {
            check("probe.base_velocity", &p.base_velocity)?;
            check("probe.direction", &p.direction)?;
        }
        self.minimize.options.validate().map_err(|e| Error::Config(e.to_string()))?;
        m.check_bodies(x0.n()).map_err(|e| Error::Config(e.to_string()))
    }

    /// Masses, start configuration and energy.
    pub fn system(&self) -> Result<(Masses, Configuration, f64)> {
        let m = Masses::new(self.system.masses.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let x0 = rows("system.x0", &self.system.x0)?;
        if !(self.system.h > 0.0) {
            return Err(Error::Config("system.h must be positive".into()));
        }
        if m.len() != x0.n() {
            return Err(Error::Config(format!("{} masses for {} bodies", m.len(), x0.n())));
        }
        if min_mutual_distance(&x0) <= 0.0 {
            return Err(Error::Config("system.x0 has a collision".into()));
        }
        Ok((m, x0, self.system.h))
    }

    pub fn phi_options(&self) -> PhiOptions {
        PhiOptions {
            minimize: self.minimize.options.clone(),
            shoot: self.shoot.clone(),
            polish: self.experiment.polish,
            segments: self.experiment.segments,
            ..Default::default()
        }
    }

    pub fn ray_options(&self) -> RayOptions {
        RayOptions { phi: self.phi_options(), ..Default::default() }
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        let e = &self.experiment;
        ExperimentOptions {
            ray: self.ray_options(),
            extrapolation: e.extrapolation,
            rtol: e.rtol,
            sample_step: e.sample_step,
            classify: e.classify.clone(),
            doubling: e.doubling,
            ..Default::default()
        }
    }

    pub fn horofunction_options(&self) -> HorofunctionOptions {
        let mut o = HorofunctionOptions { phi: self.phi_options(), ..Default::default() };
        if let Some(f) = self.horofunction.calibration_fraction {
            o.calibration_fraction = f;
        }
        o
    }

    fn direction_spec(&self) -> Result<&DirectionSpec> {
        self.direction.as_ref().ok_or_else(|| Error::Config("missing [direction] section".into()))
    }

    pub fn direction_sequence(&self) -> Result<DirectionSequence> {
        let (m, _, h) = self.system()?;
        let d = self.direction_spec()?;
        build_direction_sequence(&rows("direction.b", &d.b)?, &m, h, &d.eps, &d.perturb)
    }

    pub fn lambda_rule(&self) -> Result<LambdaRule> {
        let (m, x0, _) = self.system()?;
        match self.direction_spec()?.lambda_c {
            Some(c) => Ok(LambdaRule { c }),
            None => LambdaRule::for_start(&x0, &m),
        }
    }

    pub fn lambdas(&self) -> Result<Vec<f64>> {
        if let Some(l) = &self.horofunction.lambdas {
            return Ok(l.clone());
        }
        let rule = self.lambda_rule()?;
        Ok(self.direction_spec()?.eps.iter().map(|&e| rule.lambda(e)).collect())
    }

    /// Explicit probes followed by the seeded random ones.
    pub fn probes(&self) -> Result<Vec<Configuration>> {
        let (_, x0, _) = self.system()?;
        let mut out: Vec<Configuration> =
            self.horofunction.probes.iter().map(|p| rows("horofunction.probes", p)).collect::<Result<_>>()?;
        if let Some(set) = &self.horofunction.random {
            let mut rng = ChaCha8Rng::seed_from_u64(set.seed);
            while out.len() < self.horofunction.probes.len() + set.count {
                let mut p = x0.clone();
                p.as_mut_slice().iter_mut().for_each(|c| *c += rng.random_range(-set.radius..set.radius));
                if min_mutual_distance(&p) > 0.1 * min_mutual_distance(&x0) {
                    out.push(p);
                }
            }
        }
        Ok(out)
    }

    pub fn x_ref(&self) -> Result<Configuration> {
        match &self.horofunction.x_ref {
            Some(r) => rows("horofunction.x_ref", r),
            None => Ok(self.system()?.1),
        }
    }

    pub fn initial_velocity(&self) -> Result<TangentVector> {
        let v = self.flow.v0.as_ref().ok_or_else(|| Error::Config("missing flow.v0".into()))?;
        rows("flow.v0", v)
    }

    pub fn probe_family(&self) -> Result<ProbeFamily> {
        let p = self.probe.as_ref().ok_or_else(|| Error::Config("missing [probe] section".into()))?;
        if p.count == 0 {
            return Err(Error::Config("probe.count must be positive".into()));
        }
        let params = if p.count == 1 {
            vec![p.start]
        } else {
            (0..p.count).map(|k| p.start + (p.end - p.start) * k as f64 / (p.count - 1) as f64).collect()
        };
        Ok(ProbeFamily {
            base_velocity: rows("probe.base_velocity", &p.base_velocity)?,
            direction: rows("probe.direction", &p.direction)?,
            params,
            energy: p.project.then_some(self.system.h),
            horizon: p.horizon,
            fit_window: p.fit_window,
            rtol: p.rtol,
        })
    }
}
