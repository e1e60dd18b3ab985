use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freetime_core::action::EnergyLevel;
use freetime_core::experiments::{
    build_hyperbolic_ray, continuity_probe_c, estimate_horofunction, lambda_doubling, partially_hyperbolic_experiment,
    preset, Config,
};
use freetime_core::flow::{integrate_with, IntegrateOptions, State, Trajectory};
use freetime_core::geometry::Configuration;
use freetime_core::minimizer::{minimize_fixed, minimize_free_time};
use freetime_core::Error;
use serde::Serialize;

/// Free-time minimizers and partially hyperbolic motions of the N-body
/// problem.
#[derive(Parser)]
#[command(name = "freetime", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Bundled configuration: `flagship` or `two_body`.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed- or free-time minimization from `x0` to `minimize.y`.
    Minimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        h: Option<f64>,
        /// Fixed duration; free time when absent.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        k0: Option<usize>,
        #[arg(long)]
        refinements: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Integrates from `(x0, flow.v0)`.
    Flow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        rtol: Option<f64>,
    },
    /// Builds the ray towards `a_n * lambda` with its diagnostics.
    Ray {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda: f64,
        /// Index into the direction sequence; the last one by default.
        #[arg(long)]
        index: Option<usize>,
        /// Also rebuild at half and twice `lambda`.
        #[arg(long)]
        doubling: bool,
    },
    /// Horofunction schedule.
    Horofn {
        #[command(flatten)]
        common: Common,
    },
    /// The partially hyperbolic limit experiment.
    Phmotion {
        #[command(flatten)]
        common: Common,
    },
    /// Continuity probe of the final-configuration map.
    ProbeC {
        #[command(flatten)]
        common: Common,
    },
}

/// Failures mapped to exit codes.
enum Failure {
    Config(String),
    NonConvergence(String),
    Experiment(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Config(e.to_string()),
            Error::NonConvergence(_) | Error::Bracket { .. } | Error::EnergyDrift { .. } => {
                Failure::NonConvergence(e.to_string())
            }
            _ => Failure::Experiment(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Experiment(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Experiment(e.to_string())
    }
}

fn load(common: &Common) -> Result<Config, Failure> {
    let cfg = match (&common.config, &common.preset) {
        (Some(path), _) => Config::from_file(path)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Failure::Config("either --config or --preset is required".into())),
    };
    std::fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_columns(dir: &Path, name: &str, rows: impl Iterator<Item = Vec<f64>>) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

fn distance(x: &Configuration, i: usize, j: usize) -> f64 {
    x.body(i).iter().zip(x.body(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// `t r_ij(t)` and `ln t ln r_ij(t)` files for every pair.
fn write_pair_plots(dir: &Path, tr: &Trajectory) -> Result<(), Failure> {
    let n = tr.n();
    for i in 0..n {
        for j in i + 1..n {
            let samples = || tr.samples().iter().filter(|s| s.t > 0.0);
            write_columns(dir, &format!("r_{i}{j}.txt"), samples().map(|s| vec![s.t, distance(&s.x, i, j)]))?;
            write_columns(
                dir,
                &format!("loglog_r_{i}{j}.txt"),
                samples().map(|s| vec![s.t.ln(), distance(&s.x, i, j).ln()]),
            )?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Minimize { common, h, tau, k0, refinements, seed } => {
            let cfg = load(&common)?;
            let (m, x0, h_cfg) = cfg.system()?;
            let y = cfg.minimize.y.as_ref().ok_or_else(|| Failure::Config("missing minimize.y".into()))?;
            let y = Configuration::from_rows(y)?;
            let mut opts = cfg.minimize.options.clone();
            opts.k0 = k0.unwrap_or(opts.k0);
            opts.refinements = refinements.unwrap_or(opts.refinements);
            opts.seed = seed.unwrap_or(opts.seed);
            let (converged, path) = match tau.or(cfg.minimize.tau) {
                Some(tau) => {
                    let r = minimize_fixed(&x0, &y, tau, &m, &opts)?;
                    write_json(&common.out, "minimize.json", &r)?;
                    (r.converged, r.path)
                }
                None => {
                    let r = minimize_free_time(&x0, &y, &m, EnergyLevel::new(h.unwrap_or(h_cfg))?, &opts)?;
                    write_json(&common.out, "minimize.json", &r)?;
                    (r.converged, r.path)
                }
            };
            path.write_csv(create(&common.out, "path.csv")?)?;
            if !converged {
                return Err(Failure::NonConvergence("minimizer hit its iteration cap".into()));
            }
        }
        Command::Flow { common, t_end, rtol } => {
            let cfg = load(&common)?;
            let (m, x0, _) = cfg.system()?;
            let v0 = cfg.initial_velocity()?;
            let t_end = t_end.unwrap_or(cfg.flow.t_end);
            let mut opts = IntegrateOptions::with_rtol(rtol.unwrap_or(cfg.flow.rtol));
            if let Some(step) = cfg.flow.sample_step {
                let k = (t_end / step).floor() as usize;
                opts.sample_times = (1..=k).map(|i| i as f64 * step).collect();
            }
            let tr = integrate_with(&State::new(x0, v0, 0.0)?, &m, t_end, &opts)?;
            tr.write_csv(create(&common.out, "trajectory.csv")?)?;
            let mut w = create(&common.out, "trajectory.json")?;
            writeln!(w, "{}", tr.to_json()?)?;
        }
        Command::Ray { common, lambda, index, doubling } => {
            let cfg = load(&common)?;
            let (m, x0, h) = cfg.system()?;
            let seq = cfg.direction_sequence()?;
            let n = index.unwrap_or(seq.len() - 1);
            let a = seq.a.get(n).ok_or_else(|| Failure::Config(format!("no direction with index {n}")))?;
            let ray = build_hyperbolic_ray(&x0, a, &m, h, lambda, &cfg.ray_options())?;
            ray.solve.discrete.path.write_csv(create(&common.out, "ray_path.csv")?)?;
            write_json(&common.out, "ray.json", &ray)?;
            if doubling {
                let study = lambda_doubling(&x0, a, &m, h, &[0.5 * lambda, lambda, 2.0 * lambda], &cfg.ray_options())?;
                write_json(&common.out, "ray_doubling.json", &study)?;
            }
        }
        Command::Horofn { common } => {
            let cfg = load(&common)?;
            let seq = cfg.direction_sequence()?;
            let report =
                estimate_horofunction(&cfg.probes()?, &cfg.x_ref()?, &seq, &cfg.lambdas()?, &cfg.horofunction_options())?;
            let mut w = create(&common.out, "horofunction_samples.jsonl")?;
            for s in &report.samples {
                writeln!(w, "{}", serde_json::to_string(s)?)?;
            }
            write_json(&common.out, "horofunction.json", &report)?;
        }
        Command::Phmotion { common } => {
            let cfg = load(&common)?;
            let (_, x0, _) = cfg.system()?;
            let seq = cfg.direction_sequence()?;
            let out = partially_hyperbolic_experiment(
                &x0,
                &seq,
                &cfg.lambda_rule()?,
                cfg.experiment.horizon,
                &cfg.experiment_options(),
            )?;
            let mut w = create(&common.out, "report.json")?;
            writeln!(w, "{}", out.report.to_json()?)?;
            out.trajectory.write_csv(create(&common.out, "trajectory.csv")?)?;
            write_pair_plots(&common.out, &out.trajectory)?;
            let rows = out.report.rays.iter().filter_map(|r| {
                r.ray.as_ref().map(|ray| std::iter::once(r.eps).chain(ray.v.as_slice().iter().copied()).collect())
            });
            write_columns(&common.out, "velocities.txt", rows)?;
            if let Some(motion) = &out.report.motion {
                println!("label: {:?}, blocks: {:?}", motion.label, motion.blocks);
            }
        }
        Command::ProbeC { common } => {
            let cfg = load(&common)?;
            let (m, x0, _) = cfg.system()?;
            let seq = cfg.direction_sequence()?;
            let family = cfg.probe_family()?;
            let report = continuity_probe_c(&x0, &m, &seq.b, &family)?;
            report.write_csv(x0.n(), x0.dim(), create(&common.out, "probe.csv")?)?;
            let rows = report
                .rows
                .iter()
                .filter_map(|r| r.a.as_ref().map(|a| std::iter::once(r.param).chain(a.as_slice().iter().copied()).collect()));
            write_columns(&common.out, "a_components.txt", rows)?;
            write_json(&common.out, "probe.json", &report)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Config(m) => (2, m),
                Failure::NonConvergence(m) => (3, m),
                Failure::Experiment(m) => (4, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
