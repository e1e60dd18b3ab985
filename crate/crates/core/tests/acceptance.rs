//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one line per criterion; exits non-zero when any fails.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::{rel, rng, rows};
use freetime_core::action::{action_gradient, jm_length, DiscretePath, EnergyLevel};
use freetime_core::asymptotics::{fit_final_configuration, MotionLabel, MotionReport};
use freetime_core::experiments::{
    continuity_probe_c, estimate_horofunction, partially_hyperbolic_experiment, preset, ExperimentReport,
    HorofunctionReport, ProbeReport,
};
use freetime_core::flow::{integrate_with, IntegrateOptions, State, Termination, Trajectory};
use freetime_core::geometry::{potential, potential_gradient, Configuration, Masses};
use freetime_core::minimizer::{
    check_interior_collisionfree, endpoint_scale, energy_statistics, minimize_fixed, minimize_free_time, tau_bracket,
    FreeTimeResult, MinimizeOptions,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn half() -> EnergyLevel {
    EnergyLevel::new(0.5).unwrap()
}

fn gradients() -> Outcome {
    let mut r = rng(101);
    let mut worst_u = 0.0f64;
    for _ in 0..50 {
        let x = common::random_configuration(&mut r, 3, 2, 2.0, 0.3);
        let m = common::random_masses(&mut r, 3);
        let step = 1e-6 * freetime_core::geometry::diameter(&x);
        let g = potential_gradient(&x, &m).unwrap();
        let got: Vec<f64> = g.as_slice().iter().enumerate().map(|(c, v)| v * m.as_slice()[c / 2]).collect();
        let want: Vec<f64> = (0..6)
            .map(|c| {
                let shift = |s: f64| {
                    let mut y = x.clone();
                    y.as_mut_slice()[c] += s;
                    potential(&y, &m).unwrap()
                };
                (shift(step) - shift(-step)) / (2.0 * step)
            })
            .collect();
        worst_u = worst_u.max(common::distance(&got, &want) / common::norm(&want));
    }
    let mut worst_a = 0.0f64;
    for _ in 0..50 {
        let p = common::random_path(&mut r, 3, 10);
        let got = common::euclidean(&action_gradient(&p).unwrap(), p.masses());
        let want = common::fd_action_gradient(&p, 1e-6);
        worst_a = worst_a.max(common::distance(&got, &want) / common::norm(&want));
    }
    outcome(
        worst_u <= 1e-6 && worst_a <= 1e-6,
        format!("max relative error: potential {worst_u:.1e}, action {worst_a:.1e}"),
    )
}

fn energy_criterion(results: &mut Vec<FreeTimeResult>) -> Outcome {
    let mut r = rng(202);
    let (mut worst_mean, mut worst_sd, mut converged) = (0.0f64, 0.0f64, 0);
    for _ in 0..10 {
        let (x, y) = common::two_body_pair(&mut r);
        let res = minimize_free_time(&x, &y, &Masses::unit(2), half(), &MinimizeOptions::default()).unwrap();
        if res.converged {
            let (mean, sd) = energy_statistics(&res.path).unwrap();
            worst_mean = worst_mean.max((mean - 0.5).abs());
            worst_sd = worst_sd.max(sd);
            converged += 1;
            results.push(res);
        }
    }
    outcome(
        converged == 10 && worst_mean <= 1e-3 && worst_sd <= 1e-3,
        format!("{converged}/10 converged; max |mean - 1/2| {worst_mean:.1e}, max sd {worst_sd:.1e}"),
    )
}

fn geodesic_equivalence(results: &[FreeTimeResult]) -> Outcome {
    let worst = results
        .iter()
        .map(|res| (jm_length(&res.path, half()).unwrap() - res.value).abs() / res.value)
        .fold(0.0f64, f64::max);
    outcome(worst <= 1e-4, format!("{} minimizers; max |jm - value| / value {worst:.1e}", results.len()))
}

fn marchal() -> Outcome {
    let mut r = rng(303);
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("marchal");
    let (mut converged, mut failures) = (0, Vec::new());
    for run in 0..25 {
        let x = common::random_configuration(&mut r, 3, 2, 2.0, 0.5);
        let y = common::random_configuration(&mut r, 3, 2, 2.0, 0.5);
        let tau = rand::Rng::random_range(&mut r, 0.5..3.0);
        let m = Masses::unit(3);
        let res = minimize_fixed(&x, &y, tau, &m, &MinimizeOptions::default()).unwrap();
        if !res.converged {
            continue;
        }
        converged += 1;
        let check = check_interior_collisionfree(&res.path, 1e-4 * endpoint_scale(&x, &y, &m));
        if !check.collision_free {
            std::fs::create_dir_all(&dir).unwrap();
            let file = dir.join(format!("run_{run}.json"));
            std::fs::write(&file, res.path.to_json().unwrap()).unwrap();
            failures.push(format!("run {run}: {check:?}, path in {}", file.display()));
        }
    }
    for f in &failures {
        println!("    {f}");
    }
    outcome(
        converged > 0 && failures.is_empty(),
        format!("{converged}/25 converged, {} with an interior near-collision", failures.len()),
    )
}

fn grid_oracle(results: &mut Vec<FreeTimeResult>) -> Outcome {
    let mut r = rng(505);
    let m = Masses::unit(2);
    let opts = MinimizeOptions::default();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (x, y) = common::two_body_pair(&mut r);
        let res = minimize_free_time(&x, &y, &m, half(), &opts).unwrap();
        let (lo, hi) = tau_bracket(&x, &y, &m, 0.5);
        let scan = (0..200)
            .map(|i| {
                let tau = lo + (hi - lo) * i as f64 / 199.0;
                minimize_fixed(&x, &y, tau, &m, &opts).unwrap().value + 0.5 * tau
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(rel(res.value, scan));
        if res.converged {
            results.push(res);
        }
    }
    outcome(worst <= 1e-4, format!("max relative gap to the 200-point scan {worst:.1e}"))
}

fn horofunction() -> (Outcome, HorofunctionReport) {
    let cfg = preset("flagship").unwrap();
    let seq = cfg.direction_sequence().unwrap();
    let lambdas = cfg.lambdas().unwrap();
    let report =
        estimate_horofunction(&cfg.probes().unwrap(), &cfg.x_ref().unwrap(), &seq, &lambdas, &cfg.horofunction_options())
            .unwrap();
    let ok = report.samples.iter().filter(|s| s.ok()).count();
    let calib = report.max_calibration_residual.unwrap_or(f64::INFINITY);
    let decreasing = report.cauchy_decreasing.iter().all(|&d| d) && report.cauchy.iter().all(|c| c.len() == 3);
    let pass = lambdas.len() == 4 && ok == 4 && report.max_domination_residual <= 1e-4 && calib <= 1e-3 && decreasing;
    let detail = format!(
        "{ok}/4 samples; max domination residual {:.2e}; max calibration residual {calib:.1e}; Cauchy decreasing {:?}",
        report.max_domination_residual, report.cauchy_decreasing
    );
    (outcome(pass, detail), report)
}

fn flagship(diagnostics_pass: bool) -> (Outcome, Option<ExperimentReport>) {
    let cfg = preset("flagship").unwrap();
    let (_, x0, _) = cfg.system().unwrap();
    let seq = cfg.direction_sequence().unwrap();
    let run = partially_hyperbolic_experiment(
        &x0,
        &seq,
        &cfg.lambda_rule().unwrap(),
        cfg.experiment.horizon,
        &cfg.experiment_options(),
    );
    let out = match run {
        Ok(out) => out,
        Err(e) => return (outcome(false, format!("experiment failed: {e}")), None),
    };
    let r = out.report;
    let completed = r.terminated_by == Termination::Horizon && r.horizon >= 1e3;
    let cauchy = r.cauchy.windows(2).all(|w| w[1] < w[0]) && r.cauchy.len() >= 2;
    let invariants = r.energy_error <= 1e-6 && r.center_drift <= 1e-6;
    let base = format!(
        "Cauchy {:?}; energy error {:.1e}; G drift {:.1e}",
        r.cauchy.iter().map(|c| format!("{c:.2e}")).collect::<Vec<_>>(),
        r.energy_error,
        r.center_drift
    );
    let Some(motion) = r.motion.clone() else {
        return (outcome(false, format!("no classification; {base}")), Some(r));
    };
    let labelled = match motion.label {
        MotionLabel::PartiallyHyperbolic => {
            let blocks = motion.blocks == vec![vec![0, 1], vec![2]];
            let cross = motion.cross_exponents().all(|e| (e - 1.0).abs() <= 0.05);
            let intra = motion.intra_exponents().all(|e| (0.55..=0.8).contains(&e));
            blocks && cross && intra
        }
        MotionLabel::Unresolved => diagnostics_pass,
        MotionLabel::Hyperbolic => false,
    };
    let exps: Vec<String> = motion.exponents.iter().map(|e| format!("{}{}:{:.3}", e.i, e.j, e.exponent)).collect();
    let detail = format!(
        "label {:?} blocks {:?} exponents [{}]{}; {base}",
        motion.label,
        motion.blocks,
        exps.join(", "),
        if motion.label == MotionLabel::Unresolved { "; label clause via criteria 1-6" } else { "" }
    );
    (outcome(completed && cauchy && invariants && labelled, detail), Some(r))
}

fn end_state(s0: &State, m: &Masses, t_end: f64) -> State {
    let opts = IntegrateOptions { rtol: 1e-13, record_steps: false, ..Default::default() };
    integrate_with(s0, m, t_end, &opts).unwrap().last().clone()
}

fn two_body_oracles() -> (Outcome, Trajectory) {
    let m = Masses::unit(2);
    let s0 = State::new(rows(&[[1.0, 0.0], [-1.0, 0.0]]), rows(&[[0.0, 0.5], [0.0, -0.5]]), 0.0).unwrap();
    let y = |t: f64| end_state(&s0, &m, t).x.body(0)[1];
    let (mut t0, mut t1) = (4.0 * PI - 0.01, 4.0 * PI + 0.01);
    let (mut y0, mut y1) = (y(t0), y(t1));
    for _ in 0..8 {
        if y1 == 0.0 || y1 == y0 {
            break;
        }
        let t2 = t1 - y1 * (t1 - t0) / (y1 - y0);
        (t0, y0, t1) = (t1, y1, t2);
        y1 = y(t1);
    }
    let period_err = rel(t1, 4.0 * PI);

    let esc = State::new(rows(&[[1.0, 0.0], [-1.0, 0.0]]), rows(&[[0.6, 0.8], [-0.6, -0.8]]), 0.0).unwrap();
    let opts = IntegrateOptions { rtol: 1e-12, ..Default::default() };
    let tr = integrate_with(&esc, &m, 400.0, &opts).unwrap();
    let fit = fit_final_configuration(&tr, (200.0, 400.0)).unwrap();
    let energy_err = (fit.energy_of_a - 0.5).abs();
    (
        outcome(
            period_err <= 1e-8 && energy_err <= 1e-3,
            format!("period relative error {period_err:.1e}; fitted |a|^2/2 - h {energy_err:.1e}"),
        ),
        tr,
    )
}

fn round_trips(
    free: &[FreeTimeResult],
    tr: &Trajectory,
    horo: &HorofunctionReport,
    experiment: Option<&ExperimentReport>,
) -> Outcome {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    for res in free {
        check("DiscretePath", DiscretePath::from_json(&res.path.to_json().unwrap()).unwrap() == res.path);
        check("FreeTimeResult", FreeTimeResult::from_json(&res.to_json().unwrap()).unwrap() == *res);
    }
    check("Trajectory json", Trajectory::from_json(&tr.to_json().unwrap()).unwrap() == *tr);
    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    check("Trajectory csv", Trajectory::read_csv_samples(buf.as_slice(), 2, 2).unwrap() == tr.samples);
    let horo_back: HorofunctionReport = serde_json::from_str(&serde_json::to_string(horo).unwrap()).unwrap();
    check("HorofunctionReport", horo_back == *horo);
    if let Some(r) = experiment {
        check("ExperimentReport", ExperimentReport::from_json(&r.to_json().unwrap()).unwrap() == *r);
        if let Some(motion) = &r.motion {
            check("MotionReport", MotionReport::from_json(&motion.to_json().unwrap()).unwrap() == *motion);
        }
    }
    let cfg = preset("two_body").unwrap();
    let (m, x0, _) = cfg.system().unwrap();
    let probe = continuity_probe_c(&x0, &m, &cfg.direction_sequence().unwrap().b, &cfg.probe_family().unwrap()).unwrap();
    let probe_back: ProbeReport = serde_json::from_str(&serde_json::to_string(&probe).unwrap()).unwrap();
    check("ProbeReport", probe_back == probe);
    let shapes: Vec<Configuration> = free.iter().map(|r| r.path.end().clone()).collect();
    let shapes_back: Vec<Configuration> = serde_json::from_str(&serde_json::to_string(&shapes).unwrap()).unwrap();
    check("Configuration", shapes_back == shapes);
    let pass = failed.is_empty() && experiment.is_some();
    outcome(pass, if failed.is_empty() { "all bit-exact".into() } else { format!("mismatch: {}", failed.join(", ")) })
}

fn report(n: usize, name: &str, o: &Outcome, seconds: f64) {
    let tag = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {tag} {name} ({seconds:.1} s): {}", o.detail);
}

fn main() {
    let mut outcomes = Vec::new();
    let mut free = Vec::new();

    let t = Instant::now();
    let o = gradients();
    report(1, "gradient correctness", &o, t.elapsed().as_secs_f64());
    outcomes.push(o);

    let t = Instant::now();
    let o = energy_criterion(&mut free);
    report(2, "free-time energy", &o, t.elapsed().as_secs_f64());
    outcomes.push(o);

    let t = Instant::now();
    let c4 = marchal();
    let s4 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let c5 = grid_oracle(&mut free);
    let s5 = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let c3 = geodesic_equivalence(&free);
    report(3, "geodesic equivalence", &c3, t.elapsed().as_secs_f64());
    report(4, "interior collisions", &c4, s4);
    report(5, "tau-grid oracle", &c5, s5);
    outcomes.extend([c3, c4, c5]);

    let t = Instant::now();
    let (o, horo) = horofunction();
    report(6, "horofunction", &o, t.elapsed().as_secs_f64());
    outcomes.push(o);

    let diagnostics = outcomes.iter().all(|o| o.pass);
    let t = Instant::now();
    let (o, experiment) = flagship(diagnostics);
    report(7, "flagship experiment", &o, t.elapsed().as_secs_f64());
    outcomes.push(o);

    let t = Instant::now();
    let (o, tr) = two_body_oracles();
    report(8, "two-body oracles", &o, t.elapsed().as_secs_f64());
    outcomes.push(o);

    let t = Instant::now();
    let o = round_trips(&free, &tr, &horo, experiment.as_ref());
    report(9, "serialization", &o, t.elapsed().as_secs_f64());
    outcomes.push(o);

    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if passed != outcomes.len() {
        std::process::exit(1);
    }
}
