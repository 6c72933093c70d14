use std::path::Path;

use cdkf_sched::gp::{self, KernelKind};
use cdkf_sched::pipeline::{self, Method};
use cdkf_sched::simulate::RowKind;
use cdkf_sched::{
    GaussianBelief, InputPlan, RatePlan, RngStream, Scenario, ScenarioConfig, TimeGrid,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::io::{self, fmt, ManifestInputs, OutputDir};
use crate::{CliError, ConfigArgs};

/// Relative tolerance when matching a plan file's grid against the scenario grid.
const GRID_MATCH_TOL: f64 = 1e-9;

fn load_scenario(args: &ConfigArgs) -> Result<Scenario, CliError> {
    let mut cfg = ScenarioConfig::load(&args.config)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.config.display())))?;
    if let Some(n) = args.grid_n {
        *cfg.grid_n_mut() = n;
    }
    if let Some(tol) = args.feas_tol {
        cfg.common_mut().feas_tol = Some(tol);
    }
    if let Some(tol) = args.opt_tol {
        cfg.common_mut().opt_tol = Some(tol);
    }
    Scenario::from_config(&cfg)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.config.display())))
}

fn manifest(
    command: &'static str,
    sc: Option<&Scenario>,
    args: Option<&ConfigArgs>,
    seed: Option<u64>,
    started: u64,
) -> ManifestInputs {
    ManifestInputs {
        command,
        scenario: sc.map(|s| s.name.clone()),
        config: args.map(|a| a.config.clone()),
        seed,
        started_unix: started,
    }
}

fn check_grid(what: &Path, grid: &TimeGrid, expected: &TimeGrid) -> Result<(), CliError> {
    let scale = expected.tf().abs().max(expected.t0().abs()).max(1.0);
    let same = grid.len() == expected.len()
        && grid
            .nodes()
            .iter()
            .zip(expected.nodes())
            .all(|(a, b)| (a - b).abs() <= GRID_MATCH_TOL * scale);
    if same {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "{}: grid ({} nodes on [{}, {}]) does not match the scenario grid ({} nodes on [{}, {}])",
            what.display(),
            grid.len(),
            grid.t0(),
            grid.tf(),
            expected.len(),
            expected.t0(),
            expected.tf()
        )))
    }
}

fn load_inputs(sc: &Scenario, path: Option<&Path>) -> Result<InputPlan, CliError> {
    let dim = sc.spec.input_lower.len();
    let Some(path) = path else {
        let u: Vec<f64> = (0..dim)
            .map(|i| 0f64.clamp(sc.spec.input_lower[i], sc.spec.input_upper[i]))
            .collect();
        return Ok(if dim == 0 {
            InputPlan::empty(sc.grid.num_intervals())
        } else {
            InputPlan::constant(sc.grid.num_intervals(), &u)
        });
    };
    let (grid, plan) = io::read_inputs(path)?;
    check_grid(path, &grid, &sc.grid)?;
    if plan.dim != dim {
        return Err(CliError::Input(format!(
            "{}: {} input columns, scenario expects {dim}",
            path.display(),
            plan.dim
        )));
    }
    Ok(plan)
}

fn load_rates(sc: &Scenario, path: &Path) -> Result<RatePlan, CliError> {
    let rates = io::read_rates(path)?;
    check_grid(path, &rates.grid, &sc.grid)?;
    // Snap onto the scenario grid so text round-off in the node times cannot cause a mismatch.
    let rates = RatePlan::new(sc.grid.clone(), rates.rates)?;
    if rates.num_sensors() != sc.sensors.len() {
        return Err(CliError::Input(format!(
            "{}: {} rate columns, scenario has {} sensors",
            path.display(),
            rates.num_sensors(),
            sc.sensors.len()
        )));
    }
    Ok(rates)
}

pub fn plan(args: &ConfigArgs, out: &Path) -> Result<(), CliError> {
    let started = io::unix_seconds();
    let sc = load_scenario(args)?;
    let sol = pipeline::plan(&sc)?;
    let (rates, inputs) = pipeline::plans(&sol);
    let mut dir = OutputDir::create(out)?;

    dir.csv(
        "rates.csv",
        &io::interval_header("lambda_", sc.sensors.len()),
        &io::interval_rows(&sc.grid, |k| rates.interval_rates(k)),
    )?;
    dir.csv(
        "inputs.csv",
        &io::interval_header("u_", inputs.dim),
        &io::interval_rows(&sc.grid, |k| inputs.values[k].clone()),
    )?;

    let slack_dim = sol.node_slack.first().map_or(0, Vec::len);
    let mut header = vec!["node".to_string(), "t".to_string(), "trace".to_string()];
    header.extend(sc.aux_names.iter().cloned());
    header.extend((1..=slack_dim).map(|i| format!("slack_{i}")));
    let rows: Vec<Vec<String>> = (0..sc.grid.len())
        .map(|k| {
            let mut row = vec![
                k.to_string(),
                fmt(sc.grid.node(k)),
                fmt(sol.bounds.sigma_hat[k].trace()),
            ];
            row.extend(sol.bounds.xi_hat[k].iter().map(|v| fmt(*v)));
            // The terminal node carries no slack: only terminal constraints apply there.
            match sol.node_slack.get(k) {
                Some(slack) if k + 1 < sc.grid.len() => row.extend(slack.iter().map(|v| fmt(*v))),
                _ => row.extend((0..slack_dim).map(|_| String::new())),
            }
            row
        })
        .collect();
    dir.csv("bound.csv", &header, &rows)?;
    dir.json("solve.json", &sol.diagnostics)?;
    dir.manifest(manifest("plan", Some(&sc), Some(args), None, started))?;

    let d = &sol.diagnostics;
    println!(
        "objective {:.6e}, max violation {:.3e}, projected gradient {:.3e}, {} outer / {} inner iterations",
        d.objective, d.max_violation, d.projected_gradient, d.outer_iterations, d.inner_iterations
    );
    if d.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "solver stopped before meeting its tolerances (violation {:.3e}, projected gradient {:.3e}); best iterate written to {}",
            d.max_violation,
            d.projected_gradient,
            out.display()
        )))
    }
}

pub fn schedule(rates_path: &Path, out: &Path) -> Result<(), CliError> {
    let started = io::unix_seconds();
    let rates = io::read_rates(rates_path)?;
    let schedule = pipeline::quantized_schedule(&rates)?;
    let mut dir = OutputDir::create(out)?;
    dir.csv(
        "schedule.csv",
        &["sensor".to_string(), "t".to_string()],
        &io::schedule_rows(&schedule),
    )?;
    dir.manifest(manifest("schedule", None, None, None, started))?;
    let counts: Vec<String> = schedule.times.iter().map(|t| t.len().to_string()).collect();
    println!("events per sensor: {}", counts.join(", "));
    Ok(())
}

fn belief_rows(entries: &[(f64, GaussianBelief)], offset: f64) -> Vec<Vec<String>> {
    entries
        .iter()
        .map(|(t, b)| {
            let mut row = vec![fmt(*t)];
            row.extend(
                b.mean
                    .iter()
                    .enumerate()
                    .map(|(i, m)| fmt(if i == 0 { m + offset } else { *m })),
            );
            row.push(fmt(b.trace()));
            row
        })
        .collect()
}

fn belief_header(dim: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=dim).map(|i| format!("mean_{i}")));
    h.push("trace".to_string());
    h
}

pub fn simulate(
    args: &ConfigArgs,
    schedule_path: &Path,
    inputs_path: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let started = io::unix_seconds();
    let sc = load_scenario(args)?;
    let inputs = load_inputs(&sc, inputs_path)?;
    let schedule = io::read_schedule(schedule_path, sc.sensors.len(), sc.grid.t0(), sc.grid.tf())?;
    let run = pipeline::simulate(&sc, &inputs, &schedule, seed)?;
    let mut dir = OutputDir::create(out)?;

    let x_dim = run.truth.rows.first().map_or(0, |r| r.x.len());
    let mut header = vec!["t".to_string(), "kind".to_string(), "sensor".to_string()];
    header.extend((1..=x_dim).map(|i| format!("x_{i}")));
    header.extend(sc.aux_names.iter().cloned());
    header.push("trace".to_string());
    let rows: Vec<Vec<String>> = run
        .truth
        .rows
        .iter()
        .map(|r| {
            let (kind, sensor) = match r.kind {
                RowKind::Node(_) => ("node", String::new()),
                RowKind::PreEvent(s) => ("pre", (s + 1).to_string()),
                RowKind::PostEvent(s) => ("post", (s + 1).to_string()),
            };
            let mut row = vec![fmt(r.t), kind.to_string(), sensor];
            row.extend(
                r.x.iter()
                    .enumerate()
                    .map(|(i, v)| fmt(if i == 0 { v + sc.state_offset } else { *v })),
            );
            row.extend(r.xi.iter().map(|v| fmt(*v)));
            row.push(fmt(r.sigma.trace()));
            row
        })
        .collect();
    dir.csv("truth.csv", &header, &rows)?;

    let filtered = run.filter.filtered();
    let dim = filtered.first().map_or(0, |(_, b)| b.dim());
    dir.csv(
        "filter.csv",
        &belief_header(dim),
        &belief_rows(&filtered, sc.state_offset),
    )?;
    dir.csv(
        "smooth.csv",
        &belief_header(dim),
        &belief_rows(&run.smooth.entries, sc.state_offset),
    )?;
    dir.json("stats.json", &run.stats)?;
    dir.manifest(manifest(
        "simulate",
        Some(&sc),
        Some(args),
        Some(seed),
        started,
    ))?;

    for s in &run.stats.signals {
        println!(
            "{:<10} mean {:.6} std {:.6} max {:.6} min {:.6}",
            s.name, s.mean, s.std, s.max, s.min
        );
    }
    Ok(())
}

pub fn verify(
    args: &ConfigArgs,
    rates_path: &Path,
    inputs_path: Option<&Path>,
    reps: usize,
    seed: u64,
    out: &Path,
) -> Result<(), CliError> {
    let started = io::unix_seconds();
    if reps == 0 {
        return Err(CliError::Input("--reps must be at least 1".into()));
    }
    let sc = load_scenario(args)?;
    let rates = load_rates(&sc, rates_path)?;
    let inputs = load_inputs(&sc, inputs_path)?;
    let report = pipeline::verify(&sc, &rates, &inputs, reps, seed)?;
    let mut dir = OutputDir::create(out)?;
    dir.json("verify.json", &report)?;
    dir.manifest(manifest(
        "verify",
        Some(&sc),
        Some(args),
        Some(seed),
        started,
    ))?;

    let verdict = if report.pass { "PASS" } else { "FAIL" };
    println!(
        "{verdict}: covariance bound {}, auxiliary bound {} over {} replications",
        if report.sigma_pass {
            "holds"
        } else {
            "violated"
        },
        if report.aux_pass { "holds" } else { "violated" },
        report.replications
    );
    if report.pass {
        Ok(())
    } else {
        let mut msg = "Monte Carlo bound check failed".to_string();
        if reps < 30 {
            msg.push_str(" (with very few replications the standard-error test is unreliable)");
        }
        Err(CliError::VerifyFailed(msg))
    }
}

pub fn compare(args: &ConfigArgs, reps: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let started = io::unix_seconds();
    if reps == 0 {
        return Err(CliError::Input("--reps must be at least 1".into()));
    }
    let sc = load_scenario(args)?;
    let sol = pipeline::plan(&sc)?;
    let rows = pipeline::compare(&sc, &sol, reps, seed)?;
    let mut dir = OutputDir::create(out)?;
    let header: Vec<String> = ["method", "signal", "mean", "std", "max", "min", "events"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.signal.clone(),
                fmt(r.mean),
                fmt(r.std),
                fmt(r.max),
                fmt(r.min),
                fmt(r.events),
            ]
        })
        .collect();
    dir.csv("compare.csv", &header, &table)?;
    dir.json("solve.json", &sol.diagnostics)?;
    dir.manifest(manifest(
        "compare",
        Some(&sc),
        Some(args),
        Some(seed),
        started,
    ))?;

    println!(
        "{:<12} {:<10} {:>10} {:>10} {:>10} {:>10} {:>8}",
        "method", "signal", "mean", "std", "max", "min", "events"
    );
    for method in Method::ALL {
        for (name, _) in &sc.signals {
            if let Some(r) = pipeline::find_row(&rows, method, name) {
                println!(
                    "{:<12} {:<10} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>8.1}",
                    r.method, r.signal, r.mean, r.std, r.max, r.min, r.events
                );
            }
        }
    }
    if sol.diagnostics.converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(
            "planner did not converge; the Optimized rows use its best iterate".into(),
        ))
    }
}

#[derive(Serialize)]
struct GpDemoSummary {
    seed: u64,
    noise_var: f64,
    step: f64,
    kernels: Vec<gp::GpComparison>,
}

/// Noisy samples of a smooth signal at random times, regressed with both kernels.
pub fn gp_demo(seed: u64, out: &Path) -> Result<(), CliError> {
    const POINTS: usize = 40;
    const HORIZON: f64 = 5.0;
    const NOISE_VAR: f64 = 0.05;
    const STEP: f64 = 1e-3;
    let started = io::unix_seconds();

    let mut rng = RngStream::new(seed, 0).rng();
    let mut times: Vec<f64> = (0..POINTS)
        .map(|_| rng.random_range(0.0..HORIZON))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let noise = Normal::new(0.0, NOISE_VAR.sqrt()).expect("positive standard deviation");
    let values: Vec<f64> = times
        .iter()
        .map(|t| (1.3 * t).sin() + noise.sample(&mut rng))
        .collect();

    let mut kernels = Vec::new();
    for kind in [KernelKind::Exponential, KernelKind::Matern32] {
        let ssm = gp::build_kernel_ssm(kind, 1.0, 1.0)?;
        kernels.push(gp::compare_with_dense(
            &ssm, &times, &values, NOISE_VAR, STEP,
        )?);
    }

    let mut dir = OutputDir::create(out)?;
    let header: Vec<String> = [
        "kernel",
        "t",
        "y",
        "ssm_mean",
        "ssm_var",
        "dense_mean",
        "dense_var",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    for c in &kernels {
        let name = match c.kind {
            KernelKind::Exponential => "exponential",
            KernelKind::Matern32 => "matern32",
        };
        for i in 0..c.times.len() {
            rows.push(vec![
                name.to_string(),
                fmt(c.times[i]),
                fmt(c.values[i]),
                fmt(c.ssm_mean[i]),
                fmt(c.ssm_var[i]),
                fmt(c.dense_mean[i]),
                fmt(c.dense_var[i]),
            ]);
        }
        println!(
            "{name:<12} max |mean diff| {:.3e}, max |var diff| {:.3e}",
            c.max_mean_deviation, c.max_var_deviation
        );
    }
    dir.csv("gp_demo.csv", &header, &rows)?;
    dir.json(
        "gp_demo.json",
        &GpDemoSummary {
            seed,
            noise_var: NOISE_VAR,
            step: STEP,
            kernels,
        },
    )?;
    dir.manifest(manifest("gp-demo", None, None, Some(seed), started))?;
    Ok(())
}
