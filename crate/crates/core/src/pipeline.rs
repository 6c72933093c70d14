//! End-to-end operations on an assembled [`Scenario`]: plan rates, quantize them into a
//! schedule, simulate, verify the bounds and compare against baseline schedulers.

use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{propagate_bounds, BoundOptions, BoundTrajectory};
use crate::error::Result;
use crate::kalman::{filter_pass, rts_smooth, FilterTrajectory, SmoothedTrajectory};
use crate::model::{GaussianBelief, InputPlan, RatePlan, Schedule};
use crate::ocp::{extract_plan, solve_nlp, transcribe, OcpSolution, TranscribedOcp};
use crate::quantize::quantize_plan;
use crate::scenarios::Scenario;
use crate::simulate::{
    greedy_schedule, m_optimized_schedule, monte_carlo_bound_check, penalized_schedule_cost,
    random_schedule, simulate_truth, thread_pool, GreedyConfig, McReport, PostConstraint,
    RngStream, RowKind, RunStats, SimContext, TruthRun, DEFAULT_STEP_DIVISOR,
};

/// Stream namespaces keep truth noise, random baselines and M-Optimized sampling independent.
const RANDOM_STREAM_BASE: u64 = 1 << 32;
const M_OPT_STREAM_BASE: u64 = 2 << 32;

pub fn transcribe_scenario(sc: &Scenario) -> Result<TranscribedOcp> {
    transcribe(
        sc.spec.clone(),
        sc.process.clone(),
        sc.aux.clone(),
        sc.sensors.clone(),
        sc.grid.clone(),
        sc.sigma0.clone(),
        sc.xi0.clone(),
    )
}

/// Solves the scenario's rate/input planning problem from the default initial guess.
pub fn plan(sc: &Scenario) -> Result<OcpSolution> {
    let ocp = transcribe_scenario(sc)?;
    let init = ocp.initial_guess()?;
    Ok(solve_nlp(&ocp, &init, &sc.solver))
}

pub fn plans(sol: &OcpSolution) -> (RatePlan, InputPlan) {
    extract_plan(sol)
}

/// Deterministic measurement times from a rate plan.
pub fn quantized_schedule(plan: &RatePlan) -> Result<Schedule> {
    Schedule::new(quantize_plan(plan)?, plan.grid.t0(), plan.grid.tf())
}

pub fn context<'a>(sc: &'a Scenario, inputs: &'a InputPlan) -> SimContext<'a> {
    SimContext {
        process: &sc.process,
        aux: &sc.aux,
        sensors: &sc.sensors,
        input_plan: inputs,
        grid: &sc.grid,
        sigma0: &sc.sigma0,
        xi0: &sc.xi0,
        step_divisor: DEFAULT_STEP_DIVISOR,
    }
}

pub fn filter_step(sc: &Scenario) -> f64 {
    sc.grid.min_step() / DEFAULT_STEP_DIVISOR as f64
}

#[derive(Clone, Debug)]
pub struct SimulationOutput {
    pub truth: TruthRun,
    pub filter: FilterTrajectory,
    pub smooth: SmoothedTrajectory,
    pub stats: RunStats,
}

/// Node-row statistics of the scenario's signals along a simulated path.
pub fn run_stats(sc: &Scenario, truth: &TruthRun) -> Result<RunStats> {
    let series: Vec<(String, Vec<f64>)> = sc
        .signals
        .iter()
        .map(|(name, signal)| {
            let values = truth
                .node_rows()
                .map(|r| sc.signal_value(signal, r.xi.as_slice(), &r.sigma))
                .collect();
            (name.clone(), values)
        })
        .collect();
    let refs: Vec<(&str, &[f64])> = series
        .iter()
        .map(|(n, v)| (n.as_str(), v.as_slice()))
        .collect();
    crate::simulate::evaluate_run(&refs)
}

/// Simulates the truth under `schedule`, then runs the filter and smoother on the
/// synthetic measurements.
pub fn simulate(
    sc: &Scenario,
    inputs: &InputPlan,
    schedule: &Schedule,
    seed: u64,
) -> Result<SimulationOutput> {
    let ctx = context(sc, inputs);
    let truth = simulate_truth(&ctx, &sc.mean0, schedule, RngStream::new(seed, 0))?;
    let aux_traj = |t: f64| truth.aux_at(t);
    let prior = GaussianBelief::new(sc.mean0.clone(), sc.sigma0.clone())?;
    let step = filter_step(sc);
    let filter = filter_pass(
        &sc.process,
        &sc.sensors,
        &aux_traj,
        schedule,
        &truth.measurements,
        &prior,
        &sc.grid,
        step,
    )?;
    let smooth = rts_smooth(&filter, &sc.process, &aux_traj, step)?;
    let stats = run_stats(sc, &truth)?;
    Ok(SimulationOutput {
        truth,
        filter,
        smooth,
        stats,
    })
}

/// Bound trajectory of a plan (RK4 with the default substeps).
pub fn bounds_for(sc: &Scenario, rates: &RatePlan, inputs: &InputPlan) -> Result<BoundTrajectory> {
    propagate_bounds(
        &sc.process,
        &sc.aux,
        &sc.sensors,
        rates,
        inputs,
        &sc.grid,
        &sc.sigma0,
        &sc.xi0,
        BoundOptions::default(),
    )
}

pub fn verify(
    sc: &Scenario,
    rates: &RatePlan,
    inputs: &InputPlan,
    replications: usize,
    seed: u64,
) -> Result<McReport> {
    let ctx = context(sc, inputs);
    crate::simulate::check_mc_precondition(&ctx)?;
    let bounds = bounds_for(sc, rates, inputs)?;
    monte_carlo_bound_check(
        &ctx,
        rates,
        &bounds.sigma_hat,
        &bounds.xi_hat,
        replications,
        seed,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    Optimized,
    MOptimized,
    Greedy,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Optimized,
        Method::MOptimized,
        Method::Greedy,
        Method::Random,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Optimized => "Optimized",
            Method::MOptimized => "M-Optimized",
            Method::Greedy => "Greedy",
            Method::Random => "Random",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub signal: String,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    /// Mean number of measurements per replication.
    pub events: f64,
}

/// Runs every scheduling method for `replications` seeded replications (identical truth
/// noise streams across methods) and summarizes each signal over all node samples.
pub fn compare(
    sc: &Scenario,
    sol: &OcpSolution,
    replications: usize,
    seed: u64,
) -> Result<Vec<CompareRow>> {
    let (rates, inputs) = extract_plan(sol);
    let ctx = context(sc, &inputs);
    let optimized = quantized_schedule(&rates)?;
    let constraint_refs: Vec<&PostConstraint> = sc
        .greedy_constraints
        .iter()
        .map(|c| c.as_ref() as &PostConstraint)
        .collect();
    let greedy = greedy_schedule(
        &ctx,
        &GreedyConfig {
            costs: sc.greedy_costs.clone(),
            violation_penalty: sc.greedy_penalty,
            constraints: constraint_refs,
        },
    )?;
    let n_o = sc.grid.len();
    let sensors = sc.sensors.len();

    let pool = thread_pool();
    let per_rep: Vec<Result<Vec<(Method, TruthRun)>>> = pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let r = r as u64;
                let evaluator = |s: &Schedule| {
                    penalized_schedule_cost(&ctx, &sc.spec, s, sc.m_optimized_penalty)
                };
                let m_opt = m_optimized_schedule(
                    &rates,
                    sc.m_optimized_samples,
                    &evaluator,
                    &mut RngStream::new(seed, M_OPT_STREAM_BASE + r).rng(),
                )?;
                let random = random_schedule(
                    sensors,
                    &sc.grid,
                    n_o,
                    &mut RngStream::new(seed, RANDOM_STREAM_BASE + r).rng(),
                )?;
                let mut out = Vec::with_capacity(4);
                for (method, schedule) in [
                    (Method::Optimized, &optimized),
                    (Method::MOptimized, &m_opt),
                    (Method::Greedy, &greedy),
                    (Method::Random, &random),
                ] {
                    out.push((
                        method,
                        simulate_truth(&ctx, &sc.mean0, schedule, RngStream::new(seed, r))?,
                    ));
                }
                Ok(out)
            })
            .collect()
    });
    let per_rep: Vec<Vec<(Method, TruthRun)>> = per_rep.into_iter().collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (mi, method) in Method::ALL.iter().enumerate() {
        let events = per_rep
            .iter()
            .map(|runs| runs[mi].1.schedule.total_events() as f64)
            .sum::<f64>()
            / replications.max(1) as f64;
        for (name, signal) in &sc.signals {
            let values: Vec<f64> = per_rep
                .iter()
                .flat_map(|runs| {
                    runs[mi]
                        .1
                        .rows
                        .iter()
                        .filter(|row| matches!(row.kind, RowKind::Node(_)))
                        .map(|row| sc.signal_value(signal, row.xi.as_slice(), &row.sigma))
                        .collect::<Vec<_>>()
                })
                .collect();
            let stats = crate::simulate::evaluate_run(&[(name.as_str(), &values)])?;
            let s = &stats.signals[0];
            rows.push(CompareRow {
                method: method.label().to_string(),
                signal: name.clone(),
                mean: s.mean,
                std: s.std,
                max: s.max,
                min: s.min,
                events,
            });
        }
    }
    Ok(rows)
}

/// Rows for a method/signal pair.
pub fn find_row<'a>(
    rows: &'a [CompareRow],
    method: Method,
    signal: &str,
) -> Option<&'a CompareRow> {
    rows.iter()
        .find(|r| r.method == method.label() && r.signal == signal)
}
