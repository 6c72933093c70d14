//! Ground-truth simulation with Poisson measurement times, Monte Carlo verification of
//! the planning bounds, baseline schedulers and run statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::sigma_bound_rhs;
use crate::error::{Error, Result};
use crate::kalman::update_cov;
use crate::linalg::{all_finite, min_eigenpair, pairwise_sum, symmetrize, Matrix, Vector};
use crate::model::{
    AuxModel, ConvexityTag, InputPlan, ProcessModel, RatePlan, Schedule, Sensor, TimeGrid,
};
use crate::ocp::{NodeView, OcpSpec};
use crate::quantize::IntensityProfile;

/// Environment variable capping the worker threads used for replications.
pub const THREADS_ENV: &str = "CDKF_SCHED_THREADS";

/// Default ratio between the grid spacing and the truth-simulation step.
pub const DEFAULT_STEP_DIVISOR: usize = 20;

/// Named random stream: identical `(seed, stream)` pairs reproduce identical draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Thread pool honoring [`THREADS_ENV`]; falls back to rayon's default sizing.
pub fn thread_pool() -> rayon::ThreadPool {
    let threads = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool construction")
}

/// Inhomogeneous Poisson arrivals by thinning a homogeneous process at the maximal rate.
pub fn sample_poisson_times<R: Rng + ?Sized>(profile: &IntensityProfile, rng: &mut R) -> Vec<f64> {
    let max = profile.max_rate();
    if !(max > 0.0) {
        return Vec::new();
    }
    let gaps = Exp::new(max).expect("positive rate");
    let mut times = Vec::new();
    let mut t = profile.t0();
    loop {
        t += gaps.sample(rng);
        if t > profile.tf() {
            break;
        }
        let u: f64 = rng.random();
        if u * max < profile.rate_at(t) {
            times.push(t);
        }
    }
    times
}

/// One Poisson realization per sensor of a rate plan.
pub fn sample_schedule<R: Rng + ?Sized>(plan: &RatePlan, rng: &mut R) -> Result<Schedule> {
    let mut times = Vec::with_capacity(plan.num_sensors());
    for s in 0..plan.num_sensors() {
        let profile = IntensityProfile::from_plan(plan, s)?;
        times.push(sample_poisson_times(&profile, rng));
    }
    Schedule::new(times, plan.grid.t0(), plan.grid.tf())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RowKind {
    Node(usize),
    PreEvent(usize),
    PostEvent(usize),
}

/// A recorded point of a simulated path.
#[derive(Clone, Debug)]
pub struct PathRow {
    pub t: f64,
    pub kind: RowKind,
    /// Empty when the latent state is not simulated.
    pub x: Vector,
    pub xi: Vector,
    pub sigma: Matrix,
}

/// Shared inputs of every event-driven simulation.
#[derive(Clone, Copy)]
pub struct SimContext<'a> {
    pub process: &'a ProcessModel,
    pub aux: &'a AuxModel,
    pub sensors: &'a [Sensor],
    pub input_plan: &'a InputPlan,
    pub grid: &'a TimeGrid,
    pub sigma0: &'a Matrix,
    pub xi0: &'a [f64],
    /// Integration substeps per shortest grid interval.
    pub step_divisor: usize,
}

struct LatentState<'r> {
    x: Vector,
    rng: &'r mut ChaCha8Rng,
    measurements: Vec<Vec<Vector>>,
}

fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

fn gaussian_factor(cov: &Matrix) -> Result<Matrix> {
    let n = cov.nrows();
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    if let Some(c) = symmetrize(cov).cholesky() {
        return Ok(c.l());
    }
    let eig = symmetrize(cov).symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min < -1e-10 {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * Matrix::from_diagonal(&roots))
}

/// Walks the horizon node by node, applying the schedule's events (Kalman covariance
/// update, auxiliary jumps, and a measurement draw when the latent state is simulated).
/// Between events, `(Σ, ξ)` follow RK4 and `x` follows Euler–Maruyama.
fn run_path(
    ctx: &SimContext,
    schedule: &Schedule,
    mut latent: Option<&mut LatentState>,
    record: &mut dyn FnMut(PathRow),
) -> Result<()> {
    let grid = ctx.grid;
    schedule.check_horizon(grid.t0(), grid.tf())?;
    if schedule.num_sensors() > ctx.sensors.len() {
        return Err(Error::Dimension(format!(
            "schedule has {} sensors, model has {}",
            schedule.num_sensors(),
            ctx.sensors.len()
        )));
    }
    if ctx.input_plan.values.len() != grid.num_intervals() {
        return Err(Error::Dimension(
            "input plan does not match the grid".into(),
        ));
    }
    let h_max = grid.min_step() / ctx.step_divisor.max(1) as f64;
    let zero_rates = vec![0.0; ctx.sensors.len()];
    let events = schedule.events();
    let mut sigma = ctx.sigma0.clone();
    let mut xi = Vector::from_column_slice(ctx.xi0);
    let mut t = grid.t0();
    let mut next = 0;
    let empty = Vector::zeros(0);
    let snapshot =
        |t: f64, kind: RowKind, latent: &Option<&mut LatentState>, xi: &Vector, sigma: &Matrix| {
            PathRow {
                t,
                kind,
                x: latent
                    .as_ref()
                    .map_or_else(|| empty.clone(), |l| l.x.clone()),
                xi: xi.clone(),
                sigma: sigma.clone(),
            }
        };
    record(snapshot(t, RowKind::Node(0), &latent, &xi, &sigma));

    for k in 0..grid.num_intervals() {
        let u = &ctx.input_plan.values[k];
        let t_end = grid.node(k + 1);
        loop {
            while next < events.len() && events[next].t <= t {
                let s = events[next].sensor;
                record(snapshot(t, RowKind::PreEvent(s), &latent, &xi, &sigma));
                let sensor = &ctx.sensors[s];
                let c = sensor.output(xi.as_slice(), t);
                let r = sensor.noise_cov(xi.as_slice(), t);
                if let Some(l) = latent.as_deref_mut() {
                    let noise = gaussian_factor(&r)? * standard_normal(l.rng, r.nrows());
                    l.measurements[s].push(&c * &l.x + noise);
                }
                sigma = update_cov(&sigma, &c, &r)?;
                if ctx.aux.n_p > 0 {
                    let g = sensor.jump(xi.as_slice(), u, t);
                    let mut block = xi.rows_mut(0, ctx.aux.n_p);
                    block += g;
                }
                record(snapshot(t, RowKind::PostEvent(s), &latent, &xi, &sigma));
                next += 1;
            }
            let stop = if next < events.len() && events[next].t < t_end {
                events[next].t
            } else {
                t_end
            };
            let span = stop - t;
            if span > 0.0 {
                let n = ((span / h_max) - 1e-9).ceil().max(1.0) as usize;
                let h = span / n as f64;
                for i in 0..n {
                    let ti = t + i as f64 * h;
                    if let Some(l) = latent.as_deref_mut() {
                        let a = ctx.process.drift(xi.as_slice(), ti);
                        let g = ctx.process.diffusion(xi.as_slice(), ti);
                        let dw = standard_normal(l.rng, g.ncols()) * h.sqrt();
                        l.x = &l.x + &a * &l.x * h + g * dw;
                    }
                    let rhs = |s: &Matrix, x: &Vector, tt: f64| -> Result<(Matrix, Vector)> {
                        let xs = x.as_slice();
                        Ok((
                            sigma_bound_rhs(s, xs, &zero_rates, ctx.sensors, ctx.process, tt)?,
                            ctx.aux.drift(xs, u, tt),
                        ))
                    };
                    let (s1, x1) = rhs(&sigma, &xi, ti)?;
                    let (s2, x2) = rhs(
                        &(&sigma + &s1 * (0.5 * h)),
                        &(&xi + &x1 * (0.5 * h)),
                        ti + 0.5 * h,
                    )?;
                    let (s3, x3) = rhs(
                        &(&sigma + &s2 * (0.5 * h)),
                        &(&xi + &x2 * (0.5 * h)),
                        ti + 0.5 * h,
                    )?;
                    let (s4, x4) = rhs(&(&sigma + &s3 * h), &(&xi + &x3 * h), ti + h)?;
                    sigma = symmetrize(&(&sigma + (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0)));
                    xi += (x1 + x2 * 2.0 + x3 * 2.0 + x4) * (h / 6.0);
                    let x_ok = latent
                        .as_ref()
                        .is_none_or(|l| l.x.iter().all(|v| v.is_finite()));
                    if !all_finite(&sigma) || !xi.iter().all(|v| v.is_finite()) || !x_ok {
                        return Err(Error::IntegrationDiverged { t: ti + h });
                    }
                }
            }
            t = stop;
            if stop == t_end {
                break;
            }
        }
        record(snapshot(t, RowKind::Node(k + 1), &latent, &xi, &sigma));
    }
    // Events exactly at the final time act after the last node row.
    while next < events.len() {
        let s = events[next].sensor;
        let u = ctx.input_plan.values.last().map_or(&[][..], Vec::as_slice);
        record(snapshot(t, RowKind::PreEvent(s), &latent, &xi, &sigma));
        let sensor = &ctx.sensors[s];
        let c = sensor.output(xi.as_slice(), t);
        let r = sensor.noise_cov(xi.as_slice(), t);
        if let Some(l) = latent.as_deref_mut() {
            let noise = gaussian_factor(&r)? * standard_normal(l.rng, r.nrows());
            l.measurements[s].push(&c * &l.x + noise);
        }
        sigma = update_cov(&sigma, &c, &r)?;
        if ctx.aux.n_p > 0 {
            let g = sensor.jump(xi.as_slice(), u, t);
            let mut block = xi.rows_mut(0, ctx.aux.n_p);
            block += g;
        }
        record(snapshot(t, RowKind::PostEvent(s), &latent, &xi, &sigma));
        next += 1;
    }
    Ok(())
}

/// Deterministic `(Σ, ξ)` path under a fixed schedule.
pub fn event_driven_path(ctx: &SimContext, schedule: &Schedule) -> Result<Vec<PathRow>> {
    let mut rows = Vec::new();
    run_path(ctx, schedule, None, &mut |r| rows.push(r))?;
    Ok(rows)
}

/// Output of [`simulate_truth`].
#[derive(Clone, Debug)]
pub struct TruthRun {
    /// Grid nodes plus pre/post rows at every event, in time order.
    pub rows: Vec<PathRow>,
    /// `measurements[s][i]` is the observation at `schedule.times[s][i]`.
    pub measurements: Vec<Vec<Vector>>,
    pub schedule: Schedule,
}

impl TruthRun {
    pub fn node_rows(&self) -> impl Iterator<Item = &PathRow> {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Node(_)))
    }

    /// Auxiliary state at `t`: the pre-event value at event times, linear interpolation
    /// between recorded rows elsewhere.
    pub fn aux_at(&self, t: f64) -> Vec<f64> {
        let idx = self.rows.partition_point(|r| r.t < t);
        if idx >= self.rows.len() {
            return self
                .rows
                .last()
                .map_or_else(Vec::new, |r| r.xi.as_slice().to_vec());
        }
        let right = &self.rows[idx];
        if right.t == t || idx == 0 {
            return right.xi.as_slice().to_vec();
        }
        // The last row recorded at the left time is the post-event state.
        let left = &self.rows[idx - 1];
        let w = (t - left.t) / (right.t - left.t);
        (&left.xi * (1.0 - w) + &right.xi * w).as_slice().to_vec()
    }
}

/// Simulates the latent state, measurements, auxiliary state and true filter covariance
/// under a given schedule. The initial state is drawn from `N(mean0, Σ0)`.
pub fn simulate_truth(
    ctx: &SimContext,
    mean0: &Vector,
    schedule: &Schedule,
    stream: RngStream,
) -> Result<TruthRun> {
    let mut rng = stream.rng();
    let x0 = mean0 + gaussian_factor(ctx.sigma0)? * standard_normal(&mut rng, mean0.len());
    let mut latent = LatentState {
        x: x0,
        rng: &mut rng,
        measurements: vec![Vec::new(); schedule.num_sensors()],
    };
    let mut rows = Vec::new();
    run_path(ctx, schedule, Some(&mut latent), &mut |r| rows.push(r))?;
    let measurements = latent.measurements;
    Ok(TruthRun {
        rows,
        measurements,
        schedule: schedule.clone(),
    })
}

/// Rejects models whose `A`, `σσᵀ`, `C_s` or `R_s` react to the perturbed auxiliary
/// state, for which the unconditional mean covariance is not the conditional one.
pub fn check_mc_precondition(ctx: &SimContext) -> Result<()> {
    let n_p = ctx.aux.n_p;
    if n_p == 0 {
        return Ok(());
    }
    let base = ctx.xi0.to_vec();
    let differs = |a: &Matrix, b: &Matrix| (a - b).amax() > 1e-12 * (1.0 + a.amax());
    for &t in &[
        ctx.grid.t0(),
        0.5 * (ctx.grid.t0() + ctx.grid.tf()),
        ctx.grid.tf(),
    ] {
        for i in 0..n_p {
            for delta in [-1.0, 0.5, 2.0] {
                let mut moved = base.clone();
                moved[i] += delta;
                if differs(&ctx.process.drift(&base, t), &ctx.process.drift(&moved, t))
                    || differs(
                        &ctx.process.noise_intensity(&base, t),
                        &ctx.process.noise_intensity(&moved, t),
                    )
                {
                    return Err(Error::Precondition(format!(
                        "process dynamics depend on perturbed auxiliary component {i}; the mean covariance is not bounded by this check"
                    )));
                }
                for s in ctx.sensors {
                    if differs(&s.output(&base, t), &s.output(&moved, t))
                        || differs(&s.noise_cov(&base, t), &s.noise_cov(&moved, t))
                    {
                        return Err(Error::Precondition(format!(
                            "sensor {} output or noise depends on perturbed auxiliary component {i}; the mean covariance is not bounded by this check",
                            s.id
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Per-node result of the Monte Carlo bound check.
#[derive(Clone, Debug, Serialize)]
pub struct McNode {
    pub t: f64,
    /// Minimum eigenvalue of `Σ̂ − mean(Σ)`.
    pub sigma_margin: f64,
    pub sigma_se: f64,
    /// Signed gap `ξ̂_p − mean(ξ_p)` per perturbed component.
    pub aux_gap: Vec<f64>,
    pub aux_se: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct McReport {
    pub replications: usize,
    pub convexity: String,
    pub nodes: Vec<McNode>,
    pub sigma_pass: bool,
    pub aux_pass: bool,
    pub pass: bool,
}

/// Absolute slack granted for integration error between the bound and the sampled paths.
pub const MC_INTEGRATION_TOL: f64 = 1e-8;

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len();
    let mean = pairwise_sum(values) / m as f64;
    if m < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
    let var = pairwise_sum(&dev) / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Samples `replications` schedules from the rate plan and compares the average sampled
/// covariance and perturbed auxiliary state with the planning bounds at every grid node.
///
/// The check passes when `λ_min(Σ̂ − mean Σ) ≥ −3·SE` at every node (SE taken along the
/// minimizing eigenvector) and the auxiliary gaps have the sign implied by the convexity
/// tag within three standard errors.
pub fn monte_carlo_bound_check(
    ctx: &SimContext,
    rate_plan: &RatePlan,
    bound_sigma: &[Matrix],
    bound_xi: &[Vector],
    replications: usize,
    seed: u64,
) -> Result<McReport> {
    check_mc_precondition(ctx)?;
    if replications == 0 {
        return Err(Error::InvalidParameter(
            "at least one replication is required".into(),
        ));
    }
    let nodes = ctx.grid.len();
    if bound_sigma.len() != nodes || bound_xi.len() != nodes {
        return Err(Error::Dimension(
            "bound trajectory does not match the grid".into(),
        ));
    }
    let pool = thread_pool();
    let paths: Vec<Result<Vec<(Matrix, Vector)>>> = pool.install(|| {
        (0..replications)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngStream::new(seed, r as u64).rng();
                let schedule = sample_schedule(rate_plan, &mut rng)?;
                let mut out = Vec::with_capacity(nodes);
                run_path(ctx, &schedule, None, &mut |row| {
                    if let RowKind::Node(_) = row.kind {
                        out.push((row.sigma, row.xi));
                    }
                })?;
                Ok(out)
            })
            .collect()
    });
    let paths: Vec<Vec<(Matrix, Vector)>> = paths.into_iter().collect::<Result<_>>()?;

    let n = ctx.sigma0.nrows();
    let n_p = ctx.aux.n_p;
    let mut report_nodes = Vec::with_capacity(nodes);
    let mut sigma_pass = true;
    let mut aux_pass = true;
    for k in 0..nodes {
        let mut mean = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let vals: Vec<f64> = paths.iter().map(|p| p[k].0[(i, j)]).collect();
                mean[(i, j)] = pairwise_sum(&vals) / replications as f64;
            }
        }
        let (margin, v) = min_eigenpair(&(&bound_sigma[k] - &mean));
        let projected: Vec<f64> = paths
            .iter()
            .map(|p| (v.transpose() * &p[k].0 * &v)[(0, 0)])
            .collect();
        let (_, sigma_se) = mean_and_se(&projected);
        if margin < -3.0 * sigma_se - MC_INTEGRATION_TOL {
            sigma_pass = false;
        }
        let mut aux_gap = Vec::with_capacity(n_p);
        let mut aux_se = Vec::with_capacity(n_p);
        for (c, bound) in bound_xi[k].iter().enumerate().take(n_p) {
            let vals: Vec<f64> = paths.iter().map(|p| p[k].1[c]).collect();
            let (m, se) = mean_and_se(&vals);
            let gap = bound - m;
            let slack = 3.0 * se + MC_INTEGRATION_TOL;
            let ok = match ctx.aux.convexity {
                ConvexityTag::Affine => gap.abs() <= slack,
                ConvexityTag::Concave => gap >= -slack,
                ConvexityTag::Convex => gap <= slack,
                ConvexityTag::None => true,
            };
            aux_pass &= ok;
            aux_gap.push(gap);
            aux_se.push(se);
        }
        report_nodes.push(McNode {
            t: ctx.grid.node(k),
            sigma_margin: margin,
            sigma_se,
            aux_gap,
            aux_se,
        });
    }
    Ok(McReport {
        replications,
        convexity: format!("{:?}", ctx.aux.convexity).to_lowercase(),
        nodes: report_nodes,
        sigma_pass,
        aux_pass,
        pass: sigma_pass && aux_pass,
    })
}

/// Constant-rate Poisson baseline with `n_o / S` expected events per sensor over the horizon.
pub fn random_schedule<R: Rng + ?Sized>(
    sensors: usize,
    grid: &TimeGrid,
    n_o: usize,
    rng: &mut R,
) -> Result<Schedule> {
    if sensors == 0 {
        return Ok(Schedule::empty(0));
    }
    let horizon = grid.tf() - grid.t0();
    let rate = n_o as f64 / (sensors as f64 * horizon);
    let plan = RatePlan::constant(grid.clone(), &vec![rate; sensors])?;
    sample_schedule(&plan, rng)
}

/// Scoring inputs for the greedy baseline.
pub struct GreedyConfig<'a> {
    /// Per-sensor cost, in trace units.
    pub costs: Vec<f64>,
    /// Weight on the summed violation of `constraints` right after a measurement.
    pub violation_penalty: f64,
    /// Running constraints (`≤ 0` feasible) checked on the post-measurement state.
    pub constraints: Vec<&'a PostConstraint>,
}

/// A constraint on `(ξ, Σ, t)`, feasible when `≤ 0`.
pub type PostConstraint = dyn Fn(&[f64], &Matrix, f64) -> f64;

/// At every grid node, fires the sensor with the largest positive score
/// `tr Σ⁻ − tr Σ⁺_s − cost_s − penalty · violation_s`; ties go to the lower id.
pub fn greedy_schedule(ctx: &SimContext, cfg: &GreedyConfig) -> Result<Schedule> {
    let grid = ctx.grid;
    let s_count = ctx.sensors.len();
    if cfg.costs.len() != s_count {
        return Err(Error::Dimension(format!(
            "{} greedy costs for {s_count} sensors",
            cfg.costs.len()
        )));
    }
    let mut times = vec![Vec::new(); s_count];
    let mut sigma = ctx.sigma0.clone();
    let mut xi = Vector::from_column_slice(ctx.xi0);
    for k in 0..grid.len() {
        let t = grid.node(k);
        if k > 0 {
            // Advance one interval with no events.
            let sub_grid = TimeGrid::new(vec![grid.node(k - 1), t])?;
            let inputs = InputPlan {
                dim: ctx.input_plan.dim,
                values: vec![ctx.input_plan.values[k - 1].clone()],
            };
            let xi_vec = xi.as_slice().to_vec();
            let sub = SimContext {
                input_plan: &inputs,
                grid: &sub_grid,
                sigma0: &sigma,
                xi0: &xi_vec,
                step_divisor: ctx.step_divisor,
                ..*ctx
            };
            let rows = event_driven_path(&sub, &Schedule::empty(s_count))?;
            let last = rows.last().expect("at least one row");
            sigma = last.sigma.clone();
            xi = last.xi.clone();
        }
        let u = if k < grid.num_intervals() {
            &ctx.input_plan.values[k]
        } else {
            ctx.input_plan.values.last().expect("non-empty plan")
        };
        let before = sigma.trace();
        let mut best: Option<(usize, f64, Matrix, Vector)> = None;
        for (s, sensor) in ctx.sensors.iter().enumerate() {
            let c = sensor.output(xi.as_slice(), t);
            let r = sensor.noise_cov(xi.as_slice(), t);
            let updated = update_cov(&sigma, &c, &r)?;
            let mut xi_after = xi.clone();
            if ctx.aux.n_p > 0 {
                let g = sensor.jump(xi.as_slice(), u, t);
                let mut block = xi_after.rows_mut(0, ctx.aux.n_p);
                block += g;
            }
            let violation: f64 = cfg
                .constraints
                .iter()
                .map(|g| g(xi_after.as_slice(), &updated, t).max(0.0))
                .sum();
            let score = before - updated.trace() - cfg.costs[s] - cfg.violation_penalty * violation;
            if score > 0.0 && best.as_ref().is_none_or(|b| score > b.1) {
                best = Some((s, score, updated, xi_after));
            }
        }
        if let Some((s, _, updated, xi_after)) = best {
            times[s].push(t);
            sigma = updated;
            xi = xi_after;
        }
    }
    Schedule::new(times, grid.t0(), grid.tf())
}

/// Deterministic penalized cost of a schedule: the running cost with zero rates and slack
/// along the event-driven path (left rule over grid nodes), the terminal cost, and
/// `penalty` times the summed positive parts of the running and terminal constraints.
pub fn penalized_schedule_cost(
    ctx: &SimContext,
    spec: &OcpSpec,
    schedule: &Schedule,
    penalty: f64,
) -> Result<f64> {
    let rows = event_driven_path(ctx, schedule)?;
    let node_rows: Vec<&PathRow> = rows
        .iter()
        .filter(|r| matches!(r.kind, RowKind::Node(_)))
        .collect();
    let zero_rates = vec![0.0; ctx.sensors.len()];
    let zero_slack = vec![0.0; spec.slack_dim];
    let grid = ctx.grid;
    let mut cost = 0.0;
    let mut violation = 0.0;
    let last_input = ctx.input_plan.values.last().cloned().unwrap_or_default();
    for (k, row) in node_rows.iter().enumerate() {
        let input = if k < grid.num_intervals() {
            ctx.input_plan.values[k].as_slice()
        } else {
            last_input.as_slice()
        };
        let view = NodeView {
            k,
            t: row.t,
            xi: row.xi.as_slice(),
            sigma: &row.sigma,
            input,
            rates: &zero_rates,
            slack: &zero_slack,
        };
        if k + 1 < node_rows.len() {
            let h = grid.step(k);
            cost += h * (spec.running_cost)(&view);
            for c in spec
                .running_constraints
                .iter()
                .filter(|c| c.active_at(row.t))
            {
                violation += h * (c.eval)(&view).max(0.0);
            }
        } else {
            cost += spec.terminal_cost.as_ref().map_or(0.0, |f| f(&view));
            for c in &spec.terminal_constraints {
                violation += (c.eval)(&view).max(0.0);
            }
        }
    }
    Ok(cost + penalty * violation)
}

/// Samples `k` schedules from the plan and keeps the one with the smallest evaluator value
/// (the earliest sample on ties).
pub fn m_optimized_schedule<R: Rng + ?Sized>(
    rate_plan: &RatePlan,
    k: usize,
    evaluator: &dyn Fn(&Schedule) -> Result<f64>,
    rng: &mut R,
) -> Result<Schedule> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "M-Optimized needs at least one realization".into(),
        ));
    }
    let mut best: Option<(f64, Schedule)> = None;
    for _ in 0..k {
        let candidate = sample_schedule(rate_plan, rng)?;
        let value = evaluator(&candidate)?;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, candidate));
        }
    }
    Ok(best.expect("k ≥ 1").1)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SignalStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunStats {
    pub signals: Vec<SignalStats>,
}

impl RunStats {
    pub fn get(&self, name: &str) -> Option<&SignalStats> {
        self.signals.iter().find(|s| s.name == name)
    }
}

/// Mean, population standard deviation, maximum and minimum of each named signal.
pub fn evaluate_run(signals: &[(&str, &[f64])]) -> Result<RunStats> {
    let mut out = Vec::with_capacity(signals.len());
    for (name, values) in signals {
        if values.is_empty() {
            return Err(Error::InvalidParameter(format!("signal {name} is empty")));
        }
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        let std = (pairwise_sum(&dev) / n).sqrt();
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(SignalStats {
            name: name.to_string(),
            mean,
            std,
            max,
            min,
        });
    }
    Ok(RunStats { signals: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{propagate_bounds, BoundOptions};
    use std::sync::Arc;

    fn scalar_setup() -> (ProcessModel, AuxModel, Vec<Sensor>, TimeGrid) {
        let process = ProcessModel::constant(
            Matrix::zeros(1, 1),
            Matrix::from_element(1, 1, 0.5_f64.sqrt()),
        );
        let sensor = Sensor::constant(1, Matrix::identity(1, 1), Matrix::identity(1, 1));
        (
            process,
            AuxModel::none(),
            vec![sensor],
            TimeGrid::uniform(0.0, 1.0, 11).unwrap(),
        )
    }

    fn ctx<'a>(
        process: &'a ProcessModel,
        aux: &'a AuxModel,
        sensors: &'a [Sensor],
        grid: &'a TimeGrid,
        inputs: &'a InputPlan,
        sigma0: &'a Matrix,
        xi0: &'a [f64],
    ) -> SimContext<'a> {
        SimContext {
            process,
            aux,
            sensors,
            input_plan: inputs,
            grid,
            sigma0,
            xi0,
            step_divisor: DEFAULT_STEP_DIVISOR,
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4)
            .map(|_| RngStream::new(7, 1).rng().random())
            .collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut r1 = RngStream::new(7, 1).rng();
        let mut r2 = RngStream::new(7, 2).rng();
        let x: Vec<u64> = (0..4).map(|_| r1.random()).collect();
        let y: Vec<u64> = (0..4).map(|_| r2.random()).collect();
        assert_ne!(x, y);
    }

    #[test]
    fn zero_rate_gives_no_arrivals() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let profile = IntensityProfile::new(&grid, vec![0.0, 0.0]).unwrap();
        assert!(sample_poisson_times(&profile, &mut RngStream::new(1, 0).rng()).is_empty());
    }

    #[test]
    fn constant_rate_count_matches_poisson_mean() {
        let grid = TimeGrid::uniform(0.0, 2.0, 2).unwrap();
        let profile = IntensityProfile::new(&grid, vec![5.0]).unwrap();
        let mut rng = RngStream::new(3, 0).rng();
        let reps = 10_000;
        let total: usize = (0..reps)
            .map(|_| sample_poisson_times(&profile, &mut rng).len())
            .sum();
        let mean = total as f64 / reps as f64;
        assert!(
            (mean - 10.0).abs() < 3.0 * (10.0_f64 / reps as f64).sqrt(),
            "mean {mean}"
        );
    }

    #[test]
    fn zero_rate_half_excluded() {
        let grid = TimeGrid::uniform(0.0, 1.0, 3).unwrap();
        let profile = IntensityProfile::new(&grid, vec![10.0, 0.0]).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..200 {
            let times = sample_poisson_times(&profile, &mut rng);
            assert!(times.iter().all(|&t| t < 0.5));
            assert!(times.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn noiseless_truth_follows_linear_flow() {
        let process = ProcessModel::constant(Matrix::from_element(1, 1, -1.0), Matrix::zeros(1, 1));
        let aux = AuxModel::none();
        let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let inputs = InputPlan::empty(10);
        let sigma0 = Matrix::zeros(1, 1);
        let c = ctx(&process, &aux, &[], &grid, &inputs, &sigma0, &[]);
        let run = simulate_truth(
            &c,
            &Vector::from_element(1, 2.0),
            &Schedule::empty(0),
            RngStream::new(1, 0),
        )
        .unwrap();
        let last = run.node_rows().last().unwrap();
        // Euler with step 1/200 on x' = −x
        assert!((last.x[0] - 2.0 * (-1.0_f64).exp()).abs() < 5e-3);
    }

    #[test]
    fn single_event_halves_unit_covariance() {
        let process = ProcessModel::constant(Matrix::zeros(1, 1), Matrix::zeros(1, 1));
        let aux = AuxModel::none();
        let sensors = vec![Sensor::constant(
            1,
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
        )];
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let inputs = InputPlan::empty(4);
        let sigma0 = Matrix::identity(1, 1);
        let c = ctx(&process, &aux, &sensors, &grid, &inputs, &sigma0, &[]);
        let schedule = Schedule::new(vec![vec![0.3]], 0.0, 1.0).unwrap();
        let run = simulate_truth(&c, &Vector::zeros(1), &schedule, RngStream::new(2, 0)).unwrap();
        let pre = run
            .rows
            .iter()
            .find(|r| r.kind == RowKind::PreEvent(0))
            .unwrap();
        let post = run
            .rows
            .iter()
            .find(|r| r.kind == RowKind::PostEvent(0))
            .unwrap();
        assert!((pre.sigma[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((post.sigma[(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(run.measurements[0].len(), 1);
    }

    #[test]
    fn event_update_equals_kalman_update() {
        let (process, aux, sensors, grid) = scalar_setup();
        let inputs = InputPlan::empty(10);
        let sigma0 = Matrix::identity(1, 1);
        let c = ctx(&process, &aux, &sensors, &grid, &inputs, &sigma0, &[]);
        let schedule = Schedule::new(vec![vec![0.17, 0.5, 0.83]], 0.0, 1.0).unwrap();
        let run = simulate_truth(&c, &Vector::zeros(1), &schedule, RngStream::new(2, 0)).unwrap();
        for w in run.rows.windows(2) {
            if let (RowKind::PreEvent(s), RowKind::PostEvent(_)) = (w[0].kind, w[1].kind) {
                let c = sensors[s].output(&[], w[0].t);
                let r = sensors[s].noise_cov(&[], w[0].t);
                let expected = update_cov(&w[0].sigma, &c, &r).unwrap();
                assert!((expected - &w[1].sigma).amax() <= 1e-12);
            }
        }
    }

    fn energy_aux() -> AuxModel {
        AuxModel::new(
            1,
            1,
            0,
            Arc::new(|_, _, _| Vector::from_element(1, 1.0)),
            Arc::new(|_, _, _| Vector::zeros(0)),
            ConvexityTag::Affine,
        )
        .unwrap()
    }

    #[test]
    fn jumps_decrement_energy_exactly() {
        let process = ProcessModel::constant(Matrix::zeros(1, 1), Matrix::identity(1, 1));
        let aux = energy_aux();
        let sensors = vec![Sensor::new(
            1,
            1,
            Arc::new(|_, _| Matrix::identity(1, 1)),
            Arc::new(|_, _| Matrix::identity(1, 1)),
            Arc::new(|_, _, _| Vector::from_element(1, -0.7)),
        )];
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let inputs = InputPlan::empty(4);
        let sigma0 = Matrix::identity(1, 1);
        let xi0 = [3.0];
        let c = ctx(&process, &aux, &sensors, &grid, &inputs, &sigma0, &xi0);
        let schedule = Schedule::new(vec![vec![0.4]], 0.0, 1.0).unwrap();
        let run = simulate_truth(&c, &Vector::zeros(1), &schedule, RngStream::new(2, 0)).unwrap();
        let pre = run
            .rows
            .iter()
            .find(|r| r.kind == RowKind::PreEvent(0))
            .unwrap();
        let post = run
            .rows
            .iter()
            .find(|r| r.kind == RowKind::PostEvent(0))
            .unwrap();
        assert_eq!(post.xi[0], pre.xi[0] - 0.7);
    }

    #[test]
    fn zero_rate_monte_carlo_matches_bound() {
        let (process, aux, sensors, grid) = scalar_setup();
        let inputs = InputPlan::empty(10);
        let sigma0 = Matrix::identity(1, 1);
        let c = ctx(&process, &aux, &sensors, &grid, &inputs, &sigma0, &[]);
        let plan = RatePlan::zeros(grid.clone(), 1);
        let bounds = propagate_bounds(
            &process,
            &aux,
            &sensors,
            &plan,
            &inputs,
            &grid,
            &sigma0,
            &[],
            BoundOptions::default(),
        )
        .unwrap();
        let report =
            monte_carlo_bound_check(&c, &plan, &bounds.sigma_hat, &bounds.xi_hat, 3, 1).unwrap();
        assert!(report.pass);
        assert!(report.nodes.iter().all(|n| n.sigma_margin.abs() < 1e-6));
    }

    #[test]
    fn precondition_violation_is_refused() {
        let process = ProcessModel::constant(Matrix::zeros(1, 1), Matrix::identity(1, 1));
        let aux = energy_aux();
        let sensors = vec![Sensor::new(
            1,
            1,
            Arc::new(|_, _| Matrix::identity(1, 1)),
            Arc::new(|xi: &[f64], _| Matrix::from_element(1, 1, 1.0 + xi[0] * xi[0])),
            Arc::new(|_, _, _| Vector::from_element(1, -0.1)),
        )];
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let inputs = InputPlan::empty(4);
        let sigma0 = Matrix::identity(1, 1);
        let xi0 = [1.0];
        let c = ctx(&process, &aux, &sensors, &grid, &inputs, &sigma0, &xi0);
        let plan = RatePlan::zeros(grid.clone(), 1);
        let r = monte_carlo_bound_check(
            &c,
            &plan,
            &vec![sigma0.clone(); 5],
            &vec![Vector::zeros(1); 5],
            2,
            1,
        );
        assert!(matches!(r, Err(Error::Precondition(_))));
    }

    #[test]
    fn random_baseline_counts() {
        let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let reps = 1000;
        let mut totals = [0usize; 2];
        for _ in 0..reps {
            let s = random_schedule(2, &grid, 100, &mut rng).unwrap();
            totals[0] += s.times[0].len();
            totals[1] += s.times[1].len();
        }
        for total in totals {
            let mean = total as f64 / reps as f64;
            assert!(
                (mean - 50.0).abs() < 3.0 * (50.0_f64 / reps as f64).sqrt(),
                "mean {mean}"
            );
        }
        assert_eq!(
            random_schedule(2, &grid, 0, &mut rng)
                .unwrap()
                .total_events(),
            0
        );
        let a = random_schedule(2, &grid, 10, &mut RngStream::new(4, 4).rng()).unwrap();
        let b = random_schedule(2, &grid, 10, &mut RngStream::new(4, 4).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn greedy_rules() {
        let (process, aux, _, grid) = scalar_setup();
        let inputs = InputPlan::empty(10);
        let sigma0 = Matrix::identity(1, 1);
        let one = vec![Sensor::constant(
            1,
            Matrix::identity(1, 1),
            Matrix::identity(1, 1),
        )];
        let c = ctx(&process, &aux, &one, &grid, &inputs, &sigma0, &[]);
        let prohibitive = GreedyConfig {
            costs: vec![100.0],
            violation_penalty: 0.0,
            constraints: vec![],
        };
        assert_eq!(greedy_schedule(&c, &prohibitive).unwrap().total_events(), 0);
        let free = GreedyConfig {
            costs: vec![0.0],
            violation_penalty: 0.0,
            constraints: vec![],
        };
        assert_eq!(
            greedy_schedule(&c, &free).unwrap().times[0].len(),
            grid.len()
        );

        let two = vec![
            Sensor::constant(1, Matrix::identity(1, 1), Matrix::identity(1, 1)),
            Sensor::constant(2, Matrix::identity(1, 1), Matrix::identity(1, 1)),
        ];
        let c2 = ctx(&process, &aux, &two, &grid, &inputs, &sigma0, &[]);
        let tie = GreedyConfig {
            costs: vec![0.0, 0.0],
            violation_penalty: 0.0,
            constraints: vec![],
        };
        let s = greedy_schedule(&c2, &tie).unwrap();
        assert_eq!(s.times[0].len(), grid.len());
        assert!(s.times[1].is_empty());
    }

    #[test]
    fn m_optimized_rules() {
        let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
        let plan = RatePlan::constant(grid, &[3.0]).unwrap();
        let first = sample_schedule(&plan, &mut RngStream::new(9, 0).rng()).unwrap();
        let single = m_optimized_schedule(
            &plan,
            1,
            &|s| Ok(s.total_events() as f64),
            &mut RngStream::new(9, 0).rng(),
        )
        .unwrap();
        assert_eq!(single, first);
        let constant =
            m_optimized_schedule(&plan, 10, &|_| Ok(1.0), &mut RngStream::new(9, 0).rng()).unwrap();
        assert_eq!(constant, first);
    }

    #[test]
    fn run_statistics() {
        let stats = evaluate_run(&[("c", &[2.0, 2.0, 2.0]), ("v", &[1.0, 3.0])]).unwrap();
        assert_eq!(
            (
                stats.signals[0].mean,
                stats.signals[0].std,
                stats.signals[0].max
            ),
            (2.0, 0.0, 2.0)
        );
        assert_eq!(
            (
                stats.signals[1].mean,
                stats.signals[1].std,
                stats.signals[1].max
            ),
            (2.0, 1.0, 3.0)
        );
        assert!(evaluate_run(&[("e", &[])]).is_err());
    }
}
