//! Continuous-discrete Kalman filter: RK4 moment prediction, measurement updates,
//! the forward filtering sweep and the Rauch-Tung-Striebel smoother.

use crate::error::{Error, Result};
use crate::linalg::{all_finite, symmetrize, Matrix, Vector};
use crate::model::{GaussianBelief, ProcessModel, Schedule, Sensor, TimeGrid};

/// Innovation covariances with a condition number above this are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// `A Σ + Σ Aᵀ + Q`.
pub fn lyapunov_rhs(a: &Matrix, cov: &Matrix, q: &Matrix) -> Matrix {
    let a_cov = a * cov;
    &a_cov + a_cov.transpose() + q
}

fn substeps(span: f64, step: f64) -> usize {
    if span <= 0.0 {
        0
    } else {
        ((span / step) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Integrates the prediction moments `dμ/dt = A μ`, `dΣ/dt = A Σ + Σ Aᵀ + σ σᵀ`
/// over `[t_start, t_end]` with fixed-step RK4, symmetrizing the covariance each step.
pub fn predict(
    belief: &GaussianBelief,
    process: &ProcessModel,
    aux_traj: &dyn Fn(f64) -> Vec<f64>,
    t_start: f64,
    t_end: f64,
    step: f64,
) -> Result<GaussianBelief> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prediction step must be positive, got {step}"
        )));
    }
    if t_end < t_start {
        return Err(Error::InvalidParameter(format!(
            "t_end {t_end} precedes t_start {t_start}"
        )));
    }
    let (mean, cov) = predict_moments(
        &belief.mean,
        &belief.cov,
        process,
        aux_traj,
        t_start,
        t_end,
        step,
    )?;
    GaussianBelief::new(mean, cov)
}

/// RK4 propagation of raw moments; shared by the filter and the simulators.
pub fn predict_moments(
    mean: &Vector,
    cov: &Matrix,
    process: &ProcessModel,
    aux_traj: &dyn Fn(f64) -> Vec<f64>,
    t_start: f64,
    t_end: f64,
    step: f64,
) -> Result<(Vector, Matrix)> {
    let n_steps = substeps(t_end - t_start, step);
    let mut mu = mean.clone();
    let mut sigma = cov.clone();
    if n_steps == 0 {
        return Ok((mu, sigma));
    }
    let h = (t_end - t_start) / n_steps as f64;
    for i in 0..n_steps {
        let t = t_start + i as f64 * h;
        let eval = |tt: f64| {
            let xi = aux_traj(tt);
            (process.drift(&xi, tt), process.noise_intensity(&xi, tt))
        };
        let (a0, q0) = eval(t);
        let (a1, q1) = eval(t + 0.5 * h);
        let (a2, q2) = eval(t + h);

        let km1 = &a0 * &mu;
        let kc1 = lyapunov_rhs(&a0, &sigma, &q0);
        let mu2 = &mu + &km1 * (0.5 * h);
        let s2 = &sigma + &kc1 * (0.5 * h);
        let km2 = &a1 * &mu2;
        let kc2 = lyapunov_rhs(&a1, &s2, &q1);
        let mu3 = &mu + &km2 * (0.5 * h);
        let s3 = &sigma + &kc2 * (0.5 * h);
        let km3 = &a1 * &mu3;
        let kc3 = lyapunov_rhs(&a1, &s3, &q1);
        let mu4 = &mu + &km3 * h;
        let s4 = &sigma + &kc3 * h;
        let km4 = &a2 * &mu4;
        let kc4 = lyapunov_rhs(&a2, &s4, &q2);

        mu += (km1 + km2 * 2.0 + km3 * 2.0 + km4) * (h / 6.0);
        sigma += (kc1 + kc2 * 2.0 + kc3 * 2.0 + kc4) * (h / 6.0);
        sigma = symmetrize(&sigma);
        if !all_finite(&sigma) || !mu.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged { t: t + h });
        }
    }
    Ok((mu, sigma))
}

/// Kalman gain `Σ Cᵀ (C Σ Cᵀ + R)⁻¹`, solved through a Cholesky factorization of the
/// innovation covariance.
pub fn kalman_gain(cov: &Matrix, c: &Matrix, r: &Matrix) -> Result<Matrix> {
    let c_cov = c * cov;
    let innovation = symmetrize(&(&c_cov * c.transpose() + r));
    let q = innovation.nrows();
    let condition = if q == 1 {
        if innovation[(0, 0)] > 0.0 && innovation[(0, 0)].is_finite() {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        let eig = innovation.clone().symmetric_eigen().eigenvalues;
        let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 0.0 {
            max / min
        } else {
            f64::INFINITY
        }
    };
    if !(condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::IllConditionedInnovation { condition });
    }
    let chol = innovation
        .cholesky()
        .ok_or(Error::IllConditionedInnovation {
            condition: f64::INFINITY,
        })?;
    // K = (S⁻¹ C Σ)ᵀ since both S and Σ are symmetric
    Ok(chol.solve(&c_cov).transpose())
}

/// Covariance after a measurement: `(I − K C) Σ`, symmetrized.
pub fn update_cov(cov: &Matrix, c: &Matrix, r: &Matrix) -> Result<Matrix> {
    let k = kalman_gain(cov, c, r)?;
    let n = cov.nrows();
    Ok(symmetrize(&((Matrix::identity(n, n) - &k * c) * cov)))
}

/// Measurement update of `belief` with observation `y` from `sensor`.
pub fn update(
    belief: &GaussianBelief,
    sensor: &Sensor,
    aux: &[f64],
    t: f64,
    y: &Vector,
) -> Result<GaussianBelief> {
    let c = sensor.output(aux, t);
    let r = sensor.noise_cov(aux, t);
    if y.len() != c.nrows() {
        return Err(Error::Dimension(format!(
            "measurement of length {} for sensor {} with q = {}",
            y.len(),
            sensor.id,
            c.nrows()
        )));
    }
    let k = kalman_gain(&belief.cov, &c, &r)?;
    let innovation = y - &c * &belief.mean;
    let mean = &belief.mean + &k * innovation;
    let n = belief.dim();
    let cov = (Matrix::identity(n, n) - &k * &c) * &belief.cov;
    GaussianBelief::new(mean, cov)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventTag {
    Predicted,
    /// Carries the (one-based) sensor id.
    Updated(usize),
}

#[derive(Clone, Debug)]
pub struct FilterEntry {
    pub t: f64,
    pub belief: GaussianBelief,
    pub tag: EventTag,
}

/// Chronological record of predicted and updated beliefs.
#[derive(Clone, Debug, Default)]
pub struct FilterTrajectory {
    pub entries: Vec<FilterEntry>,
}

impl FilterTrajectory {
    /// `(t, predicted, filtered)` per distinct time: the first and last entries recorded at `t`.
    pub fn collapsed(&self) -> Vec<(f64, &GaussianBelief, &GaussianBelief)> {
        let mut out: Vec<(f64, &GaussianBelief, &GaussianBelief)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some(last) if last.0 == e.t => last.2 = &e.belief,
                _ => out.push((e.t, &e.belief, &e.belief)),
            }
        }
        out
    }

    /// Filtered (post-update) belief per distinct time.
    pub fn filtered(&self) -> Vec<(f64, GaussianBelief)> {
        self.collapsed()
            .into_iter()
            .map(|(t, _, f)| (t, f.clone()))
            .collect()
    }
}

/// Forward sweep over `[t0, tf]`: beliefs are recorded at every grid node and every event.
///
/// `measurements[s][i]` is the observation taken at `schedule.times[s][i]`.
#[allow(clippy::too_many_arguments)]
pub fn filter_pass(
    process: &ProcessModel,
    sensors: &[Sensor],
    aux_traj: &dyn Fn(f64) -> Vec<f64>,
    schedule: &Schedule,
    measurements: &[Vec<Vector>],
    prior: &GaussianBelief,
    grid: &TimeGrid,
    step: f64,
) -> Result<FilterTrajectory> {
    let (t0, tf) = (grid.t0(), grid.tf());
    schedule.check_horizon(t0, tf)?;
    if schedule.num_sensors() > sensors.len() || measurements.len() != schedule.num_sensors() {
        return Err(Error::Dimension(
            "schedule, measurements and sensors disagree in sensor count".into(),
        ));
    }
    for (s, (times, ys)) in schedule.times.iter().zip(measurements).enumerate() {
        if times.len() != ys.len() {
            return Err(Error::Dimension(format!(
                "sensor {} has {} events but {} measurements",
                s + 1,
                times.len(),
                ys.len()
            )));
        }
    }

    let mut indexed: Vec<(f64, usize, usize)> = schedule
        .times
        .iter()
        .enumerate()
        .flat_map(|(s, list)| list.iter().enumerate().map(move |(i, &t)| (t, s, i)))
        .collect();
    indexed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut times: Vec<f64> = grid.nodes().to_vec();
    times.extend(indexed.iter().map(|e| e.0));
    times.sort_by(f64::total_cmp);
    times.dedup();

    let mut entries = Vec::with_capacity(times.len() + indexed.len());
    let mut belief = prior.clone();
    let mut current = t0;
    let mut next_event = 0;
    for &t in &times {
        if t > current {
            belief = predict(&belief, process, aux_traj, current, t, step)?;
            current = t;
        }
        entries.push(FilterEntry {
            t,
            belief: belief.clone(),
            tag: EventTag::Predicted,
        });
        while next_event < indexed.len() && indexed[next_event].0 == t {
            let (_, s, i) = indexed[next_event];
            let xi = aux_traj(t);
            belief = update(&belief, &sensors[s], &xi, t, &measurements[s][i])?;
            entries.push(FilterEntry {
                t,
                belief: belief.clone(),
                tag: EventTag::Updated(sensors[s].id),
            });
            next_event += 1;
        }
    }
    Ok(FilterTrajectory { entries })
}

/// State-transition matrix of `dΦ/dt = A Φ` over `[t_start, t_end]` (RK4).
pub fn transition_matrix(
    process: &ProcessModel,
    aux_traj: &dyn Fn(f64) -> Vec<f64>,
    t_start: f64,
    t_end: f64,
    step: f64,
) -> Matrix {
    let n = process.n;
    let mut phi = Matrix::identity(n, n);
    let n_steps = substeps(t_end - t_start, step);
    if n_steps == 0 {
        return phi;
    }
    let h = (t_end - t_start) / n_steps as f64;
    for i in 0..n_steps {
        let t = t_start + i as f64 * h;
        let a0 = process.drift(&aux_traj(t), t);
        let a1 = process.drift(&aux_traj(t + 0.5 * h), t + 0.5 * h);
        let a2 = process.drift(&aux_traj(t + h), t + h);
        let k1 = &a0 * &phi;
        let k2 = &a1 * (&phi + &k1 * (0.5 * h));
        let k3 = &a1 * (&phi + &k2 * (0.5 * h));
        let k4 = &a2 * (&phi + &k3 * h);
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    phi
}

/// Smoothed belief per distinct time of a filter trajectory.
#[derive(Clone, Debug, Default)]
pub struct SmoothedTrajectory {
    pub entries: Vec<(f64, GaussianBelief)>,
}

/// Backward RTS sweep over the distinct times of `traj`.
pub fn rts_smooth(
    traj: &FilterTrajectory,
    process: &ProcessModel,
    aux_traj: &dyn Fn(f64) -> Vec<f64>,
    step: f64,
) -> Result<SmoothedTrajectory> {
    let nodes = traj.collapsed();
    if nodes.is_empty() {
        return Ok(SmoothedTrajectory::default());
    }
    let last = nodes.len() - 1;
    let mut smoothed: Vec<Option<GaussianBelief>> = vec![None; nodes.len()];
    smoothed[last] = Some(nodes[last].2.clone());
    for k in (0..last).rev() {
        let (t_k, _, filt) = nodes[k];
        let (t_next, pred_next, _) = nodes[k + 1];
        let next_s = smoothed[k + 1]
            .as_ref()
            .expect("filled by previous iteration");
        let phi = transition_matrix(process, aux_traj, t_k, t_next, step);
        // G = Σ_f Φᵀ Σ_p⁻¹, i.e. Gᵀ = Σ_p⁻¹ Φ Σ_f
        let rhs = &phi * &filt.cov;
        let gain_t = solve_psd(&pred_next.cov, &rhs);
        let gain = gain_t.transpose();
        let mean = &filt.mean + &gain * (&next_s.mean - &pred_next.mean);
        let cov = &filt.cov + &gain * (&next_s.cov - &pred_next.cov) * gain.transpose();
        smoothed[k] = Some(GaussianBelief::new(mean, cov)?);
    }
    Ok(SmoothedTrajectory {
        entries: nodes
            .iter()
            .zip(smoothed)
            .map(|(n, s)| (n.0, s.expect("all nodes smoothed")))
            .collect(),
    })
}

/// Solves `P X = B` for symmetric PSD `P`, falling back to the pseudo-inverse when `P`
/// is singular.
fn solve_psd(p: &Matrix, b: &Matrix) -> Matrix {
    if let Some(chol) = symmetrize(p).cholesky() {
        return chol.solve(b);
    }
    let pinv = symmetrize(p)
        .pseudo_inverse(1e-14)
        .unwrap_or_else(|_| Matrix::zeros(p.nrows(), p.ncols()));
    pinv * b
}
