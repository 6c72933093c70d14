//! Gaussian-process kernels with exact state-space realizations, and a dense
//! Gram-matrix regression used to cross-check the filter/smoother route.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{filter_pass, rts_smooth};
use crate::linalg::{Matrix, Vector};
use crate::model::{GaussianBelief, ProcessModel, Schedule, Sensor, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Exponential,
    Matern32,
}

/// State-space realization of a stationary kernel.
#[derive(Clone, Debug)]
pub struct KernelSsm {
    pub kind: KernelKind,
    pub lengthscale: f64,
    pub variance: f64,
    pub process: ProcessModel,
    pub drift: Matrix,
    pub noise_intensity: Matrix,
    pub stationary_cov: Matrix,
    /// Maps the state to the GP value.
    pub output_row: Matrix,
}

impl KernelSsm {
    /// Kernel value at lag `tau`.
    pub fn kernel(&self, tau: f64) -> f64 {
        kernel_value(self.kind, self.lengthscale, self.variance, tau)
    }
}

pub fn kernel_value(kind: KernelKind, lengthscale: f64, variance: f64, tau: f64) -> f64 {
    let r = tau.abs();
    match kind {
        KernelKind::Exponential => variance * (-r / lengthscale).exp(),
        KernelKind::Matern32 => {
            let a = 3f64.sqrt() * r / lengthscale;
            variance * (1.0 + a) * (-a).exp()
        }
    }
}

/// Builds the state-space model of an exponential (Ornstein-Uhlenbeck) or Matérn-3/2 kernel.
pub fn build_kernel_ssm(kind: KernelKind, lengthscale: f64, variance: f64) -> Result<KernelSsm> {
    if !(lengthscale > 0.0 && lengthscale.is_finite()) || !(variance > 0.0 && variance.is_finite())
    {
        return Err(Error::InvalidParameter(format!(
            "kernel hyperparameters must be positive (lengthscale {lengthscale}, variance {variance})"
        )));
    }
    let (drift, diffusion, stationary_cov, output_row) = match kind {
        KernelKind::Exponential => (
            Matrix::from_element(1, 1, -1.0 / lengthscale),
            Matrix::from_element(1, 1, (2.0 * variance / lengthscale).sqrt()),
            Matrix::from_element(1, 1, variance),
            Matrix::from_element(1, 1, 1.0),
        ),
        KernelKind::Matern32 => {
            let lam = 3f64.sqrt() / lengthscale;
            (
                Matrix::from_row_slice(2, 2, &[0.0, 1.0, -lam * lam, -2.0 * lam]),
                Matrix::from_row_slice(2, 1, &[0.0, (4.0 * variance * lam.powi(3)).sqrt()]),
                Matrix::from_row_slice(2, 2, &[variance, 0.0, 0.0, variance * lam * lam]),
                Matrix::from_row_slice(1, 2, &[1.0, 0.0]),
            )
        }
    };
    let noise_intensity = &diffusion * diffusion.transpose();
    let a = drift.clone();
    let s = diffusion.clone();
    let process = ProcessModel::new(
        drift.nrows(),
        diffusion.ncols(),
        Arc::new(move |_, _| a.clone()),
        Arc::new(move |_, _| s.clone()),
    );
    Ok(KernelSsm {
        kind,
        lengthscale,
        variance,
        process,
        drift,
        noise_intensity,
        stationary_cov,
        output_row,
    })
}

/// Posterior mean and variance of zero-mean GP regression at the training inputs,
/// computed from the dense Gram matrix.
pub fn dense_gp_posterior(
    kind: KernelKind,
    lengthscale: f64,
    variance: f64,
    times: &[f64],
    values: &[f64],
    noise_var: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = times.len();
    let k = Matrix::from_fn(n, n, |i, j| {
        kernel_value(kind, lengthscale, variance, times[i] - times[j])
    });
    let ky = &k + Matrix::identity(n, n) * noise_var;
    let chol = ky
        .cholesky()
        .ok_or_else(|| Error::InvalidParameter("Gram matrix is not positive definite".into()))?;
    let alpha = chol.solve(&Vector::from_column_slice(values));
    let mean = &k * alpha;
    let cov = &k - &k * chol.solve(&k);
    Ok((
        mean.iter().copied().collect(),
        (0..n).map(|i| cov[(i, i)]).collect(),
    ))
}

/// Outcome of the filter/smoother versus dense-regression comparison.
#[derive(Clone, Debug, Serialize)]
pub struct GpComparison {
    pub kind: KernelKind,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub ssm_mean: Vec<f64>,
    pub ssm_var: Vec<f64>,
    pub dense_mean: Vec<f64>,
    pub dense_var: Vec<f64>,
    pub max_mean_deviation: f64,
    pub max_var_deviation: f64,
}

/// Runs the CD-KF + RTS route on scalar observations of a kernel SSM and compares it to
/// dense regression at the observation times. `times` must be strictly increasing.
pub fn compare_with_dense(
    ssm: &KernelSsm,
    times: &[f64],
    values: &[f64],
    noise_var: f64,
    step: f64,
) -> Result<GpComparison> {
    if times.is_empty() || times.len() != values.len() {
        return Err(Error::Dimension(
            "need matching, non-empty times and values".into(),
        ));
    }
    let t0 = times[0].min(0.0);
    let tf = times[times.len() - 1].max(t0 + step);
    let grid = TimeGrid::new(vec![t0, tf])?;
    let sensor = Sensor::constant(
        1,
        ssm.output_row.clone(),
        Matrix::from_element(1, 1, noise_var),
    );
    let schedule = Schedule::new(vec![times.to_vec()], t0, tf)?;
    let ys = vec![values.iter().map(|&v| Vector::from_element(1, v)).collect()];
    let prior = GaussianBelief::new(Vector::zeros(ssm.process.n), ssm.stationary_cov.clone())?;
    let no_aux = |_: f64| Vec::new();
    let traj = filter_pass(
        &ssm.process,
        &[sensor],
        &no_aux,
        &schedule,
        &ys,
        &prior,
        &grid,
        step,
    )?;
    let smooth = rts_smooth(&traj, &ssm.process, &no_aux, step)?;

    let mut ssm_mean = Vec::with_capacity(times.len());
    let mut ssm_var = Vec::with_capacity(times.len());
    for &t in times {
        let (_, b) = smooth
            .entries
            .iter()
            .find(|(ts, _)| *ts == t)
            .expect("every observation time is recorded");
        ssm_mean.push((&ssm.output_row * &b.mean)[0]);
        ssm_var.push((&ssm.output_row * &b.cov * ssm.output_row.transpose())[(0, 0)]);
    }
    let (dense_mean, dense_var) = dense_gp_posterior(
        ssm.kind,
        ssm.lengthscale,
        ssm.variance,
        times,
        values,
        noise_var,
    )?;
    let max_dev = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    Ok(GpComparison {
        kind: ssm.kind,
        times: times.to_vec(),
        values: values.to_vec(),
        max_mean_deviation: max_dev(&ssm_mean, &dense_mean),
        max_var_deviation: max_dev(&ssm_var, &dense_var),
        ssm_mean,
        ssm_var,
        dense_mean,
        dense_var,
    })
}
