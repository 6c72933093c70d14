//! Deterministic ODEs that upper-bound the mean filter covariance and track the mean
//! perturbed auxiliary state under Poisson-distributed measurement times.

use crate::error::{Error, Result};
use crate::kalman::{kalman_gain, lyapunov_rhs};
use crate::linalg::{all_finite, symmetrize, Matrix, Vector};
use crate::model::{
    repair_covariance, AuxModel, InputPlan, ProcessModel, RatePlan, Sensor, TimeGrid,
};

/// `A Σ̂ + Σ̂ Aᵀ + σσᵀ − Σ_s λ_s K_s C_s Σ̂`, symmetrized.
pub fn sigma_bound_rhs(
    sigma_hat: &Matrix,
    aux: &[f64],
    rates: &[f64],
    sensors: &[Sensor],
    process: &ProcessModel,
    t: f64,
) -> Result<Matrix> {
    let a = process.drift(aux, t);
    let q = process.noise_intensity(aux, t);
    let mut rhs = lyapunov_rhs(&a, sigma_hat, &q);
    for (sensor, &rate) in sensors.iter().zip(rates) {
        if rate == 0.0 {
            continue;
        }
        let c = sensor.output(aux, t);
        let r = sensor.noise_cov(aux, t);
        let k = kalman_gain(sigma_hat, &c, &r)?;
        rhs -= (k * c * sigma_hat) * rate;
    }
    Ok(symmetrize(&rhs))
}

/// Perturbed block `f_p + Σ_s λ_s g_s`, unperturbed block `f_u`.
pub fn aux_bound_rhs(
    xi_hat: &[f64],
    input: &[f64],
    rates: &[f64],
    aux: &AuxModel,
    sensors: &[Sensor],
    t: f64,
) -> Vector {
    let mut rhs = aux.drift(xi_hat, input, t);
    if aux.n_p > 0 {
        for (sensor, &rate) in sensors.iter().zip(rates) {
            if rate == 0.0 {
                continue;
            }
            let g = sensor.jump(xi_hat, input, t);
            let mut block = rhs.rows_mut(0, aux.n_p);
            block += g * rate;
        }
    }
    rhs
}

/// Planned bound trajectory on the grid nodes.
#[derive(Clone, Debug)]
pub struct BoundTrajectory {
    pub grid: TimeGrid,
    pub sigma_hat: Vec<Matrix>,
    pub xi_hat: Vec<Vector>,
    /// Set when the auxiliary dynamics carry no curvature guarantee.
    pub heuristic: bool,
}

impl BoundTrajectory {
    pub fn traces(&self) -> Vec<f64> {
        self.sigma_hat.iter().map(Matrix::trace).collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundOptions {
    /// RK4 steps per grid interval.
    pub substeps: usize,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self { substeps: 10 }
    }
}

/// Integrates the coupled `(Σ̂, ξ̂)` system with RK4, the covariance bound being evaluated
/// along `ξ̂`. Rates and inputs are held constant on each grid interval.
#[allow(clippy::too_many_arguments)]
pub fn propagate_bounds(
    process: &ProcessModel,
    aux: &AuxModel,
    sensors: &[Sensor],
    rate_plan: &RatePlan,
    input_plan: &InputPlan,
    grid: &TimeGrid,
    sigma0: &Matrix,
    xi0: &[f64],
    opts: BoundOptions,
) -> Result<BoundTrajectory> {
    if rate_plan.grid != *grid {
        return Err(Error::Dimension(
            "rate plan is defined on a different grid".into(),
        ));
    }
    if input_plan.values.len() != grid.num_intervals() {
        return Err(Error::Dimension(format!(
            "input plan has {} intervals, grid has {}",
            input_plan.values.len(),
            grid.num_intervals()
        )));
    }
    if xi0.len() != aux.n_xi {
        return Err(Error::Dimension(format!(
            "xi0 has length {} (expected {})",
            xi0.len(),
            aux.n_xi
        )));
    }
    let substeps = opts.substeps.max(1);
    let mut sigma = repair_covariance(sigma0)?;
    let mut xi = Vector::from_column_slice(xi0);
    let mut sigma_hat = vec![sigma.clone()];
    let mut xi_hat = vec![xi.clone()];

    for k in 0..grid.num_intervals() {
        let rates = rate_plan.interval_rates(k);
        let u = &input_plan.values[k];
        let h = grid.step(k) / substeps as f64;
        let rhs = |s: &Matrix, x: &Vector, t: f64| -> Result<(Matrix, Vector)> {
            let xs = x.as_slice();
            Ok((
                sigma_bound_rhs(s, xs, &rates, sensors, process, t)?,
                aux_bound_rhs(xs, u, &rates, aux, sensors, t),
            ))
        };
        for i in 0..substeps {
            let t = grid.node(k) + i as f64 * h;
            let (s1, x1) = rhs(&sigma, &xi, t)?;
            let (s2, x2) = rhs(
                &(&sigma + &s1 * (0.5 * h)),
                &(&xi + &x1 * (0.5 * h)),
                t + 0.5 * h,
            )?;
            let (s3, x3) = rhs(
                &(&sigma + &s2 * (0.5 * h)),
                &(&xi + &x2 * (0.5 * h)),
                t + 0.5 * h,
            )?;
            let (s4, x4) = rhs(&(&sigma + &s3 * h), &(&xi + &x3 * h), t + h)?;
            sigma += (s1 + s2 * 2.0 + s3 * 2.0 + s4) * (h / 6.0);
            xi += (x1 + x2 * 2.0 + x3 * 2.0 + x4) * (h / 6.0);
            if !all_finite(&sigma) || !xi.iter().all(|v| v.is_finite()) {
                return Err(Error::IntegrationDiverged {
                    t: grid.node(k + 1),
                });
            }
            sigma = repair_covariance(&sigma).map_err(|_| Error::IntegrationDiverged {
                t: grid.node(k + 1),
            })?;
        }
        sigma_hat.push(sigma.clone());
        xi_hat.push(xi.clone());
    }
    Ok(BoundTrajectory {
        grid: grid.clone(),
        sigma_hat,
        xi_hat,
        heuristic: aux.convexity.is_heuristic(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_eigenvalue;
    use crate::model::ConvexityTag;
    use std::sync::Arc;

    fn m1(v: f64) -> Matrix {
        Matrix::from_element(1, 1, v)
    }

    fn scalar_process(a: f64, sigma: f64) -> ProcessModel {
        ProcessModel::constant(m1(a), m1(sigma))
    }

    fn unit_sensor() -> Sensor {
        Sensor::constant(1, m1(1.0), m1(1.0))
    }

    #[test]
    fn scalar_rhs_values() {
        let rhs = sigma_bound_rhs(
            &m1(1.0),
            &[],
            &[1.0],
            &[unit_sensor()],
            &scalar_process(0.0, 0.0),
            0.0,
        )
        .unwrap();
        assert!((rhs[(0, 0)] + 0.5).abs() < 1e-15);
        let rhs = sigma_bound_rhs(
            &m1(1.0),
            &[],
            &[1.0],
            &[unit_sensor()],
            &scalar_process(0.0, 0.5f64.sqrt()),
            0.0,
        )
        .unwrap();
        assert!(rhs[(0, 0)].abs() < 1e-15);
    }

    #[test]
    fn zero_rates_reduce_to_lyapunov_rhs_exactly() {
        let process = ProcessModel::constant(
            Matrix::from_row_slice(2, 2, &[0.1, 1.0, -3.0, -0.7]),
            Matrix::from_row_slice(2, 1, &[0.2, 1.1]),
        );
        let sigma = Matrix::from_row_slice(2, 2, &[1.3, 0.2, 0.2, 0.9]);
        let sensor = Sensor::constant(1, Matrix::from_row_slice(1, 2, &[1.0, 0.0]), m1(0.3));
        let rhs = sigma_bound_rhs(&sigma, &[], &[0.0], &[sensor], &process, 0.0).unwrap();
        let lyap = lyapunov_rhs(
            &process.drift(&[], 0.0),
            &sigma,
            &process.noise_intensity(&[], 0.0),
        );
        assert_eq!(rhs, lyap);
    }

    fn decay_aux() -> AuxModel {
        AuxModel::new(
            1,
            1,
            0,
            Arc::new(|xi, _, _| Vector::from_element(1, -xi[0])),
            Arc::new(|_, _, _| Vector::zeros(0)),
            ConvexityTag::Affine,
        )
        .unwrap()
    }

    fn jump_sensor(c: f64) -> Sensor {
        Sensor::new(
            1,
            1,
            Arc::new(|_, _| m1(1.0)),
            Arc::new(|_, _| m1(1.0)),
            Arc::new(move |_, _, _| Vector::from_element(1, -c)),
        )
    }

    #[test]
    fn affine_aux_rhs() {
        let rhs = aux_bound_rhs(&[1.0], &[], &[2.0], &decay_aux(), &[jump_sensor(0.5)], 0.0);
        assert!((rhs[0] + 2.0).abs() < 1e-15);
        let rhs = aux_bound_rhs(&[1.0], &[], &[0.0], &decay_aux(), &[jump_sensor(0.5)], 0.0);
        assert_eq!(rhs[0], -1.0);
    }

    #[test]
    fn zero_rates_reduce_to_prediction() {
        let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let plan = RatePlan::zeros(grid.clone(), 1);
        let traj = propagate_bounds(
            &scalar_process(0.0, 1.0),
            &AuxModel::none(),
            &[unit_sensor()],
            &plan,
            &InputPlan::empty(10),
            &grid,
            &m1(0.0),
            &[],
            BoundOptions::default(),
        )
        .unwrap();
        assert!((traj.sigma_hat[10][(0, 0)] - 1.0).abs() < 1e-8);
    }

    fn scalar_decay_trajectory(substeps: usize) -> BoundTrajectory {
        let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
        let plan = RatePlan::constant(grid.clone(), &[1.0]).unwrap();
        propagate_bounds(
            &scalar_process(0.0, 0.0),
            &decay_aux(),
            &[jump_sensor(0.5)],
            &plan,
            &InputPlan::empty(10),
            &grid,
            &m1(1.0),
            &[1.0],
            BoundOptions { substeps },
        )
        .unwrap()
    }

    #[test]
    fn matches_fine_step_reference() {
        let coarse = scalar_decay_trajectory(10);
        let fine = scalar_decay_trajectory(1000);
        for k in 0..11 {
            assert!((coarse.sigma_hat[k][(0, 0)] - fine.sigma_hat[k][(0, 0)]).abs() < 1e-6);
            assert!((coarse.xi_hat[k][0] - fine.xi_hat[k][0]).abs() < 1e-6);
        }
        // dΣ/dt = −Σ²/(Σ+1) has the implicit solution ln Σ − 1/Σ = −t − 1
        let s = coarse.sigma_hat[10][(0, 0)];
        assert!((s.ln() - 1.0 / s + 2.0).abs() < 1e-7);
        // dξ/dt = −ξ − 0.5 with ξ(0)=1 → ξ(t) = 1.5 e^{−t} − 0.5
        assert!((coarse.xi_hat[10][0] - (1.5 * (-1.0f64).exp() - 0.5)).abs() < 1e-8);
    }

    #[test]
    fn heuristic_flag_follows_convexity_tag() {
        assert!(!scalar_decay_trajectory(2).heuristic);
    }

    proptest::proptest! {
        #[test]
        fn order_preserved(
            a in -1.0f64..0.5, q in 0.0f64..1.0, r in 0.1f64..2.0, lam in 0.0f64..5.0,
            s2 in 0.01f64..2.0, extra in 0.0f64..2.0,
        ) {
            let grid = TimeGrid::uniform(0.0, 1.0, 21).unwrap();
            let plan = RatePlan::constant(grid.clone(), &[lam]).unwrap();
            let sensor = Sensor::constant(1, m1(1.0), m1(r));
            let process = scalar_process(a, q.sqrt());
            let run = |s0: f64| propagate_bounds(&process, &AuxModel::none(), std::slice::from_ref(&sensor), &plan,
                &InputPlan::empty(20), &grid, &m1(s0), &[], BoundOptions::default()).unwrap();
            let lo = run(s2);
            let hi = run(s2 + extra);
            for k in 0..21 {
                proptest::prop_assert!(hi.sigma_hat[k][(0, 0)] - lo.sigma_hat[k][(0, 0)] >= -1e-7);
            }
        }

        #[test]
        fn order_preserved_2x2(
            e in proptest::collection::vec(-1.0f64..1.0, 4), lam in 0.0f64..4.0, d in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let grid = TimeGrid::uniform(0.0, 1.0, 11).unwrap();
            let plan = RatePlan::constant(grid.clone(), &[lam]).unwrap();
            let process = ProcessModel::constant(
                Matrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]),
                Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            );
            let sensor = Sensor::constant(1, Matrix::from_row_slice(1, 2, &[1.0, 0.0]), m1(0.5));
            let b = Matrix::from_row_slice(2, 2, &e);
            let lo0 = &b * b.transpose() + Matrix::identity(2, 2) * 0.05;
            let dm = Matrix::from_row_slice(2, 2, &d);
            let hi0 = &lo0 + &dm * dm.transpose();
            let run = |s0: &Matrix| propagate_bounds(&process, &AuxModel::none(), std::slice::from_ref(&sensor), &plan,
                &InputPlan::empty(10), &grid, s0, &[], BoundOptions::default()).unwrap();
            let lo = run(&lo0);
            let hi = run(&hi0);
            for k in 0..11 {
                proptest::prop_assert!(min_eigenvalue(&(&hi.sigma_hat[k] - &lo.sigma_hat[k])) >= -1e-7);
            }
        }

        #[test]
        fn more_measurements_never_increase_terminal_trace(
            a in -1.0f64..0.5, q in 0.0f64..1.0, r in 0.1f64..2.0,
            base in proptest::collection::vec(0.0f64..5.0, 4), bump in proptest::collection::vec(0.0f64..3.0, 4),
        ) {
            let grid = TimeGrid::uniform(0.0, 1.0, 5).unwrap();
            let sensor = Sensor::constant(1, m1(1.0), m1(r));
            let process = scalar_process(a, q.sqrt());
            let run = |rates: Vec<f64>| {
                let plan = RatePlan::new(grid.clone(), vec![rates]).unwrap();
                propagate_bounds(&process, &AuxModel::none(), std::slice::from_ref(&sensor), &plan,
                    &InputPlan::empty(4), &grid, &m1(1.0), &[], BoundOptions::default()).unwrap()
            };
            let lo = run(base.clone());
            let hi = run(base.iter().zip(&bump).map(|(b, d)| b + d).collect());
            proptest::prop_assert!(hi.sigma_hat[4].trace() <= lo.sigma_hat[4].trace() + 1e-8);
        }
    }
}
