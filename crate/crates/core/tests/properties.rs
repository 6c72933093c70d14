use cdkf_sched::kalman::update_cov;
use cdkf_sched::linalg::min_eigenvalue;
use cdkf_sched::quantize::{quantize_times, select_count, wasserstein2_sq};
use cdkf_sched::{
    filter_pass, rts_smooth, GaussianBelief, IntensityProfile, Matrix, ProcessModel, Schedule,
    Sensor, TimeGrid, Vector,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn spd(entries: &[f64], n: usize, floor: f64) -> Matrix {
    let g = Matrix::from_iterator(n, n, entries.iter().copied().take(n * n));
    &g * g.transpose() + Matrix::identity(n, n) * floor
}

/// Exact mean and variance of the normalized piecewise-constant intensity.
fn moments(nodes: &[f64], rates: &[f64]) -> (f64, f64) {
    let (mut m0, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, r) in rates.iter().enumerate() {
        let (a, b) = (nodes[k], nodes[k + 1]);
        m0 += r * (b - a);
        m1 += r * (b * b - a * a) / 2.0;
        m2 += r * (b.powi(3) - a.powi(3)) / 3.0;
    }
    let mean = m1 / m0;
    (mean, m2 / m0 - mean * mean)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// The covariance reduction ΣCᵀ(CΣCᵀ + R)⁻¹CΣ of a measurement update is convex in Σ.
    #[test]
    fn update_reduction_is_convex(
        n in 1usize..=4,
        q in 1usize..=3,
        raw in vec(-1.5f64..1.5, 64),
        alpha in 0.0f64..=1.0,
    ) {
        let c = Matrix::from_iterator(q, n, raw[..q * n].iter().copied());
        let r = spd(&raw[12..], q, 0.05);
        let s1 = spd(&raw[21..], n, 1e-3);
        let s2 = spd(&raw[37..], n, 1e-3);
        let f = |s: &Matrix| s - update_cov(s, &c, &r).unwrap();
        let mix = &s1 * alpha + &s2 * (1.0 - alpha);
        let gap = f(&s1) * alpha + f(&s2) * (1.0 - alpha) - f(&mix);
        prop_assert!(min_eigenvalue(&gap) >= -1e-8);
    }

    /// A measurement update never increases the covariance.
    #[test]
    fn update_never_increases_covariance(n in 1usize..=4, q in 1usize..=3, raw in vec(-1.5f64..1.5, 48)) {
        let c = Matrix::from_iterator(q, n, raw[..q * n].iter().copied());
        let r = spd(&raw[12..], q, 0.05);
        let s = spd(&raw[21..], n, 1e-3);
        prop_assert!(min_eigenvalue(&(&s - update_cov(&s, &c, &r).unwrap())) >= -1e-10);
    }

    /// Centroid quantization preserves the mean, and the variance it removes is the
    /// squared Wasserstein-2 distance.
    #[test]
    fn quantizer_mean_and_variance_identity(
        widths in vec(0.05f64..1.0, 1..10),
        rates in vec(prop_oneof![Just(0.0), 0.2f64..9.0], 10),
    ) {
        let mut nodes = vec![0.0];
        for w in &widths {
            nodes.push(nodes.last().unwrap() + w);
        }
        let rates = rates[..widths.len()].to_vec();
        prop_assume!(rates.iter().zip(&widths).map(|(r, w)| r * w).sum::<f64>() > 0.6);
        let profile = IntensityProfile::new(&TimeGrid::new(nodes.clone()).unwrap(), rates.clone()).unwrap();
        let n = select_count(profile.total());
        let times = quantize_times(&profile, n).unwrap();
        prop_assert_eq!(times.len(), n);
        let (mean, var) = moments(&nodes, &rates);
        let q_mean = times.iter().sum::<f64>() / n as f64;
        let q_var = times.iter().map(|t| (t - q_mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!((q_mean - mean).abs() <= 1e-9 * (1.0 + mean.abs()));
        let w2 = wasserstein2_sq(&profile, &times).unwrap();
        prop_assert!((var - q_var - w2).abs() <= 1e-9 * (1.0 + var));
    }

    /// Smoothed covariances are dominated by the filtered ones at every recorded time.
    #[test]
    fn smoother_dominates_filter(
        a in vec(-1.0f64..1.0, 4),
        c in vec(-1.0f64..1.0, 2),
        times in vec(0.0f64..2.0, 0..8),
        r in 0.05f64..2.0,
    ) {
        let process = ProcessModel::constant(
            Matrix::from_row_slice(2, 2, &[a[0] - 0.5, a[1], a[2], a[3] - 0.5]),
            Matrix::from_row_slice(2, 1, &[0.3, 0.8]),
        );
        let sensor = Sensor::constant(1, Matrix::from_row_slice(1, 2, &c), Matrix::from_element(1, 1, r));
        let mut times = times;
        times.sort_by(f64::total_cmp);
        let grid = TimeGrid::uniform(0.0, 2.0, 11).unwrap();
        let schedule = Schedule::new(vec![times.clone()], 0.0, 2.0).unwrap();
        let ys = vec![times.iter().map(|t| Vector::from_element(1, t.sin())).collect()];
        let prior = GaussianBelief::new(Vector::zeros(2), Matrix::identity(2, 2)).unwrap();
        let no_aux = |_: f64| Vec::new();
        let traj = filter_pass(&process, &[sensor], &no_aux, &schedule, &ys, &prior, &grid, 0.01).unwrap();
        let smooth = rts_smooth(&traj, &process, &no_aux, 0.01).unwrap();
        let filtered = traj.filtered();
        prop_assert_eq!(filtered.len(), smooth.entries.len());
        for ((tf, f), (ts, s)) in filtered.iter().zip(&smooth.entries) {
            prop_assert_eq!(tf, ts);
            prop_assert!(min_eigenvalue(&(&f.cov - &s.cov)) >= -1e-8);
        }
    }
}
