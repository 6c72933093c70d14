//! Problem-definition types: the time grid, the state-space process, sensors, the
//! auxiliary dynamics, Gaussian beliefs, rate/input plans and measurement schedules.
//!
//! The auxiliary state is stored with the perturbed block `ξ_p` first and the
//! unperturbed block `ξ_u` last.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize, Matrix, Vector};

/// Eigenvalues of a covariance above this (negative) floor are silently clamped to zero.
pub const PSD_FLOOR: f64 = -1e-10;

/// Matrix-valued callback of the auxiliary state and time.
pub type MatrixFn = Arc<dyn Fn(&[f64], f64) -> Matrix + Send + Sync>;
/// Vector-valued callback of (state, input, time).
pub type VectorFn = Arc<dyn Fn(&[f64], &[f64], f64) -> Vector + Send + Sync>;

#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        if let Some(w) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "nodes not strictly increasing at index {}",
                w + 1
            )));
        }
        Ok(Self { nodes })
    }

    /// `n_nodes` equally spaced nodes on `[t0, tf]`.
    pub fn uniform(t0: f64, tf: f64, n_nodes: usize) -> Result<Self> {
        if n_nodes < 2 || tf <= t0 {
            return Err(Error::InvalidGrid(format!(
                "uniform grid needs tf > t0 and >= 2 nodes (t0={t0}, tf={tf}, n={n_nodes})"
            )));
        }
        let h = (tf - t0) / (n_nodes - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_nodes).map(|k| t0 + k as f64 * h).collect();
        nodes[n_nodes - 1] = tf;
        Self::new(nodes)
    }

    pub fn t0(&self) -> f64 {
        self.nodes[0]
    }

    pub fn tf(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Width of interval `k`.
    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0() && t <= self.tf()
    }

    /// Index of the interval containing `t`; `tf` (and anything beyond) maps to the last one.
    pub fn interval_index(&self, t: f64) -> usize {
        let last = self.num_intervals() - 1;
        if t <= self.nodes[0] {
            return 0;
        }
        // first node strictly greater than t
        let idx = self.nodes.partition_point(|&n| n <= t);
        (idx.saturating_sub(1)).min(last)
    }

    /// Smallest interval width.
    pub fn min_step(&self) -> f64 {
        (0..self.num_intervals())
            .map(|k| self.step(k))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Linear SDE `dx = A(ξ,t) x dt + σ(ξ,t) dW`.
#[derive(Clone)]
pub struct ProcessModel {
    pub n: usize,
    pub m: usize,
    drift: MatrixFn,
    diffusion: MatrixFn,
}

impl ProcessModel {
    pub fn new(n: usize, m: usize, drift: MatrixFn, diffusion: MatrixFn) -> Self {
        Self {
            n,
            m,
            drift,
            diffusion,
        }
    }

    /// Time-invariant model with constant matrices.
    pub fn constant(a: Matrix, sigma: Matrix) -> Self {
        let (n, m) = (sigma.nrows(), sigma.ncols());
        Self::new(
            n,
            m,
            Arc::new(move |_, _| a.clone()),
            Arc::new(move |_, _| sigma.clone()),
        )
    }

    pub fn drift(&self, aux: &[f64], t: f64) -> Matrix {
        (self.drift)(aux, t)
    }

    pub fn diffusion(&self, aux: &[f64], t: f64) -> Matrix {
        (self.diffusion)(aux, t)
    }

    /// `σ σᵀ`.
    pub fn noise_intensity(&self, aux: &[f64], t: f64) -> Matrix {
        let s = self.diffusion(aux, t);
        &s * s.transpose()
    }
}

impl fmt::Debug for ProcessModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .finish()
    }
}

/// A sensor: `y = C_s(ξ,t) x + v`, `v ~ N(0, R_s(ξ,t))`, and the jump `g_s(ξ,u,t)` it
/// applies to the perturbed auxiliary state when it fires.
#[derive(Clone)]
pub struct Sensor {
    pub id: usize,
    pub q: usize,
    output: MatrixFn,
    noise_cov: MatrixFn,
    jump: VectorFn,
}

impl Sensor {
    pub fn new(id: usize, q: usize, output: MatrixFn, noise_cov: MatrixFn, jump: VectorFn) -> Self {
        Self {
            id,
            q,
            output,
            noise_cov,
            jump,
        }
    }

    /// Sensor with constant `C`, `R` and no auxiliary jump.
    pub fn constant(id: usize, c: Matrix, r: Matrix) -> Self {
        let q = c.nrows();
        Self::new(
            id,
            q,
            Arc::new(move |_, _| c.clone()),
            Arc::new(move |_, _| r.clone()),
            Arc::new(|_, _, _| Vector::zeros(0)),
        )
    }

    pub fn output(&self, aux: &[f64], t: f64) -> Matrix {
        (self.output)(aux, t)
    }

    pub fn noise_cov(&self, aux: &[f64], t: f64) -> Matrix {
        (self.noise_cov)(aux, t)
    }

    pub fn jump(&self, aux: &[f64], input: &[f64], t: f64) -> Vector {
        (self.jump)(aux, input, t)
    }
}

impl fmt::Debug for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Sensor")
            .field("id", &self.id)
            .field("q", &self.q)
            .finish()
    }
}

/// Curvature class of `f_p` and `g_s` in `ξ_p`, which decides the direction of the
/// auxiliary-state bound.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvexityTag {
    Affine,
    Concave,
    Convex,
    None,
}

impl ConvexityTag {
    /// Without a curvature guarantee the auxiliary bound is only a heuristic estimate.
    pub fn is_heuristic(self) -> bool {
        self == ConvexityTag::None
    }
}

/// Auxiliary dynamics `dξ_p = f_p(ξ,u,t) dt + Σ g_s dN_s`, `dξ_u = f_u(ξ_u,u,t) dt`.
#[derive(Clone)]
pub struct AuxModel {
    pub n_xi: usize,
    pub n_p: usize,
    pub m_u: usize,
    f_p: VectorFn,
    f_u: VectorFn,
    pub convexity: ConvexityTag,
}

impl AuxModel {
    pub fn new(
        n_xi: usize,
        n_p: usize,
        m_u: usize,
        f_p: VectorFn,
        f_u: VectorFn,
        convexity: ConvexityTag,
    ) -> Result<Self> {
        if n_p > n_xi {
            return Err(Error::Dimension(format!(
                "n_p = {n_p} exceeds n_xi = {n_xi}"
            )));
        }
        Ok(Self {
            n_xi,
            n_p,
            m_u,
            f_p,
            f_u,
            convexity,
        })
    }

    /// Model without any auxiliary state or input.
    pub fn none() -> Self {
        Self {
            n_xi: 0,
            n_p: 0,
            m_u: 0,
            f_p: Arc::new(|_, _, _| Vector::zeros(0)),
            f_u: Arc::new(|_, _, _| Vector::zeros(0)),
            convexity: ConvexityTag::Affine,
        }
    }

    pub fn n_u(&self) -> usize {
        self.n_xi - self.n_p
    }

    pub fn f_p(&self, xi: &[f64], u: &[f64], t: f64) -> Vector {
        (self.f_p)(xi, u, t)
    }

    /// Unperturbed drift; only the `ξ_u` block is passed.
    pub fn f_u(&self, xi_u: &[f64], u: &[f64], t: f64) -> Vector {
        (self.f_u)(xi_u, u, t)
    }

    /// Jump-free drift of the full auxiliary state.
    pub fn drift(&self, xi: &[f64], u: &[f64], t: f64) -> Vector {
        let mut out = Vector::zeros(self.n_xi);
        if self.n_p > 0 {
            out.rows_mut(0, self.n_p).copy_from(&self.f_p(xi, u, t));
        }
        if self.n_u() > 0 {
            out.rows_mut(self.n_p, self.n_u())
                .copy_from(&self.f_u(&xi[self.n_p..], u, t));
        }
        out
    }
}

impl fmt::Debug for AuxModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AuxModel")
            .field("n_xi", &self.n_xi)
            .field("n_p", &self.n_p)
            .field("m_u", &self.m_u)
            .field("convexity", &self.convexity)
            .finish()
    }
}

/// Symmetrizes `cov` and clamps eigenvalues in `[PSD_FLOOR, 0)` to zero; more negative
/// eigenvalues are an error.
pub fn repair_covariance(cov: &Matrix) -> Result<Matrix> {
    let cov = symmetrize(cov);
    if cov.nrows() == 0 || cov.clone().cholesky().is_some() {
        return Ok(cov);
    }
    let eig = cov.clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() || min < PSD_FLOOR {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
        });
    }
    if min >= 0.0 {
        return Ok(cov);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt =
        &eig.eigenvectors * Matrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok(symmetrize(&rebuilt))
}

/// Mean and covariance of a Gaussian state estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianBelief {
    /// Symmetrizes `cov`; eigenvalues in `[PSD_FLOOR, 0)` are clamped to zero, anything
    /// more negative is rejected.
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean of length {} with covariance {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let cov = repair_covariance(&cov)?;
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }
}

/// Piecewise-constant per-sensor measurement intensities on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RatePlan {
    pub grid: TimeGrid,
    /// `rates[s][k]`: rate of sensor `s` on interval `k`.
    pub rates: Vec<Vec<f64>>,
}

impl RatePlan {
    pub fn new(grid: TimeGrid, rates: Vec<Vec<f64>>) -> Result<Self> {
        for (s, row) in rates.iter().enumerate() {
            if row.len() != grid.num_intervals() {
                return Err(Error::Dimension(format!(
                    "sensor {} has {} rates for {} intervals",
                    s + 1,
                    row.len(),
                    grid.num_intervals()
                )));
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "rate {v} of sensor {} is not a finite nonnegative number",
                    s + 1
                )));
            }
        }
        Ok(Self { grid, rates })
    }

    pub fn constant(grid: TimeGrid, per_sensor: &[f64]) -> Result<Self> {
        let rows = per_sensor
            .iter()
            .map(|&r| vec![r; grid.num_intervals()])
            .collect();
        Self::new(grid, rows)
    }

    pub fn zeros(grid: TimeGrid, sensors: usize) -> Self {
        let rows = vec![vec![0.0; grid.num_intervals()]; sensors];
        Self { grid, rates: rows }
    }

    pub fn num_sensors(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, sensor: usize, t: f64) -> f64 {
        self.rates[sensor][self.grid.interval_index(t)]
    }

    pub fn rates_at(&self, t: f64) -> Vec<f64> {
        self.interval_rates(self.grid.interval_index(t))
    }

    pub fn interval_rates(&self, k: usize) -> Vec<f64> {
        self.rates.iter().map(|row| row[k]).collect()
    }
}

/// Piecewise-constant auxiliary inputs, one vector per grid interval.
#[derive(Clone, Debug, PartialEq)]
pub struct InputPlan {
    pub dim: usize,
    pub values: Vec<Vec<f64>>,
}

impl InputPlan {
    pub fn new(dim: usize, values: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| v.len() != dim) {
            return Err(Error::Dimension(format!(
                "input of length {} (expected {dim})",
                v.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn constant(intervals: usize, u: &[f64]) -> Self {
        Self {
            dim: u.len(),
            values: vec![u.to_vec(); intervals],
        }
    }

    pub fn empty(intervals: usize) -> Self {
        Self {
            dim: 0,
            values: vec![Vec::new(); intervals],
        }
    }

    pub fn at(&self, grid: &TimeGrid, t: f64) -> &[f64] {
        &self.values[grid.interval_index(t)]
    }
}

/// One measurement event: a sensor (zero-based index) firing at time `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub sensor: usize,
}

/// Deterministic per-sensor measurement times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Schedule {
    pub times: Vec<Vec<f64>>,
}

impl Schedule {
    pub fn new(times: Vec<Vec<f64>>, t0: f64, tf: f64) -> Result<Self> {
        for (s, list) in times.iter().enumerate() {
            if let Some(&t) = list.iter().find(|&&t| !(t >= t0 && t <= tf)) {
                return Err(Error::ScheduleOutOfRange { t, t0, tf });
            }
            if list.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidSchedule(format!(
                    "times of sensor {} are not strictly increasing",
                    s + 1
                )));
            }
        }
        Ok(Self { times })
    }

    pub fn empty(sensors: usize) -> Self {
        Self {
            times: vec![Vec::new(); sensors],
        }
    }

    pub fn num_sensors(&self) -> usize {
        self.times.len()
    }

    pub fn total_events(&self) -> usize {
        self.times.iter().map(Vec::len).sum()
    }

    /// All events in chronological order; simultaneous events are ordered by sensor id.
    pub fn events(&self) -> Vec<Event> {
        let mut events: Vec<Event> = self
            .times
            .iter()
            .enumerate()
            .flat_map(|(s, list)| list.iter().map(move |&t| Event { t, sensor: s }))
            .collect();
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.sensor.cmp(&b.sensor)));
        events
    }

    pub fn check_horizon(&self, t0: f64, tf: f64) -> Result<()> {
        for list in &self.times {
            if let Some(&t) = list.iter().find(|&&t| !(t >= t0 && t <= tf)) {
                return Err(Error::ScheduleOutOfRange { t, t0, tf });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViolationKind {
    Dimension,
    NonPositiveDefiniteNoise,
    NonFinite,
    CallbackFailure,
    SensorId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

/// Probes every callback at every grid node along `nominal_aux` and reports structural
/// violations. Each (check, component) pair is reported at most once. Callback panics are
/// caught and reported.
pub fn validate_model(
    process: &ProcessModel,
    aux: &AuxModel,
    sensors: &[Sensor],
    grid: &TimeGrid,
    nominal_aux: &dyn Fn(f64) -> Vec<f64>,
) -> Vec<Violation> {
    let mut report = Report::default();
    for (i, s) in sensors.iter().enumerate() {
        if s.id != i + 1 {
            report.push(
                format!("sensor-id-{i}"),
                ViolationKind::SensorId,
                format!(
                    "sensor at position {} has id {} (expected {})",
                    i + 1,
                    s.id,
                    i + 1
                ),
            );
        }
    }
    let input = vec![0.0; aux.m_u];
    for &t in grid.nodes() {
        let xi = match probe(|| nominal_aux(t)) {
            Some(xi) => xi,
            None => {
                report.push(
                    "nominal".into(),
                    ViolationKind::CallbackFailure,
                    format!("nominal auxiliary trajectory failed at t={t}"),
                );
                continue;
            }
        };
        if xi.len() != aux.n_xi {
            report.push(
                "nominal-dim".into(),
                ViolationKind::Dimension,
                format!(
                    "nominal auxiliary state has length {} (expected {})",
                    xi.len(),
                    aux.n_xi
                ),
            );
            continue;
        }
        check_matrix(
            &mut report,
            "drift",
            t,
            probe(|| process.drift(&xi, t)),
            process.n,
            process.n,
        );
        check_matrix(
            &mut report,
            "diffusion",
            t,
            probe(|| process.diffusion(&xi, t)),
            process.n,
            process.m,
        );
        check_vector(
            &mut report,
            "f_p",
            t,
            probe(|| aux.f_p(&xi, &input, t)),
            aux.n_p,
        );
        check_vector(
            &mut report,
            "f_u",
            t,
            probe(|| aux.f_u(&xi[aux.n_p..], &input, t)),
            aux.n_u(),
        );
        for s in sensors {
            let name = format!("sensor {}", s.id);
            check_matrix(
                &mut report,
                &format!("{name} output"),
                t,
                probe(|| s.output(&xi, t)),
                s.q,
                process.n,
            );
            check_vector(
                &mut report,
                &format!("{name} jump"),
                t,
                probe(|| s.jump(&xi, &input, t)),
                aux.n_p,
            );
            let r = probe(|| s.noise_cov(&xi, t));
            if check_matrix(
                &mut report,
                &format!("{name} noise"),
                t,
                r.clone(),
                s.q,
                s.q,
            ) {
                let r = r.unwrap();
                let asym = (&r - r.transpose()).abs().max();
                let min = min_eigenvalue(&r);
                if asym > 1e-10 * (1.0 + r.abs().max()) || min <= 0.0 {
                    report.push(
                        format!("{name} noise-pd"),
                        ViolationKind::NonPositiveDefiniteNoise,
                        format!("{name} noise covariance not symmetric positive definite at t={t} (min eigenvalue {min:e})"),
                    );
                }
            }
        }
    }
    report.items
}

#[derive(Default)]
struct Report {
    seen: Vec<String>,
    items: Vec<Violation>,
}

impl Report {
    fn push(&mut self, key: String, kind: ViolationKind, detail: String) {
        if !self.seen.contains(&key) {
            self.seen.push(key);
            self.items.push(Violation { kind, detail });
        }
    }
}

fn probe<T>(f: impl FnOnce() -> T) -> Option<T> {
    catch_unwind(AssertUnwindSafe(f)).ok()
}

fn check_matrix(
    report: &mut Report,
    what: &str,
    t: f64,
    m: Option<Matrix>,
    rows: usize,
    cols: usize,
) -> bool {
    match m {
        None => {
            report.push(
                format!("{what}-fail"),
                ViolationKind::CallbackFailure,
                format!("{what} callback failed at t={t}"),
            );
            false
        }
        Some(m) if m.nrows() != rows || m.ncols() != cols => {
            report.push(
                format!("{what}-dim"),
                ViolationKind::Dimension,
                format!(
                    "{what} returned {}x{} (expected {rows}x{cols})",
                    m.nrows(),
                    m.ncols()
                ),
            );
            false
        }
        Some(m) if !m.iter().all(|v| v.is_finite()) => {
            report.push(
                format!("{what}-finite"),
                ViolationKind::NonFinite,
                format!("{what} returned non-finite entries at t={t}"),
            );
            false
        }
        Some(_) => true,
    }
}

fn check_vector(report: &mut Report, what: &str, t: f64, v: Option<Vector>, len: usize) {
    match v {
        None => report.push(
            format!("{what}-fail"),
            ViolationKind::CallbackFailure,
            format!("{what} callback failed at t={t}"),
        ),
        Some(v) if v.len() != len => report.push(
            format!("{what}-dim"),
            ViolationKind::Dimension,
            format!("{what} returned length {} (expected {len})", v.len()),
        ),
        Some(v) if !v.iter().all(|x| x.is_finite()) => report.push(
            format!("{what}-finite"),
            ViolationKind::NonFinite,
            format!("{what} returned non-finite entries at t={t}"),
        ),
        Some(_) => {}
    }
}
