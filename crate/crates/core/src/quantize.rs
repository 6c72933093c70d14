//! Deterministic measurement times from a piecewise-constant intensity: the `n` points
//! minimizing the Wasserstein-2 distance to the normalized intensity measure are the
//! centroids of `n` cells of equal intensity mass.

use crate::error::{Error, Result};
use crate::model::{RatePlan, TimeGrid};

/// One sensor's intensity together with its cumulative `Λ(t)` at the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityProfile {
    nodes: Vec<f64>,
    rates: Vec<f64>,
    cumulative: Vec<f64>,
}

impl IntensityProfile {
    pub fn new(grid: &TimeGrid, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != grid.num_intervals() {
            return Err(Error::Dimension(format!(
                "{} rates for {} intervals",
                rates.len(),
                grid.num_intervals()
            )));
        }
        if let Some(r) = rates.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rate {r} is not a finite nonnegative number"
            )));
        }
        let nodes = grid.nodes().to_vec();
        let mut cumulative = Vec::with_capacity(nodes.len());
        cumulative.push(0.0);
        for (k, r) in rates.iter().enumerate() {
            let prev = cumulative[k];
            cumulative.push(prev + r * (nodes[k + 1] - nodes[k]));
        }
        Ok(Self {
            nodes,
            rates,
            cumulative,
        })
    }

    /// Profile of sensor `sensor` (zero-based) of a rate plan.
    pub fn from_plan(plan: &RatePlan, sensor: usize) -> Result<Self> {
        Self::new(&plan.grid, plan.rates[sensor].clone())
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

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        let last = self.rates.len() - 1;
        let idx = self
            .nodes
            .partition_point(|&n| n <= t)
            .saturating_sub(1)
            .min(last);
        self.rates[idx]
    }

    /// `Λ(T)`.
    pub fn total(&self) -> f64 {
        self.cumulative[self.cumulative.len() - 1]
    }

    /// Exact `Λ(t)` of the piecewise-constant intensity.
    pub fn cumulative_intensity(&self, t: f64) -> Result<f64> {
        let (t0, tf) = (self.t0(), self.tf());
        if !(t >= t0 && t <= tf) {
            return Err(Error::OutOfHorizon { t, t0, tf });
        }
        if t == tf {
            return Ok(self.total());
        }
        let k = self.nodes.partition_point(|&n| n <= t) - 1;
        Ok(self.cumulative[k] + self.rates[k] * (t - self.nodes[k]))
    }

    /// Earliest `t` with `Λ(t) ≥ level` (a flat stretch of `Λ` resolves to its left edge).
    pub fn inverse_cumulative(&self, level: f64) -> f64 {
        if level <= 0.0 {
            return self.t0();
        }
        let i = self.cumulative.partition_point(|&c| c < level);
        if i >= self.cumulative.len() {
            return self.tf();
        }
        if i == 0 {
            return self.t0();
        }
        let k = i - 1;
        // cumulative[k] < level <= cumulative[k+1] implies a positive rate on interval k
        let t = self.nodes[k] + (level - self.cumulative[k]) / self.rates[k];
        t.clamp(self.nodes[k], self.nodes[k + 1])
    }

    /// `(∫ λ, ∫ t λ)` over `[a, b]`.
    pub fn moments(&self, a: f64, b: f64) -> (f64, f64) {
        let mut mass = 0.0;
        let mut first = 0.0;
        for k in 0..self.rates.len() {
            let lo = a.max(self.nodes[k]);
            let hi = b.min(self.nodes[k + 1]);
            if hi <= lo || self.rates[k] == 0.0 {
                continue;
            }
            let r = self.rates[k];
            mass += r * (hi - lo);
            first += r * 0.5 * (hi * hi - lo * lo);
        }
        (mass, first)
    }
}

/// `n = ⌊Λ(T) + 0.5⌋`, which matches the expected number of Poisson events.
pub fn select_count(lambda_total: f64) -> usize {
    if !(lambda_total > 0.0) {
        return 0;
    }
    (lambda_total + 0.5).floor() as usize
}

/// Equal-mass cell boundaries `a_0 = t0 < a_1 < … < a_n = tf`.
pub fn cell_boundaries(profile: &IntensityProfile, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(vec![profile.t0(), profile.tf()]);
    }
    let total = profile.total();
    if !(total > 0.0) {
        return Err(Error::DegenerateIntensity { count: n });
    }
    let mut bounds = Vec::with_capacity(n + 1);
    bounds.push(profile.t0());
    for i in 1..n {
        bounds.push(profile.inverse_cumulative(total * i as f64 / n as f64));
    }
    bounds.push(profile.tf());
    Ok(bounds)
}

/// Optimal `n`-point quantization: the conditional centroid of each equal-mass cell.
/// `n = 0` yields an empty list.
pub fn quantize_times(profile: &IntensityProfile, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let bounds = cell_boundaries(profile, n)?;
    Ok(bounds
        .windows(2)
        .map(|w| {
            let (mass, first) = profile.moments(w[0], w[1]);
            if mass > 0.0 {
                (first / mass).clamp(w[0], w[1])
            } else {
                0.5 * (w[0] + w[1])
            }
        })
        .collect())
}

/// Quantized schedule of every sensor of a plan, with counts from [`select_count`].
pub fn quantize_plan(plan: &RatePlan) -> Result<Vec<Vec<f64>>> {
    (0..plan.num_sensors())
        .map(|s| {
            let profile = IntensityProfile::from_plan(plan, s)?;
            quantize_times(&profile, select_count(profile.total()))
        })
        .collect()
}

/// Squared Wasserstein-2 distance between the normalized intensity and the uniform
/// discrete measure on `times`: `∫₀¹ (F⁻¹(p) − G⁻¹(p))² dp` integrated exactly on the
/// pieces between breakpoints of both quantile functions, where `F⁻¹` is linear and `G⁻¹`
/// constant.
pub fn wasserstein2_sq(profile: &IntensityProfile, times: &[f64]) -> Result<f64> {
    let total = profile.total();
    if times.is_empty() {
        if total > 0.0 {
            return Err(Error::UndefinedDistance);
        }
        return Ok(0.0);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateIntensity { count: times.len() });
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    let mut breaks: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    breaks.extend(
        profile
            .cumulative
            .iter()
            .map(|c| (c / total).clamp(0.0, 1.0)),
    );
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let mut acc = 0.0;
    for w in breaks.windows(2) {
        let (p0, p1) = (w[0], w[1]);
        if p1 <= p0 {
            continue;
        }
        let mid = 0.5 * (p0 + p1);
        let atom = sorted[((mid * n as f64).floor() as usize).min(n - 1)];
        // The interval whose Λ-range contains the piece; its rate is positive. Evaluating
        // F⁻¹ through it gives the one-sided limits at jumps over zero-rate stretches.
        let k = profile
            .cumulative
            .partition_point(|&c| c <= mid * total)
            .clamp(1, profile.rates.len())
            - 1;
        let (lo, hi) = (profile.nodes[k], profile.nodes[k + 1]);
        let q =
            |p: f64| (lo + (p * total - profile.cumulative[k]) / profile.rates[k]).clamp(lo, hi);
        let (a, b) = (q(p0) - atom, q(p1) - atom);
        acc += (p1 - p0) * (a * a + a * b + b * b) / 3.0;
    }
    Ok(acc.max(0.0))
}
