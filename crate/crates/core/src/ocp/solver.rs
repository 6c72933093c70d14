//! Augmented-Lagrangian method with a projected Newton inner solver: Lagrangian Hessian
//! blocks (when the NLP supplies them) plus Gauss–Newton penalty curvature, shifted until
//! positive definite.

use serde::{Deserialize, Serialize};

use super::nlp::{Nlp, NlpDerivatives, NlpEval};
use crate::linalg::Matrix;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            opt_tol: 1e-6,
            max_outer: 30,
            max_inner: 400,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e9,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    pub projected_gradient: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Merit values accepted by each inner solve, one vector per outer iteration.
    #[serde(skip)]
    pub merit_history: Vec<Vec<f64>>,
    pub eq_multipliers: Vec<f64>,
    pub ineq_multipliers: Vec<f64>,
}

struct Multipliers {
    eq: Vec<f64>,
    ineq: Vec<f64>,
    rho: f64,
}

impl Multipliers {
    fn merit(&self, e: &NlpEval) -> f64 {
        if !e.is_finite() {
            return f64::INFINITY;
        }
        let mut m = e.objective;
        for (c, mu) in e.eq.iter().zip(&self.eq) {
            m += mu * c + 0.5 * self.rho * c * c;
        }
        for (g, nu) in e.ineq.iter().zip(&self.ineq) {
            let s = (nu + self.rho * g).max(0.0);
            m += (s * s - nu * nu) / (2.0 * self.rho);
        }
        m
    }

    fn gradient(&self, e: &NlpEval, d: &NlpDerivatives) -> Vec<f64> {
        let mut g = d.objective_grad.clone();
        for ((c, mu), row) in e.eq.iter().zip(&self.eq).zip(&d.eq_jac) {
            let w = mu + self.rho * c;
            if w != 0.0 {
                for &(j, v) in row {
                    g[j] += w * v;
                }
            }
        }
        for ((gi, nu), row) in e.ineq.iter().zip(&self.ineq).zip(&d.ineq_jac) {
            let w = (nu + self.rho * gi).max(0.0);
            if w != 0.0 {
                for &(j, v) in row {
                    g[j] += w * v;
                }
            }
        }
        g
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

/// Infinity norm of `P(x − g) − x`.
fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let step = (x[i] - g[i]).clamp(lo[i], hi[i]) - x[i];
        worst = worst.max(step.abs());
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Symmetric positive-definite matrix stored as its lower band.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Adds `v` at `(i, j)` with `j ≤ i`.
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    /// In-place banded Cholesky; `false` when the matrix is not positive definite.
    fn factor(&mut self) -> bool {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            for j in lo..=i {
                let mut sum = self.get(i, j);
                for k in lo.max(j.saturating_sub(self.bw))..j {
                    sum -= self.get(i, k) * self.get(j, k);
                }
                let idx = self.idx(i, j);
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return false;
                    }
                    self.data[idx] = sum.sqrt();
                } else {
                    self.data[idx] = sum / self.get(j, j);
                }
            }
        }
        true
    }

    fn solve(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let mut sum = b[i];
            for (k, bk) in b.iter().enumerate().take(i).skip(i.saturating_sub(self.bw)) {
                sum -= self.get(i, k) * bk;
            }
            b[i] = sum / self.get(i, i);
        }
        for i in (0..self.n).rev() {
            let mut sum = b[i];
            for (k, bk) in b
                .iter()
                .enumerate()
                .take((i + self.bw + 1).min(self.n))
                .skip(i + 1)
            {
                sum -= self.get(k, i) * bk;
            }
            b[i] = sum / self.get(i, i);
        }
    }
}

struct InnerResult {
    x: Vec<f64>,
    eval: NlpEval,
    projected_gradient: f64,
    iterations: usize,
    merits: Vec<f64>,
}

/// Weighted Jacobian rows whose Gauss–Newton products `w·JᵢᵀJᵢ` model the penalty curvature.
fn penalty_rows<'a>(
    e: &NlpEval,
    d: &'a NlpDerivatives,
    mult: &Multipliers,
) -> Vec<(f64, &'a [(usize, f64)])> {
    let mut rows: Vec<(f64, &[(usize, f64)])> =
        d.eq_jac.iter().map(|r| (mult.rho, r.as_slice())).collect();
    for ((g, nu), r) in e.ineq.iter().zip(&mult.ineq).zip(&d.ineq_jac) {
        if nu + mult.rho * g > 0.0 {
            rows.push((mult.rho, r.as_slice()));
        }
    }
    rows
}

/// Step on the free variables from `(H + ρJᵀJ + τI) d = −g`, where `H` is the sum of the
/// supplied Lagrangian Hessian blocks; `None` if the system is not positive definite.
fn damped_step(
    grad: &[f64],
    free: &[bool],
    rows: &[(f64, &[(usize, f64)])],
    blocks: &[(usize, Matrix)],
    tau: f64,
) -> Option<(Vec<f64>, f64)> {
    let n = grad.len();
    let mut compact = vec![usize::MAX; n];
    let mut count = 0;
    for i in 0..n {
        if free[i] {
            compact[i] = count;
            count += 1;
        }
    }
    if count == 0 {
        return Some((vec![0.0; n], 0.0));
    }
    let span = |idx: &mut dyn Iterator<Item = usize>| -> usize {
        let idx: Vec<usize> = idx
            .map(|j| compact[j])
            .filter(|c| *c != usize::MAX)
            .collect();
        match (idx.iter().min(), idx.iter().max()) {
            (Some(lo), Some(hi)) => hi - lo,
            _ => 0,
        }
    };
    let mut bw = 0;
    for (_, row) in rows {
        bw = bw.max(span(&mut row.iter().map(|(j, _)| *j)));
    }
    for (start, block) in blocks {
        bw = bw.max(span(&mut (*start..start + block.nrows())));
    }
    let mut h = BandMatrix::zeros(count, bw);
    for i in 0..count {
        h.add(i, i, tau);
    }
    for (start, block) in blocks {
        for a in 0..block.nrows() {
            let ca = compact[start + a];
            if ca == usize::MAX {
                continue;
            }
            for b in 0..block.ncols() {
                let cb = compact[start + b];
                if cb != usize::MAX && cb <= ca {
                    h.add(ca, cb, block[(a, b)]);
                }
            }
        }
    }
    for (w, row) in rows {
        let entries: Vec<(usize, f64)> = row
            .iter()
            .filter(|(j, _)| compact[*j] != usize::MAX)
            .map(|(j, v)| (compact[*j], *v))
            .collect();
        for &(a, va) in &entries {
            for &(b, vb) in &entries {
                if b <= a {
                    h.add(a, b, w * va * vb);
                }
            }
        }
    }
    if !h.factor() {
        return None;
    }
    let mut rhs: Vec<f64> = (0..n).filter(|&i| free[i]).map(|i| -grad[i]).collect();
    h.solve(&mut rhs);
    let mut d = vec![0.0; n];
    for i in 0..n {
        if free[i] {
            d[i] = rhs[compact[i]];
        }
    }
    // Quadratic-model value ½ dᵀHd on the compact system equals −½ gᵀd.
    let model = 0.5 * dot(grad, &d);
    Some((d, model))
}

/// Constraint weights `μ + ρc` and `max(ν + ρg, 0)` of the merit gradient at `e`.
fn merit_weights(e: &NlpEval, mult: &Multipliers) -> (Vec<f64>, Vec<f64>) {
    let eq =
        e.eq.iter()
            .zip(&mult.eq)
            .map(|(c, mu)| mu + mult.rho * c)
            .collect();
    let ineq = e
        .ineq
        .iter()
        .zip(&mult.ineq)
        .map(|(g, nu)| (nu + mult.rho * g).max(0.0))
        .collect();
    (eq, ineq)
}

/// Projected Newton-type iteration on the augmented-Lagrangian merit with a backtracking
/// search along the projection arc.
fn inner_solve(
    nlp: &dyn Nlp,
    x0: Vec<f64>,
    mult: &Multipliers,
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    opts: &SolverOptions,
) -> InnerResult {
    let n = x0.len();
    let mut x = x0;
    let (mut eval, mut der) = nlp.derivatives(&x);
    let mut merit = mult.merit(&eval);
    let mut grad = mult.gradient(&eval, &der);
    let mut merits = vec![merit];
    let mut iterations = 0;
    let mut pg = projected_gradient_norm(&x, &grad, lo, hi);
    let mut last_shift = 0.0;

    'outer: while iterations < opts.max_inner && pg > tol && merit.is_finite() {
        // Variables within `eps` of a bound with the gradient pushing outward stay fixed;
        // the margin shrinks with the projected gradient so the active set settles.
        let eps = pg.min(1e-3);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                lo[i] < hi[i]
                    && !(x[i] <= lo[i] + eps && grad[i] > 0.0)
                    && !(x[i] >= hi[i] - eps && grad[i] < 0.0)
            })
            .collect();
        let rows = penalty_rows(&eval, &der, mult);
        let (eq_w, ineq_w) = merit_weights(&eval, mult);
        let exact: Vec<(usize, Matrix)> = nlp
            .weighted_hessian_blocks(&x, &eq_w, &ineq_w)
            .unwrap_or_default();

        // Exact curvature with the smallest diagonal shift that makes the reduced system
        // positive definite, warm-started from the previous shift.
        let mut tau = 0.0;
        let (mut d, model) = loop {
            if tau > 1e20 {
                break 'outer;
            }
            if let Some(found) = damped_step(&grad, &free, &rows, &exact, tau) {
                if tau > 0.0 {
                    last_shift = tau;
                }
                break found;
            }
            tau = if tau == 0.0 {
                if last_shift > 0.0 {
                    (last_shift / 3.0).max(1e-12)
                } else {
                    1e-4
                }
            } else {
                tau * if last_shift > 0.0 { 8.0 } else { 100.0 }
            };
        };

        // Held variables move straight onto the bound their gradient pushes against.
        for i in 0..n {
            if !free[i] && lo[i] < hi[i] {
                d[i] = if grad[i] > 0.0 {
                    lo[i] - x[i]
                } else {
                    hi[i] - x[i]
                };
            }
        }
        let arc = |alpha: f64| {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            project(&mut trial, lo, hi);
            trial
        };
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = arc(alpha);
            let decrease: f64 = trial
                .iter()
                .zip(&x)
                .zip(&grad)
                .map(|((a, b), g)| (a - b) * g)
                .sum();
            if decrease == 0.0 && trial == x {
                break;
            }
            let trial_merit = mult.merit(&nlp.eval(&trial));
            if trial_merit.is_finite() && decrease < 0.0 && trial_merit <= merit + 1e-4 * decrease {
                accepted = Some((trial, trial_merit));
                break;
            }
            alpha *= 0.5;
        }
        let Some((mut trial, mut trial_merit)) = accepted else {
            break;
        };
        // When the full step beats the quadratic model by a wide margin the merit is
        // flatter than modelled along it, so probe further out.
        if alpha == 1.0 && merit - trial_merit > 1.25 * (-model) {
            let mut scale = 2.0;
            for _ in 0..6 {
                let probe = arc(scale);
                let probe_merit = mult.merit(&nlp.eval(&probe));
                if !(probe_merit.is_finite() && probe_merit < trial_merit) {
                    break;
                }
                trial = probe;
                trial_merit = probe_merit;
                scale *= 2.0;
            }
        }
        let (e, dd) = nlp.derivatives(&trial);
        x = trial;
        eval = e;
        der = dd;
        merit = mult.merit(&eval);
        grad = mult.gradient(&eval, &der);
        merits.push(merit);
        pg = projected_gradient_norm(&x, &grad, lo, hi);
        iterations += 1;
    }
    InnerResult {
        x,
        eval,
        projected_gradient: pg,
        iterations,
        merits,
    }
}

/// Minimizes an NLP from `x0` (projected onto the simple bounds first).
///
/// Never fails: when the caps are hit, the best iterate seen (smallest violation, then
/// smallest objective, earliest on ties) is returned with `converged = false`.
pub fn minimize(nlp: &dyn Nlp, x0: &[f64], opts: &SolverOptions) -> SolveReport {
    let lo = nlp.lower_bounds();
    let hi = nlp.upper_bounds();
    let mut x = x0.to_vec();
    project(&mut x, &lo, &hi);
    let first = nlp.eval(&x);
    let mut mult = Multipliers {
        eq: vec![0.0; first.eq.len()],
        ineq: vec![0.0; first.ineq.len()],
        rho: opts.penalty_init,
    };
    let mut tol = opts.opt_tol.max(1e-2);
    let mut previous_violation = f64::INFINITY;
    let mut inner_total = 0;
    let mut history = Vec::new();
    let mut best: Option<(f64, f64, Vec<f64>, f64, usize)> = None;

    for outer in 0..opts.max_outer.max(1) {
        let inner = inner_solve(nlp, x, &mult, &lo, &hi, tol, opts);
        inner_total += inner.iterations;
        history.push(inner.merits);
        x = inner.x;
        let e = inner.eval;
        let violation = if e.is_finite() {
            e.max_violation()
        } else {
            f64::INFINITY
        };
        let better = match &best {
            None => true,
            Some((v, f, ..)) => violation < *v || (violation == *v && e.objective < *f),
        };
        if better {
            best = Some((
                violation,
                e.objective,
                x.clone(),
                inner.projected_gradient,
                outer + 1,
            ));
        }
        if violation <= opts.feas_tol && inner.projected_gradient <= opts.opt_tol {
            for (mu, c) in mult.eq.iter_mut().zip(&e.eq) {
                *mu += mult.rho * c;
            }
            for (nu, g) in mult.ineq.iter_mut().zip(&e.ineq) {
                *nu = (*nu + mult.rho * g).max(0.0);
            }
            return SolveReport {
                x,
                objective: e.objective,
                max_violation: violation,
                projected_gradient: inner.projected_gradient,
                converged: true,
                outer_iterations: outer + 1,
                inner_iterations: inner_total,
                merit_history: history,
                eq_multipliers: mult.eq,
                ineq_multipliers: mult.ineq,
            };
        }
        if !e.is_finite() {
            break;
        }
        // Complementarity-aware progress measure for the penalty update.
        let mut progress = e.eq.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
        for (g, nu) in e.ineq.iter().zip(&mult.ineq) {
            progress = progress.max(g.max(-nu / mult.rho).abs());
        }
        for (mu, c) in mult.eq.iter_mut().zip(&e.eq) {
            *mu += mult.rho * c;
        }
        for (nu, g) in mult.ineq.iter_mut().zip(&e.ineq) {
            *nu = (*nu + mult.rho * g).max(0.0);
        }
        if progress > 0.25 * previous_violation {
            mult.rho = (mult.rho * opts.penalty_growth).min(opts.penalty_max);
        }
        previous_violation = progress;
        tol = (tol * 0.1).max(opts.opt_tol);
    }

    let (violation, objective, x, pg, outer) = best.expect("at least one outer iteration");
    SolveReport {
        x,
        objective,
        max_violation: violation,
        projected_gradient: pg,
        converged: false,
        outer_iterations: outer,
        inner_iterations: inner_total,
        merit_history: history,
        eq_multipliers: mult.eq,
        ineq_multipliers: mult.ineq,
    }
}
