//! Nonlinear-program interface consumed by the augmented-Lagrangian solver.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;

/// Sparse row: `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Objective and constraint values at a point. Equality constraints are `c(x) = 0`,
/// inequality constraints `g(x) ≤ 0`.
#[derive(Clone, Debug, Default)]
pub struct NlpEval {
    pub objective: f64,
    pub eq: Vec<f64>,
    pub ineq: Vec<f64>,
}

impl NlpEval {
    pub fn is_finite(&self) -> bool {
        self.objective.is_finite() && self.eq.iter().chain(&self.ineq).all(|v| v.is_finite())
    }

    /// `max(|c|∞, max(0, g)∞)`.
    pub fn max_violation(&self) -> f64 {
        let eq = self.eq.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let ineq = self.ineq.iter().map(|v| v.max(0.0)).fold(0.0, f64::max);
        eq.max(ineq)
    }
}

#[derive(Clone, Debug, Default)]
pub struct NlpDerivatives {
    pub objective_grad: Vec<f64>,
    pub eq_jac: Vec<SparseRow>,
    pub ineq_jac: Vec<SparseRow>,
}

/// A smooth NLP with simple bounds `lower ≤ x ≤ upper`.
pub trait Nlp: Sync {
    fn num_vars(&self) -> usize;
    fn lower_bounds(&self) -> Vec<f64>;
    fn upper_bounds(&self) -> Vec<f64>;
    fn eval(&self, x: &[f64]) -> NlpEval;
    /// Values and first derivatives at `x`.
    fn derivatives(&self, x: &[f64]) -> (NlpEval, NlpDerivatives);

    /// Dense diagonal blocks `(first index, H)` whose sum is the Hessian of
    /// `f + Σ eq_wᵢ cᵢ + Σ ineq_wⱼ gⱼ` at `x`. Without it the solver falls back to
    /// Gauss–Newton curvature.
    fn weighted_hessian_blocks(
        &self,
        _x: &[f64],
        _eq_w: &[f64],
        _ineq_w: &[f64],
    ) -> Option<Vec<(usize, Matrix)>> {
        None
    }
}

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VecFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Small NLP assembled from closures, differentiated by central differences.
pub struct DenseNlp {
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: ScalarFn,
    eq: VecFn,
    ineq: VecFn,
}

impl DenseNlp {
    pub fn new(n: usize, objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            n,
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            objective: Box::new(objective),
            eq: Box::new(|_| Vec::new()),
            ineq: Box::new(|_| Vec::new()),
        }
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_eq(mut self, eq: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.eq = Box::new(eq);
        self
    }

    pub fn with_ineq(mut self, ineq: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.ineq = Box::new(ineq);
        self
    }
}

impl Nlp for DenseNlp {
    fn num_vars(&self) -> usize {
        self.n
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }

    fn upper_bounds(&self) -> Vec<f64> {
        self.upper.clone()
    }

    fn eval(&self, x: &[f64]) -> NlpEval {
        NlpEval {
            objective: (self.objective)(x),
            eq: (self.eq)(x),
            ineq: (self.ineq)(x),
        }
    }

    fn derivatives(&self, x: &[f64]) -> (NlpEval, NlpDerivatives) {
        let base = self.eval(x);
        let mut der = NlpDerivatives {
            objective_grad: vec![0.0; self.n],
            eq_jac: vec![Vec::new(); base.eq.len()],
            ineq_jac: vec![Vec::new(); base.ineq.len()],
        };
        let mut xp = x.to_vec();
        for j in 0..self.n {
            let h = fd_step(x[j]);
            xp[j] = x[j] + h;
            let plus = self.eval(&xp);
            xp[j] = x[j] - h;
            let minus = self.eval(&xp);
            xp[j] = x[j];
            der.objective_grad[j] = (plus.objective - minus.objective) / (2.0 * h);
            for (i, row) in der.eq_jac.iter_mut().enumerate() {
                row.push((j, (plus.eq[i] - minus.eq[i]) / (2.0 * h)));
            }
            for (i, row) in der.ineq_jac.iter_mut().enumerate() {
                row.push((j, (plus.ineq[i] - minus.ineq[i]) / (2.0 * h)));
            }
        }
        (base, der)
    }

    fn weighted_hessian_blocks(
        &self,
        x: &[f64],
        eq_w: &[f64],
        ineq_w: &[f64],
    ) -> Option<Vec<(usize, Matrix)>> {
        let phi = |z: &[f64]| {
            let e = self.eval(z);
            e.objective + dot(&e.eq, eq_w) + dot(&e.ineq, ineq_w)
        };
        Some(vec![(0, fd_hessian(&phi, x))])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Second-difference Hessian of a scalar function.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Matrix {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1.0)).collect();
    let f0 = f(x);
    let mut z = x.to_vec();
    let mut hess = Matrix::zeros(n, n);
    for i in 0..n {
        z[i] = x[i] + h[i];
        let fp = f(&z);
        z[i] = x[i] - h[i];
        let fm = f(&z);
        z[i] = x[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                z[i] = x[i] + si * h[i];
                z[j] = x[j] + sj * h[j];
                let v = f(&z);
                z[i] = x[i];
                z[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Central-difference step, scaled with the magnitude of the coordinate.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Relative error with a small absolute floor so vanishing derivatives do not blow up.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Largest relative disagreement between the NLP's own derivatives and central finite
/// differences of [`Nlp::eval`], over `coords` randomly chosen coordinates.
pub fn gradient_check(nlp: &dyn Nlp, point: &[f64], coords: usize, seed: u64) -> f64 {
    let n = nlp.num_vars();
    if n == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = sample(&mut rng, n, coords.min(n)).into_vec();
    let (_, der) = nlp.derivatives(point);
    let column = |rows: &[SparseRow], j: usize| -> Vec<f64> {
        rows.iter()
            .map(|row| row.iter().filter(|(c, _)| *c == j).map(|(_, v)| v).sum())
            .collect()
    };
    let mut worst: f64 = 0.0;
    let mut xp = point.to_vec();
    for j in chosen {
        let h = fd_step(point[j]);
        xp[j] = point[j] + h;
        let plus = nlp.eval(&xp);
        xp[j] = point[j] - h;
        let minus = nlp.eval(&xp);
        xp[j] = point[j];
        let fd_obj = (plus.objective - minus.objective) / (2.0 * h);
        worst = worst.max(relative_error(der.objective_grad[j], fd_obj));
        for (i, v) in column(&der.eq_jac, j).into_iter().enumerate() {
            worst = worst.max(relative_error(v, (plus.eq[i] - minus.eq[i]) / (2.0 * h)));
        }
        for (i, v) in column(&der.ineq_jac, j).into_iter().enumerate() {
            worst = worst.max(relative_error(
                v,
                (plus.ineq[i] - minus.ineq[i]) / (2.0 * h),
            ));
        }
    }
    if worst.is_nan() {
        f64::INFINITY
    } else {
        worst
    }
}
