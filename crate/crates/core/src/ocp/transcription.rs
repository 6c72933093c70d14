//! Direct transcription of the bound-dynamics optimal control problem with forward-Euler
//! defects and a Cholesky parameterization of the covariance bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use super::nlp::{fd_hessian, fd_step, Nlp, NlpDerivatives, NlpEval, SparseRow};
use super::solver::{minimize, SolverOptions};
use crate::bounds::{aux_bound_rhs, sigma_bound_rhs, BoundTrajectory};
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky_floored, pack_lower, pack_upper, tri_len, unpack_lower, Matrix, Vector,
};
use crate::model::{AuxModel, InputPlan, ProcessModel, RatePlan, Sensor, TimeGrid};

/// Lower bound on the diagonal of every Cholesky factor.
pub const CHOLESKY_FLOOR: f64 = 1e-8;

/// Everything a cost or constraint callback can see at one grid node.
pub struct NodeView<'a> {
    pub k: usize,
    pub t: f64,
    pub xi: &'a [f64],
    pub sigma: &'a Matrix,
    pub input: &'a [f64],
    pub rates: &'a [f64],
    pub slack: &'a [f64],
}

pub type NodeFn = Arc<dyn Fn(&NodeView) -> f64 + Send + Sync>;

/// Scalar constraint `g(node) ≤ 0`, optionally restricted to a time window.
#[derive(Clone)]
pub struct Constraint {
    pub name: String,
    pub window: Option<(f64, f64)>,
    pub eval: NodeFn,
}

impl Constraint {
    pub fn new(
        name: impl Into<String>,
        eval: impl Fn(&NodeView) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            window: None,
            eval: Arc::new(eval),
        }
    }

    pub fn on_window(mut self, from: f64, to: f64) -> Self {
        self.window = Some((from, to));
        self
    }

    pub fn active_at(&self, t: f64) -> bool {
        self.window
            .is_none_or(|(a, b)| t >= a - 1e-12 && t <= b + 1e-12)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_sigma: f64,
    pub w_lambda: f64,
    pub w_u: f64,
    pub w_eps: f64,
}

#[derive(Clone)]
pub struct OcpSpec {
    pub running_cost: NodeFn,
    pub terminal_cost: Option<NodeFn>,
    pub running_constraints: Vec<Constraint>,
    pub terminal_constraints: Vec<Constraint>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub rate_upper: Option<f64>,
    pub slack_dim: usize,
    pub weights: Weights,
}

impl OcpSpec {
    /// Running cost `w_Σ tr(Σ̂) + w_λ λᵀλ + w_u uᵀu + w_ε εᵀε`, no constraints, unbounded inputs.
    pub fn weighted(weights: Weights, input_dim: usize, slack_dim: usize) -> Self {
        let w = weights;
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        Self {
            running_cost: Arc::new(move |n: &NodeView| {
                w.w_sigma * n.sigma.trace()
                    + w.w_lambda * sq(n.rates)
                    + w.w_u * sq(n.input)
                    + w.w_eps * sq(n.slack)
            }),
            terminal_cost: None,
            running_constraints: Vec::new(),
            terminal_constraints: Vec::new(),
            input_lower: vec![f64::NEG_INFINITY; input_dim],
            input_upper: vec![f64::INFINITY; input_dim],
            rate_upper: None,
            slack_dim,
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.input_lower.len() != self.input_upper.len() {
            problems.push("input box bounds have different lengths".to_string());
        }
        for (i, (lo, hi)) in self.input_lower.iter().zip(&self.input_upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                problems.push(format!("input box {i} is not ordered: [{lo}, {hi}]"));
            }
        }
        let w = &self.weights;
        for (name, v) in [
            ("w_sigma", w.w_sigma),
            ("w_lambda", w.w_lambda),
            ("w_u", w.w_u),
            ("w_eps", w.w_eps),
        ] {
            if v.is_nan() || v < 0.0 {
                problems.push(format!("weight {name} must be non-negative, got {v}"));
            }
        }
        if let Some(cap) = self.rate_upper {
            if cap.is_nan() || cap < 0.0 {
                problems.push(format!("rate_upper must be non-negative, got {cap}"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Transcription(problems.join("; ")))
        }
    }
}

/// Per-node variable block `[u, λ, ε, ξ̂, L]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub nodes: usize,
    pub m_u: usize,
    pub sensors: usize,
    pub slack: usize,
    pub n_xi: usize,
    pub n: usize,
}

impl Layout {
    pub fn block(&self) -> usize {
        self.m_u + self.sensors + self.slack + self.n_xi + tri_len(self.n)
    }

    pub fn num_vars(&self) -> usize {
        self.nodes * self.block()
    }

    pub fn offset(&self, k: usize) -> usize {
        k * self.block()
    }

    pub fn rate_offset(&self) -> usize {
        self.m_u
    }

    pub fn slack_offset(&self) -> usize {
        self.m_u + self.sensors
    }

    pub fn xi_offset(&self) -> usize {
        self.slack_offset() + self.slack
    }

    pub fn chol_offset(&self) -> usize {
        self.xi_offset() + self.n_xi
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionVector {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl DecisionVector {
    fn node(&self, k: usize) -> &[f64] {
        let b = self.layout.block();
        &self.values[k * b..(k + 1) * b]
    }

    pub fn input(&self, k: usize) -> &[f64] {
        &self.node(k)[..self.layout.m_u]
    }

    pub fn rates(&self, k: usize) -> &[f64] {
        let l = &self.layout;
        &self.node(k)[l.rate_offset()..l.rate_offset() + l.sensors]
    }

    pub fn slack(&self, k: usize) -> &[f64] {
        let l = &self.layout;
        &self.node(k)[l.slack_offset()..l.slack_offset() + l.slack]
    }

    pub fn xi(&self, k: usize) -> &[f64] {
        let l = &self.layout;
        &self.node(k)[l.xi_offset()..l.xi_offset() + l.n_xi]
    }

    pub fn cholesky(&self, k: usize) -> Matrix {
        let l = &self.layout;
        unpack_lower(l.n, &self.node(k)[l.chol_offset()..])
    }

    pub fn sigma(&self, k: usize) -> Matrix {
        let l = self.cholesky(k);
        &l * l.transpose()
    }
}

/// The transcribed problem; implements [`Nlp`].
pub struct TranscribedOcp {
    pub spec: OcpSpec,
    pub process: ProcessModel,
    pub aux: AuxModel,
    pub sensors: Vec<Sensor>,
    pub grid: TimeGrid,
    pub sigma0: Matrix,
    pub xi0: Vec<f64>,
    pub layout: Layout,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Indices of the running constraints active at each node `0..N-1`.
    active: Vec<Vec<usize>>,
}

#[allow(clippy::too_many_arguments)]
pub fn transcribe(
    spec: OcpSpec,
    process: ProcessModel,
    aux: AuxModel,
    sensors: Vec<Sensor>,
    grid: TimeGrid,
    sigma0: Matrix,
    xi0: Vec<f64>,
) -> Result<TranscribedOcp> {
    spec.validate()?;
    let nodes = grid.len();
    if nodes < 3 {
        return Err(Error::Transcription(format!(
            "grid needs at least 3 nodes, got {nodes}"
        )));
    }
    let n = process.n;
    if sigma0.nrows() != n || sigma0.ncols() != n {
        return Err(Error::Transcription(format!(
            "sigma0 is {}x{}, state dimension is {n}",
            sigma0.nrows(),
            sigma0.ncols()
        )));
    }
    if xi0.len() != aux.n_xi {
        return Err(Error::Transcription(format!(
            "xi0 has length {}, aux dimension is {}",
            xi0.len(),
            aux.n_xi
        )));
    }
    if spec.input_lower.len() != aux.m_u {
        return Err(Error::Transcription(format!(
            "input box has dimension {}, aux model expects {}",
            spec.input_lower.len(),
            aux.m_u
        )));
    }
    for (i, s) in sensors.iter().enumerate() {
        if s.id != i + 1 {
            return Err(Error::Transcription(format!(
                "sensor at position {} has id {}",
                i + 1,
                s.id
            )));
        }
    }
    let layout = Layout {
        nodes,
        m_u: aux.m_u,
        sensors: sensors.len(),
        slack: spec.slack_dim,
        n_xi: aux.n_xi,
        n,
    };
    let b = layout.block();
    let mut lower = vec![f64::NEG_INFINITY; layout.num_vars()];
    let mut upper = vec![f64::INFINITY; layout.num_vars()];
    let l0 = cholesky_floored(&sigma0, CHOLESKY_FLOOR);
    let mut l0_packed = vec![0.0; tri_len(n)];
    pack_lower(&l0, &mut l0_packed);
    for k in 0..nodes {
        let o = k * b;
        let last = k + 1 == nodes;
        for i in 0..layout.m_u {
            if last {
                let pin = 0.0_f64.clamp(spec.input_lower[i], spec.input_upper[i]);
                lower[o + i] = pin;
                upper[o + i] = pin;
            } else {
                lower[o + i] = spec.input_lower[i];
                upper[o + i] = spec.input_upper[i];
            }
        }
        for s in 0..layout.sensors {
            lower[o + layout.rate_offset() + s] = 0.0;
            upper[o + layout.rate_offset() + s] = if last {
                0.0
            } else {
                spec.rate_upper.unwrap_or(f64::INFINITY)
            };
        }
        for e in 0..layout.slack {
            lower[o + layout.slack_offset() + e] = 0.0;
            upper[o + layout.slack_offset() + e] = if last { 0.0 } else { f64::INFINITY };
        }
        if k == 0 {
            for (i, v) in xi0.iter().enumerate() {
                lower[o + layout.xi_offset() + i] = *v;
                upper[o + layout.xi_offset() + i] = *v;
            }
            for (i, v) in l0_packed.iter().enumerate() {
                lower[o + layout.chol_offset() + i] = *v;
                upper[o + layout.chol_offset() + i] = *v;
            }
        } else {
            for i in 0..n {
                lower[o + layout.chol_offset() + tri_len(i) + i] = CHOLESKY_FLOOR;
            }
        }
    }
    let active = (0..nodes - 1)
        .map(|k| {
            let t = grid.node(k);
            (0..spec.running_constraints.len())
                .filter(|&c| spec.running_constraints[c].active_at(t))
                .collect()
        })
        .collect();
    Ok(TranscribedOcp {
        spec,
        process,
        aux,
        sensors,
        grid,
        sigma0,
        xi0,
        layout,
        lower,
        upper,
        active,
    })
}

impl TranscribedOcp {
    fn num_eq(&self) -> usize {
        (self.layout.nodes - 1) * (self.layout.n_xi + tri_len(self.layout.n))
    }

    /// Node function: `[h·𝓛, ξ̂ + h·ξ̂', upper(Σ̂ + h·Σ̂'), 𝓒...]` for `k < N−1`,
    /// `[𝓛_T, 𝓒_T...]` at the last node.
    fn node_outputs(&self, k: usize, z: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let input = &z[..l.m_u];
        let rates = &z[l.rate_offset()..l.rate_offset() + l.sensors];
        let slack = &z[l.slack_offset()..l.slack_offset() + l.slack];
        let xi = &z[l.xi_offset()..l.xi_offset() + l.n_xi];
        let chol = unpack_lower(l.n, &z[l.chol_offset()..]);
        let sigma = &chol * chol.transpose();
        let t = self.grid.node(k);
        let view = NodeView {
            k,
            t,
            xi,
            sigma: &sigma,
            input,
            rates,
            slack,
        };
        if k + 1 == l.nodes {
            let mut out = vec![self.spec.terminal_cost.as_ref().map_or(0.0, |f| f(&view))];
            out.extend(
                self.spec
                    .terminal_constraints
                    .iter()
                    .map(|c| (c.eval)(&view)),
            );
            return out;
        }
        let h = self.grid.step(k);
        let tri = tri_len(l.n);
        let mut out = Vec::with_capacity(1 + l.n_xi + tri + self.active[k].len());
        out.push(h * (self.spec.running_cost)(&view));
        let aux_rhs = aux_bound_rhs(xi, input, rates, &self.aux, &self.sensors, t);
        out.extend(xi.iter().zip(aux_rhs.iter()).map(|(x, d)| x + h * d));
        let mut packed = vec![f64::NAN; tri];
        if let Ok(rhs) = sigma_bound_rhs(&sigma, xi, rates, &self.sensors, &self.process, t) {
            pack_upper(&(&sigma + rhs * h), &mut packed);
        }
        out.extend(packed);
        out.extend(
            self.active[k]
                .iter()
                .map(|&c| (self.spec.running_constraints[c].eval)(&view)),
        );
        out
    }

    fn assemble(&self, x: &[f64], outputs: &[Vec<f64>]) -> NlpEval {
        let l = &self.layout;
        let b = l.block();
        let tri = tri_len(l.n);
        let mut eval = NlpEval {
            objective: 0.0,
            eq: Vec::with_capacity(self.num_eq()),
            ineq: Vec::new(),
        };
        for (k, out) in outputs.iter().enumerate() {
            eval.objective += out[0];
            if k + 1 == l.nodes {
                eval.ineq.extend_from_slice(&out[1..]);
                continue;
            }
            let next = &x[(k + 1) * b..(k + 2) * b];
            for i in 0..l.n_xi {
                eval.eq.push(next[l.xi_offset() + i] - out[1 + i]);
            }
            let chol = unpack_lower(l.n, &next[l.chol_offset()..]);
            let mut packed = vec![0.0; tri];
            pack_upper(&(&chol * chol.transpose()), &mut packed);
            for (i, p) in packed.iter().enumerate() {
                eval.eq.push(p - out[1 + l.n_xi + i]);
            }
            eval.ineq.extend_from_slice(&out[1 + l.n_xi + tri..]);
        }
        eval
    }

    fn node_slice<'a>(&self, x: &'a [f64], k: usize) -> &'a [f64] {
        let b = self.layout.block();
        &x[k * b..(k + 1) * b]
    }

    /// Forward-Euler roll-forward from the fixed initial values under node-wise plans.
    /// The result has vanishing defects whenever every propagated `Σ̂` stays positive definite.
    pub fn roll_forward(
        &self,
        node_inputs: &[Vec<f64>],
        node_rates: &[Vec<f64>],
        node_slack: &[Vec<f64>],
    ) -> Result<DecisionVector> {
        let l = self.layout;
        let nodes = l.nodes;
        if node_inputs.len() < nodes - 1
            || node_rates.len() < nodes - 1
            || node_slack.len() < nodes - 1
        {
            return Err(Error::Dimension(
                "node plans must cover the first N−1 nodes".into(),
            ));
        }
        let b = l.block();
        let mut values = vec![0.0; l.num_vars()];
        for k in 0..nodes {
            let o = k * b;
            let last = k + 1 == nodes;
            for i in 0..l.m_u {
                values[o + i] = if last {
                    self.lower[o + i]
                } else {
                    node_inputs[k][i]
                };
            }
            for s in 0..l.sensors {
                values[o + l.rate_offset() + s] = if last { 0.0 } else { node_rates[k][s] };
            }
            for e in 0..l.slack {
                values[o + l.slack_offset() + e] = if last { 0.0 } else { node_slack[k][e] };
            }
        }
        values[l.xi_offset()..l.xi_offset() + l.n_xi].copy_from_slice(&self.xi0);
        for i in 0..tri_len(l.n) {
            values[l.chol_offset() + i] = self.lower[l.chol_offset() + i];
        }
        for k in 0..nodes - 1 {
            let out = self.node_outputs(k, &values[k * b..(k + 1) * b]);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged {
                    t: self.grid.node(k),
                });
            }
            let o = (k + 1) * b;
            values[o + l.xi_offset()..o + l.xi_offset() + l.n_xi]
                .copy_from_slice(&out[1..1 + l.n_xi]);
            let mut sigma = Matrix::zeros(l.n, l.n);
            let mut idx = 1 + l.n_xi;
            for i in 0..l.n {
                for j in i..l.n {
                    sigma[(i, j)] = out[idx];
                    sigma[(j, i)] = out[idx];
                    idx += 1;
                }
            }
            let chol = cholesky_floored(&sigma, CHOLESKY_FLOOR);
            pack_lower(&chol, &mut values[o + l.chol_offset()..o + b]);
        }
        Ok(DecisionVector { layout: l, values })
    }

    /// Default starting point: unit rates, inputs at the box midpoint, zero slack, and
    /// the matching roll-forward of `ξ̂` and `Σ̂`.
    pub fn initial_guess(&self) -> Result<DecisionVector> {
        let l = self.layout;
        let rate = self.spec.rate_upper.map_or(1.0, |cap| cap.min(1.0));
        let input: Vec<f64> = self
            .spec
            .input_lower
            .iter()
            .zip(&self.spec.input_upper)
            .map(|(&lo, &hi)| {
                if lo.is_finite() && hi.is_finite() {
                    0.5 * (lo + hi)
                } else {
                    0.0_f64.clamp(lo, hi)
                }
            })
            .collect();
        let nodes = l.nodes;
        self.roll_forward(
            &vec![input; nodes],
            &vec![vec![rate; l.sensors]; nodes],
            &vec![vec![0.0; l.slack]; nodes],
        )
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    /// Largest absolute dynamics-defect residual at `x`.
    pub fn max_defect(&self, x: &[f64]) -> f64 {
        self.eval(x).eq.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Nlp for TranscribedOcp {
    fn num_vars(&self) -> usize {
        self.layout.num_vars()
    }

    fn lower_bounds(&self) -> Vec<f64> {
        self.lower.clone()
    }

    fn upper_bounds(&self) -> Vec<f64> {
        self.upper.clone()
    }

    fn eval(&self, x: &[f64]) -> NlpEval {
        let outputs: Vec<Vec<f64>> = (0..self.layout.nodes)
            .into_par_iter()
            .map(|k| self.node_outputs(k, self.node_slice(x, k)))
            .collect();
        self.assemble(x, &outputs)
    }

    fn derivatives(&self, x: &[f64]) -> (NlpEval, NlpDerivatives) {
        let l = self.layout;
        let b = l.block();
        let tri = tri_len(l.n);
        // Per node: base outputs plus the local Jacobian, one column per block variable.
        let local: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..l.nodes)
            .into_par_iter()
            .map(|k| {
                let z = self.node_slice(x, k);
                let base = self.node_outputs(k, z);
                let mut zp = z.to_vec();
                let cols = (0..b)
                    .map(|j| {
                        let h = fd_step(z[j]);
                        zp[j] = z[j] + h;
                        let plus = self.node_outputs(k, &zp);
                        zp[j] = z[j] - h;
                        let minus = self.node_outputs(k, &zp);
                        zp[j] = z[j];
                        plus.iter()
                            .zip(&minus)
                            .map(|(p, m)| (p - m) / (2.0 * h))
                            .collect()
                    })
                    .collect();
                (base, cols)
            })
            .collect();
        let outputs: Vec<Vec<f64>> = local.iter().map(|(o, _)| o.clone()).collect();
        let eval = self.assemble(x, &outputs);

        let mut der = NlpDerivatives {
            objective_grad: vec![0.0; l.num_vars()],
            eq_jac: Vec::with_capacity(eval.eq.len()),
            ineq_jac: Vec::with_capacity(eval.ineq.len()),
        };
        let local_row = |cols: &[Vec<f64>], out: usize, offset: usize, sign: f64| -> SparseRow {
            cols.iter()
                .enumerate()
                .filter(|(_, c)| c[out] != 0.0)
                .map(|(j, c)| (offset + j, sign * c[out]))
                .collect()
        };
        for (k, (base, cols)) in local.iter().enumerate() {
            let o = k * b;
            for (j, c) in cols.iter().enumerate() {
                der.objective_grad[o + j] += c[0];
            }
            if k + 1 == l.nodes {
                for i in 1..base.len() {
                    der.ineq_jac.push(local_row(cols, i, o, 1.0));
                }
                continue;
            }
            let next = o + b;
            for i in 0..l.n_xi {
                let mut row = local_row(cols, 1 + i, o, -1.0);
                row.push((next + l.xi_offset() + i, 1.0));
                der.eq_jac.push(row);
            }
            let lnext = unpack_lower(l.n, &x[next + l.chol_offset()..next + b]);
            let mut idx = 0;
            for a in 0..l.n {
                for c in a..l.n {
                    let mut row = local_row(cols, 1 + l.n_xi + idx, o, -1.0);
                    // d(LLᵀ)_{ac} / dL_{pq} = δ_{ap} L_{cq} + δ_{cp} L_{aq}
                    for q in 0..=a {
                        let v = if a == c {
                            2.0 * lnext[(a, q)]
                        } else {
                            lnext[(c, q)]
                        };
                        row.push((next + l.chol_offset() + tri_len(a) + q, v));
                    }
                    if a != c {
                        for q in 0..=c {
                            row.push((next + l.chol_offset() + tri_len(c) + q, lnext[(a, q)]));
                        }
                    }
                    der.eq_jac.push(row);
                    idx += 1;
                }
            }
            for i in 1 + l.n_xi + tri..base.len() {
                der.ineq_jac.push(local_row(cols, i, o, 1.0));
            }
        }
        (eval, der)
    }

    fn weighted_hessian_blocks(
        &self,
        x: &[f64],
        eq_w: &[f64],
        ineq_w: &[f64],
    ) -> Option<Vec<(usize, Matrix)>> {
        let l = self.layout;
        let b = l.block();
        let tri = tri_len(l.n);
        let per_node_eq = l.n_xi + tri;
        let mut ineq_start = Vec::with_capacity(l.nodes);
        let mut acc = 0;
        for k in 0..l.nodes {
            ineq_start.push(acc);
            acc += if k + 1 == l.nodes {
                self.spec.terminal_constraints.len()
            } else {
                self.active[k].len()
            };
        }
        let mut blocks: Vec<(usize, Matrix)> = (0..l.nodes)
            .into_par_iter()
            .map(|k| {
                let last = k + 1 == l.nodes;
                let gi = &ineq_w[ineq_start[k]..];
                let ge = if last {
                    &[][..]
                } else {
                    &eq_w[k * per_node_eq..(k + 1) * per_node_eq]
                };
                // Defects are `next − out`, so node outputs enter with negated equality weights.
                let phi = |z: &[f64]| {
                    let out = self.node_outputs(k, z);
                    let mut v = out[0];
                    if last {
                        for (o, w) in out[1..].iter().zip(gi) {
                            v += w * o;
                        }
                    } else {
                        for (o, w) in out[1..1 + per_node_eq].iter().zip(ge) {
                            v -= w * o;
                        }
                        for (o, w) in out[1 + per_node_eq..].iter().zip(gi) {
                            v += w * o;
                        }
                    }
                    v
                };
                (k * b, fd_hessian(&phi, self.node_slice(x, k)))
            })
            .collect();
        // Curvature of `L Lᵀ` in the next node's factor.
        for k in 0..l.nodes - 1 {
            let block = &mut blocks[k + 1].1;
            let w = &eq_w[k * per_node_eq + l.n_xi..(k + 1) * per_node_eq];
            let mut idx = 0;
            for a in 0..l.n {
                for c in a..l.n {
                    for q in 0..=a {
                        let ia = l.chol_offset() + tri_len(a) + q;
                        let ic = l.chol_offset() + tri_len(c) + q;
                        if a == c {
                            block[(ia, ia)] += 2.0 * w[idx];
                        } else {
                            block[(ia, ic)] += w[idx];
                            block[(ic, ia)] += w[idx];
                        }
                    }
                    idx += 1;
                }
            }
        }
        Some(blocks)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveDiagnostics {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub max_defect: f64,
    pub objective: f64,
    pub projected_gradient: f64,
    pub converged: bool,
    /// Set when the auxiliary bound carries no curvature guarantee.
    pub heuristic: bool,
}

#[derive(Clone, Debug)]
pub struct OcpSolution {
    pub grid: TimeGrid,
    /// `N × S` node rates.
    pub node_rates: Vec<Vec<f64>>,
    pub node_inputs: Vec<Vec<f64>>,
    pub node_slack: Vec<Vec<f64>>,
    pub bounds: BoundTrajectory,
    pub decision: DecisionVector,
    pub diagnostics: SolveDiagnostics,
}

impl OcpSolution {
    pub fn rate_plan(&self) -> RatePlan {
        extract_plan(self).0
    }
}

/// Solves the transcribed problem from `init` (projected onto the simple bounds).
pub fn solve_nlp(ocp: &TranscribedOcp, init: &DecisionVector, opts: &SolverOptions) -> OcpSolution {
    let report = minimize(ocp, &init.values, opts);
    let decision = DecisionVector {
        layout: ocp.layout,
        values: report.x,
    };
    let nodes = ocp.layout.nodes;
    let bounds = BoundTrajectory {
        grid: ocp.grid.clone(),
        sigma_hat: (0..nodes).map(|k| decision.sigma(k)).collect(),
        xi_hat: (0..nodes)
            .map(|k| Vector::from_column_slice(decision.xi(k)))
            .collect(),
        heuristic: ocp.aux.convexity.is_heuristic(),
    };
    OcpSolution {
        grid: ocp.grid.clone(),
        node_rates: (0..nodes).map(|k| decision.rates(k).to_vec()).collect(),
        node_inputs: (0..nodes).map(|k| decision.input(k).to_vec()).collect(),
        node_slack: (0..nodes).map(|k| decision.slack(k).to_vec()).collect(),
        bounds,
        diagnostics: SolveDiagnostics {
            outer_iterations: report.outer_iterations,
            inner_iterations: report.inner_iterations,
            max_violation: report.max_violation,
            max_defect: ocp.max_defect(&decision.values),
            objective: report.objective,
            projected_gradient: report.projected_gradient,
            converged: report.converged,
            heuristic: ocp.aux.convexity.is_heuristic(),
        },
        decision,
    }
}

/// Interval-constant plans from node values by the left-node convention; negative
/// round-off in the rates is clamped to zero.
pub fn extract_plan(sol: &OcpSolution) -> (RatePlan, InputPlan) {
    let intervals = sol.grid.num_intervals();
    let sensors = sol.node_rates.first().map_or(0, Vec::len);
    let rates = (0..sensors)
        .map(|s| {
            (0..intervals)
                .map(|k| sol.node_rates[k][s].max(0.0))
                .collect()
        })
        .collect();
    let dim = sol.node_inputs.first().map_or(0, Vec::len);
    let plan = RatePlan {
        grid: sol.grid.clone(),
        rates,
    };
    let inputs = InputPlan {
        dim,
        values: sol.node_inputs[..intervals].to_vec(),
    };
    (plan, inputs)
}
