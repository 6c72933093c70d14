//! Experiment models assembled from declarative JSON configs: the energy-constrained
//! robot (optionally with radiation damage), water-quality monitoring with fouling, and a
//! scalar test model.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::gp::{build_kernel_ssm, KernelKind};
use crate::linalg::{Matrix, Vector};
use crate::model::{AuxModel, ConvexityTag, ProcessModel, Sensor, TimeGrid};
use crate::ocp::{Constraint, NodeView, OcpSpec, SolverOptions, Weights};

/// Constraint on the post-measurement state used by the greedy baseline.
pub type StateConstraint = Arc<dyn Fn(&[f64], &Matrix, f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct RobotConfig {
    pub c_e: f64,
    pub r_e: f64,
    pub c_u: f64,
    pub c_1: f64,
    pub c_2: f64,
    pub r_1max: f64,
    pub r_2max: f64,
    pub r_1: f64,
    pub r_2: f64,
    pub p_b: [f64; 2],
    pub p_p: [f64; 2],
    pub gamma_1: f64,
    pub gamma_2: f64,
    pub r_zeta: f64,
    /// Lower bounds of `(v, ω)`.
    pub u_lower: [f64; 2],
    pub u_upper: [f64; 2],
    pub c_sigma: f64,
    pub c_eta: f64,
    /// Extra energy kept in reserve while planning; defaults to one measurement per sensor.
    #[serde(default)]
    pub eta_margin: Option<f64>,
    pub w_sigma: f64,
    pub w_lambda: f64,
    pub w_u: f64,
    pub w_eps: f64,
    pub horizon: f64,
    pub grid_n: usize,
    #[serde(default)]
    pub with_radiation: bool,
    pub kernel_lengthscale: f64,
    pub kernel_variance: f64,
    pub eta_0: f64,
    #[serde(default)]
    pub theta_0: f64,
    #[serde(default = "default_trace_window_start")]
    pub trace_window_start: f64,
    #[serde(default = "default_terminal_tol")]
    pub terminal_tol: f64,
    #[serde(default)]
    pub rate_upper: Option<f64>,
    #[serde(flatten)]
    pub common: CommonOptions,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct WaterConfig {
    pub kappa: f64,
    pub x_amb: f64,
    pub sigma: f64,
    pub r_10: f64,
    pub r_20: f64,
    pub lambda_1f: f64,
    pub lambda_2f: f64,
    pub alpha_f: f64,
    pub rho_1f: f64,
    pub rho_2f: f64,
    pub gamma_f: f64,
    pub c_xi: f64,
    pub u_lower: [f64; 2],
    pub u_upper: [f64; 2],
    pub w_sigma: f64,
    pub w_lambda: f64,
    pub w_u: f64,
    pub horizon: f64,
    pub grid_n: usize,
    pub mu_0: f64,
    pub sigma_0: f64,
    #[serde(default)]
    pub xi_0: [f64; 2],
    #[serde(default)]
    pub rate_upper: Option<f64>,
    #[serde(flatten)]
    pub common: CommonOptions,
}

/// Scalar model `dx = a x dt + √σ² dW`, `y = c x + v`, `v ~ N(0, r)`, one sensor.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct ScalarConfig {
    pub a: f64,
    pub sigma2: f64,
    pub c: f64,
    pub r: f64,
    pub sigma_0: f64,
    pub horizon: f64,
    pub grid_n: usize,
    pub w_sigma: f64,
    pub w_lambda: f64,
    #[serde(default)]
    pub rate_upper: Option<f64>,
    #[serde(flatten)]
    pub common: CommonOptions,
}

/// Solver and baseline settings shared by every scenario.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq, Default)]
pub struct CommonOptions {
    pub feas_tol: Option<f64>,
    pub opt_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub penalty_growth: Option<f64>,
    /// Per-sensor greedy costs in trace units.
    pub greedy_costs: Option<Vec<f64>>,
    pub greedy_penalty: Option<f64>,
    /// Realizations drawn by the M-Optimized baseline.
    pub m_optimized_samples: Option<usize>,
    /// Penalty weight of constraint violations in the M-Optimized evaluator.
    pub m_optimized_penalty: Option<f64>,
}

fn default_trace_window_start() -> f64 {
    0.5
}

fn default_terminal_tol() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScenarioConfig {
    Robot(RobotConfig),
    Water(WaterConfig),
    Scalar(ScalarConfig),
}

impl ScenarioConfig {
    /// Parses a config whose `"scenario"` key selects the model (`robot`, `water`, `scalar`).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text)?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config(vec!["config must be a JSON object".into()]))?;
        let kind = obj
            .remove("scenario")
            .and_then(|v| v.as_str().map(str::to_owned))
            .ok_or_else(|| Error::Config(vec!["missing string key \"scenario\"".into()]))?;
        let keys: Vec<String> = obj.keys().cloned().collect();
        let (parsed, known) = match kind.as_str() {
            "robot" => {
                let c: RobotConfig = serde_json::from_value(value)?;
                let known = serde_json::to_value(&c)?;
                (Self::Robot(c), known)
            }
            "water" => {
                let c: WaterConfig = serde_json::from_value(value)?;
                let known = serde_json::to_value(&c)?;
                (Self::Water(c), known)
            }
            "scalar" => {
                let c: ScalarConfig = serde_json::from_value(value)?;
                let known = serde_json::to_value(&c)?;
                (Self::Scalar(c), known)
            }
            other => return Err(Error::Config(vec![format!("unknown scenario \"{other}\"")])),
        };
        // Every optional key serializes (as null when absent), so the round trip lists all known keys.
        let unknown: Vec<String> = keys
            .into_iter()
            .filter(|k| known.get(k).is_none())
            .map(|k| format!("unknown key \"{k}\""))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(unknown));
        }
        parsed.validate()?;
        Ok(parsed)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Robot(c) if c.with_radiation => "robot_radiation",
            Self::Robot(_) => "robot",
            Self::Water(_) => "water",
            Self::Scalar(_) => "scalar",
        }
    }

    pub fn common(&self) -> &CommonOptions {
        match self {
            Self::Robot(c) => &c.common,
            Self::Water(c) => &c.common,
            Self::Scalar(c) => &c.common,
        }
    }

    pub fn grid_n_mut(&mut self) -> &mut usize {
        match self {
            Self::Robot(c) => &mut c.grid_n,
            Self::Water(c) => &mut c.grid_n,
            Self::Scalar(c) => &mut c.grid_n,
        }
    }

    pub fn common_mut(&mut self) -> &mut CommonOptions {
        match self {
            Self::Robot(c) => &mut c.common,
            Self::Water(c) => &mut c.common,
            Self::Scalar(c) => &mut c.common,
        }
    }

    /// Checks every documented ordering and positivity requirement, reporting all failures.
    pub fn validate(&self) -> Result<()> {
        let mut v = Violations::default();
        match self {
            Self::Robot(c) => {
                v.check(
                    c.c_u >= c.c_1 && c.c_1 >= c.c_2 && c.c_2 >= 0.0,
                    "energy costs must satisfy c_u ≥ c_1 ≥ c_2 ≥ 0",
                );
                v.check(
                    c.r_2max > c.r_1max && c.r_1max > 0.0,
                    "noise scales must satisfy r_2max > r_1max > 0",
                );
                v.check(
                    c.r_2 > c.r_1 && c.r_1 > 0.0,
                    "noise growth rates must satisfy r_2 > r_1 > 0",
                );
                v.check(
                    c.gamma_1 > c.gamma_2 && c.gamma_2 >= 0.0,
                    "radiation increments must satisfy gamma_1 > gamma_2 ≥ 0",
                );
                v.check(
                    c.c_e >= 0.0 && c.r_e >= 0.0,
                    "charging parameters c_e, r_e must be non-negative",
                );
                v.check(c.r_zeta > 0.0, "r_zeta must be positive");
                v.check(c.c_eta >= 0.0, "c_eta must be non-negative");
                v.check(c.eta_0 >= 0.0, "eta_0 must be non-negative");
                v.check(
                    c.eta_margin.is_none_or(|m| m >= 0.0),
                    "eta_margin must be non-negative",
                );
                v.check(
                    c.u_lower.iter().all(|&u| u >= 0.0),
                    "u_lower must be non-negative (energy drain is linear in v and ω)",
                );
                v.check(
                    c.kernel_lengthscale > 0.0 && c.kernel_variance > 0.0,
                    "kernel lengthscale and variance must be positive",
                );
                v.check(c.terminal_tol > 0.0, "terminal_tol must be positive");
                v.boxes(&c.u_lower, &c.u_upper);
                v.weights(&[
                    ("w_sigma", c.w_sigma),
                    ("w_lambda", c.w_lambda),
                    ("w_u", c.w_u),
                    ("w_eps", c.w_eps),
                ]);
                v.horizon(c.horizon, c.grid_n);
                v.rate_cap(c.rate_upper);
                v.common(&c.common, 2);
            }
            Self::Water(c) => {
                v.check(
                    c.r_10 > c.r_20 && c.r_20 > 0.0,
                    "base noise must satisfy r_10 > r_20 > 0",
                );
                v.check(
                    c.rho_2f > c.rho_1f && c.rho_1f > 0.0,
                    "fouling increments must satisfy rho_2f > rho_1f > 0",
                );
                v.check(c.kappa > 0.0, "kappa must be positive");
                v.check(c.x_amb > 0.0, "x_amb must be positive");
                v.check(c.sigma > 0.0, "sigma must be positive");
                v.check(
                    c.lambda_1f > 0.0 && c.lambda_2f > 0.0,
                    "fouling noise exponents must be positive",
                );
                v.check(c.alpha_f > 0.0, "alpha_f must be positive");
                v.check(c.gamma_f > 0.0, "gamma_f must be positive");
                v.check(c.c_xi > 0.0, "c_xi must be positive");
                v.check(c.sigma_0 > 0.0, "sigma_0 must be positive");
                v.check(
                    c.xi_0.iter().all(|x| *x >= 0.0),
                    "initial fouling must be non-negative",
                );
                v.boxes(&c.u_lower, &c.u_upper);
                v.check(
                    c.u_lower.iter().all(|u| *u >= 0.0),
                    "defouling inputs must be non-negative",
                );
                v.weights(&[
                    ("w_sigma", c.w_sigma),
                    ("w_lambda", c.w_lambda),
                    ("w_u", c.w_u),
                ]);
                v.horizon(c.horizon, c.grid_n);
                v.rate_cap(c.rate_upper);
                v.common(&c.common, 2);
            }
            Self::Scalar(c) => {
                v.check(c.sigma2 >= 0.0, "sigma2 must be non-negative");
                v.check(c.r > 0.0, "r must be positive");
                v.check(c.sigma_0 >= 0.0, "sigma_0 must be non-negative");
                v.weights(&[("w_sigma", c.w_sigma), ("w_lambda", c.w_lambda)]);
                v.horizon(c.horizon, c.grid_n);
                v.rate_cap(c.rate_upper);
                v.common(&c.common, 1);
            }
        }
        v.finish()
    }
}

#[derive(Default)]
struct Violations(Vec<String>);

impl Violations {
    fn check(&mut self, ok: bool, msg: &str) {
        if !ok {
            self.0.push(msg.to_string());
        }
    }

    fn boxes(&mut self, lo: &[f64], hi: &[f64]) {
        for (i, (l, h)) in lo.iter().zip(hi).enumerate() {
            if !(l <= h) {
                self.0.push(format!(
                    "input box {i} is not ordered: u_lower = {l} > u_upper = {h}"
                ));
            }
        }
    }

    fn weights(&mut self, weights: &[(&str, f64)]) {
        for (name, w) in weights {
            if !(*w >= 0.0) {
                self.0.push(format!("{name} must be non-negative"));
            }
        }
    }

    fn horizon(&mut self, horizon: f64, grid_n: usize) {
        self.check(
            horizon > 0.0 && horizon.is_finite(),
            "horizon must be positive",
        );
        self.check(grid_n >= 3, "grid_n must be at least 3");
    }

    fn rate_cap(&mut self, cap: Option<f64>) {
        if let Some(c) = cap {
            self.check(c >= 0.0, "rate_upper must be non-negative");
        }
    }

    fn common(&mut self, c: &CommonOptions, sensors: usize) {
        if let Some(t) = c.feas_tol {
            self.check(t > 0.0, "feas_tol must be positive");
        }
        if let Some(t) = c.opt_tol {
            self.check(t > 0.0, "opt_tol must be positive");
        }
        if let Some(g) = c.penalty_growth {
            self.check(g > 1.0, "penalty_growth must exceed 1");
        }
        if let Some(costs) = &c.greedy_costs {
            self.check(
                costs.len() == sensors,
                "greedy_costs needs one entry per sensor",
            );
        }
        if let Some(k) = c.m_optimized_samples {
            self.check(k >= 1, "m_optimized_samples must be at least 1");
        }
    }

    fn finish(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(self.0))
        }
    }
}

/// A reported trajectory signal.
#[derive(Clone, Debug, PartialEq)]
pub enum Signal {
    Trace,
    /// Sum of the listed auxiliary components.
    Aux(Vec<usize>),
}

/// A fully assembled experiment.
#[derive(Clone)]
pub struct Scenario {
    pub name: String,
    pub process: ProcessModel,
    pub aux: AuxModel,
    pub sensors: Vec<Sensor>,
    pub spec: OcpSpec,
    pub grid: TimeGrid,
    pub sigma0: Matrix,
    pub mean0: Vector,
    pub xi0: Vec<f64>,
    /// Added to the first state component when reporting (models written in deviation form).
    pub state_offset: f64,
    pub solver: SolverOptions,
    pub greedy_costs: Vec<f64>,
    pub greedy_penalty: f64,
    pub greedy_constraints: Vec<StateConstraint>,
    pub m_optimized_samples: usize,
    pub m_optimized_penalty: f64,
    /// Named signals summarized by comparisons; the first is always the covariance trace.
    pub signals: Vec<(String, Signal)>,
    /// `(aux index, floor)` of an energy-type lower bound, if any.
    pub energy_floor: Option<(usize, f64)>,
    pub aux_names: Vec<String>,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        match cfg {
            ScenarioConfig::Robot(c) => build_robot_scenario(c),
            ScenarioConfig::Water(c) => build_water_scenario(c),
            ScenarioConfig::Scalar(c) => build_scalar_scenario(c),
        }
    }

    /// Reported value of a signal for a state `(ξ, Σ)`.
    pub fn signal_value(&self, signal: &Signal, xi: &[f64], sigma: &Matrix) -> f64 {
        match signal {
            Signal::Trace => sigma.trace(),
            Signal::Aux(idx) => idx.iter().map(|&i| xi[i]).sum(),
        }
    }
}

fn solver_options(c: &CommonOptions) -> SolverOptions {
    let d = SolverOptions::default();
    SolverOptions {
        feas_tol: c.feas_tol.unwrap_or(d.feas_tol),
        opt_tol: c.opt_tol.unwrap_or(d.opt_tol),
        max_outer: c.max_outer.unwrap_or(d.max_outer),
        max_inner: c.max_inner.unwrap_or(d.max_inner),
        penalty_growth: c.penalty_growth.unwrap_or(d.penalty_growth),
        ..d
    }
}

fn sq_dist(p: &[f64], q: &[f64; 2]) -> f64 {
    (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
}

/// Unicycle robot with a Matérn-3/2 process, an energy budget and, optionally, radiation
/// damage accumulating on each sensor.
///
/// Auxiliary state: `[η, (ζ₁, ζ₂), p_x, p_y, θ]`; inputs `(v, ω)`.
pub fn build_robot_scenario(c: &RobotConfig) -> Result<Scenario> {
    let ssm = build_kernel_ssm(
        KernelKind::Matern32,
        c.kernel_lengthscale,
        c.kernel_variance,
    )?;
    let n_p = if c.with_radiation { 3 } else { 1 };
    let n_xi = n_p + 3;
    let (p_b, p_p) = (c.p_b, c.p_p);
    let (c_e, r_e, c_u) = (c.c_e, c.r_e, c.c_u);
    let f_p = Arc::new(move |xi: &[f64], u: &[f64], _t: f64| {
        let p = &xi[n_p..n_p + 2];
        let mut out = Vector::zeros(n_p);
        out[0] = c_e * (-r_e * sq_dist(p, &p_b)).exp() - c_u * u[0] - c_u * u[1];
        out
    });
    let f_u = Arc::new(|xi_u: &[f64], u: &[f64], _t: f64| {
        let theta = xi_u[2];
        Vector::from_vec(vec![u[0] * theta.cos(), u[0] * theta.sin(), u[1]])
    });
    let aux = AuxModel::new(n_xi, n_p, 2, f_p, f_u, ConvexityTag::Affine)?;

    let radiation = c.with_radiation;
    let params = [
        (c.r_1max, c.r_1, c.c_1, c.gamma_1),
        (c.r_2max, c.r_2, c.c_2, c.gamma_2),
    ];
    let r_zeta = c.r_zeta;
    let sensors = params
        .iter()
        .enumerate()
        .map(|(s, &(r_max, r_s, cost, gamma))| {
            Sensor::new(
                s + 1,
                1,
                Arc::new(|_, _| Matrix::from_row_slice(1, 2, &[1.0, 0.0])),
                Arc::new(move |xi: &[f64], _| {
                    let p = &xi[n_p..n_p + 2];
                    let mut r = r_max * (r_s * sq_dist(p, &p_p)).exp();
                    if radiation {
                        r *= (r_s * xi[1 + s]).exp();
                    }
                    Matrix::from_element(1, 1, r)
                }),
                Arc::new(move |xi: &[f64], _, _| {
                    let mut g = Vector::zeros(n_p);
                    g[0] = -cost;
                    if radiation {
                        let p = &xi[n_p..n_p + 2];
                        g[1 + s] = gamma * (-r_zeta * sq_dist(p, &p_p)).exp();
                    }
                    g
                }),
            )
        })
        .collect();

    let weights = Weights {
        w_sigma: c.w_sigma,
        w_lambda: c.w_lambda,
        w_u: c.w_u,
        w_eps: c.w_eps,
    };
    let mut spec = OcpSpec::weighted(weights, 2, 1);
    spec.input_lower = c.u_lower.to_vec();
    spec.input_upper = c.u_upper.to_vec();
    spec.rate_upper = c.rate_upper;
    let (c_sigma, c_eta, tol) = (c.c_sigma, c.c_eta, c.terminal_tol);
    let plan_floor = c_eta + c.eta_margin.unwrap_or(c.c_1 + c.c_2);
    spec.running_constraints.push(
        Constraint::new("trace", move |n: &NodeView| {
            n.sigma.trace() - c_sigma - n.slack[0]
        })
        .on_window(c.trace_window_start, c.horizon),
    );
    spec.running_constraints
        .push(Constraint::new("energy_floor", move |n: &NodeView| {
            plan_floor - n.xi[0]
        }));
    spec.terminal_constraints
        .push(Constraint::new("energy_floor", move |n: &NodeView| {
            plan_floor - n.xi[0]
        }));
    for (axis, &target) in p_b.iter().enumerate() {
        spec.terminal_constraints.push(Constraint::new(
            format!("return_{axis}_upper"),
            move |n: &NodeView| n.xi[n_p + axis] - target - tol,
        ));
        spec.terminal_constraints.push(Constraint::new(
            format!("return_{axis}_lower"),
            move |n: &NodeView| target - n.xi[n_p + axis] - tol,
        ));
    }

    let mut xi0 = vec![0.0; n_xi];
    xi0[0] = c.eta_0;
    xi0[n_p] = p_b[0];
    xi0[n_p + 1] = p_b[1];
    xi0[n_p + 2] = c.theta_0;

    let mut signals = vec![
        ("trace".to_string(), Signal::Trace),
        ("energy".to_string(), Signal::Aux(vec![0])),
    ];
    let mut aux_names = vec!["energy".to_string()];
    if radiation {
        signals.push(("degradation".to_string(), Signal::Aux(vec![1, 2])));
        aux_names.extend(["damage_1".to_string(), "damage_2".to_string()]);
    }
    aux_names.extend(["p_x".to_string(), "p_y".to_string(), "theta".to_string()]);
    let floor: StateConstraint = Arc::new(move |xi: &[f64], _: &Matrix, _| c_eta - xi[0]);

    Ok(Scenario {
        name: if radiation {
            "robot_radiation"
        } else {
            "robot"
        }
        .into(),
        process: ssm.process.clone(),
        aux,
        sensors,
        spec,
        grid: TimeGrid::uniform(0.0, c.horizon, c.grid_n)?,
        sigma0: ssm.stationary_cov.clone(),
        mean0: Vector::zeros(2),
        xi0,
        state_offset: 0.0,
        solver: solver_options(&c.common),
        greedy_costs: c
            .common
            .greedy_costs
            .clone()
            .unwrap_or_else(|| vec![c.c_1 * c.w_lambda, c.c_2 * c.w_lambda]),
        greedy_penalty: c.common.greedy_penalty.unwrap_or(c.w_eps),
        greedy_constraints: vec![floor],
        m_optimized_samples: c.common.m_optimized_samples.unwrap_or(50),
        m_optimized_penalty: c.common.m_optimized_penalty.unwrap_or(c.w_eps),
        signals,
        energy_floor: Some((0, c.c_eta)),
        aux_names,
    })
}

/// Ornstein–Uhlenbeck water-quality process with two fouling sensors and defouling inputs.
///
/// The process is written for the deviation `x − x_amb`; `state_offset` restores the
/// absolute value for reporting.
pub fn build_water_scenario(c: &WaterConfig) -> Result<Scenario> {
    let process = ProcessModel::constant(
        Matrix::from_element(1, 1, -c.kappa),
        Matrix::from_element(1, 1, c.sigma),
    );
    let (alpha, gamma) = (c.alpha_f, c.gamma_f);
    let f_p = Arc::new(move |xi: &[f64], u: &[f64], _t: f64| {
        Vector::from_vec(vec![
            -(alpha + gamma * u[0]) * xi[0],
            -(alpha + gamma * u[1]) * xi[1],
        ])
    });
    let aux = AuxModel::new(
        2,
        2,
        2,
        f_p,
        Arc::new(|_, _, _| Vector::zeros(0)),
        ConvexityTag::Affine,
    )?;
    let params = [
        (c.r_10, c.lambda_1f, c.rho_1f),
        (c.r_20, c.lambda_2f, c.rho_2f),
    ];
    let sensors = params
        .iter()
        .enumerate()
        .map(|(s, &(r0, lam, rho))| {
            Sensor::new(
                s + 1,
                1,
                Arc::new(|_, _| Matrix::identity(1, 1)),
                Arc::new(move |xi: &[f64], _| Matrix::from_element(1, 1, r0 * (lam * xi[s]).exp())),
                Arc::new(move |_, _, _| {
                    let mut g = Vector::zeros(2);
                    g[s] = rho;
                    g
                }),
            )
        })
        .collect();
    let weights = Weights {
        w_sigma: c.w_sigma,
        w_lambda: c.w_lambda,
        w_u: c.w_u,
        w_eps: 0.0,
    };
    let mut spec = OcpSpec::weighted(weights, 2, 0);
    spec.input_lower = c.u_lower.to_vec();
    spec.input_upper = c.u_upper.to_vec();
    spec.rate_upper = c.rate_upper;
    let c_xi = c.c_xi;
    for s in 0..2 {
        spec.running_constraints.push(Constraint::new(
            format!("fouling_{}", s + 1),
            move |n: &NodeView| n.xi[s] - c_xi,
        ));
        spec.terminal_constraints.push(Constraint::new(
            format!("fouling_{}", s + 1),
            move |n: &NodeView| n.xi[s] - c_xi,
        ));
    }
    let caps: Vec<StateConstraint> = (0..2)
        .map(|s| Arc::new(move |xi: &[f64], _: &Matrix, _| xi[s] - c_xi) as StateConstraint)
        .collect();
    Ok(Scenario {
        name: "water".into(),
        process,
        aux,
        sensors,
        spec,
        grid: TimeGrid::uniform(0.0, c.horizon, c.grid_n)?,
        sigma0: Matrix::from_element(1, 1, c.sigma_0),
        mean0: Vector::from_element(1, c.mu_0 - c.x_amb),
        xi0: c.xi_0.to_vec(),
        state_offset: c.x_amb,
        solver: solver_options(&c.common),
        greedy_costs: c
            .common
            .greedy_costs
            .clone()
            .unwrap_or_else(|| vec![c.w_lambda, c.w_lambda]),
        greedy_penalty: c.common.greedy_penalty.unwrap_or(100.0),
        greedy_constraints: caps,
        m_optimized_samples: c.common.m_optimized_samples.unwrap_or(50),
        m_optimized_penalty: c.common.m_optimized_penalty.unwrap_or(100.0),
        signals: vec![
            ("trace".to_string(), Signal::Trace),
            ("degradation".to_string(), Signal::Aux(vec![0, 1])),
        ],
        energy_floor: None,
        aux_names: vec!["fouling_1".into(), "fouling_2".into()],
    })
}

pub fn build_scalar_scenario(c: &ScalarConfig) -> Result<Scenario> {
    let process = ProcessModel::constant(
        Matrix::from_element(1, 1, c.a),
        Matrix::from_element(1, 1, c.sigma2.sqrt()),
    );
    let sensor = Sensor::constant(
        1,
        Matrix::from_element(1, 1, c.c),
        Matrix::from_element(1, 1, c.r),
    );
    let weights = Weights {
        w_sigma: c.w_sigma,
        w_lambda: c.w_lambda,
        w_u: 0.0,
        w_eps: 0.0,
    };
    let mut spec = OcpSpec::weighted(weights, 0, 0);
    spec.rate_upper = c.rate_upper;
    Ok(Scenario {
        name: "scalar".into(),
        process,
        aux: AuxModel::none(),
        sensors: vec![sensor],
        spec,
        grid: TimeGrid::uniform(0.0, c.horizon, c.grid_n)?,
        sigma0: Matrix::from_element(1, 1, c.sigma_0),
        mean0: Vector::zeros(1),
        xi0: Vec::new(),
        state_offset: 0.0,
        solver: solver_options(&c.common),
        greedy_costs: c
            .common
            .greedy_costs
            .clone()
            .unwrap_or_else(|| vec![c.w_lambda]),
        greedy_penalty: c.common.greedy_penalty.unwrap_or(0.0),
        greedy_constraints: Vec::new(),
        m_optimized_samples: c.common.m_optimized_samples.unwrap_or(50),
        m_optimized_penalty: c.common.m_optimized_penalty.unwrap_or(0.0),
        signals: vec![("trace".to_string(), Signal::Trace)],
        energy_floor: None,
        aux_names: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_model;

    const ROBOT: &str = include_str!("../../../configs/robot.json");
    const ROBOT_RADIATION: &str = include_str!("../../../configs/robot_radiation.json");
    const WATER: &str = include_str!("../../../configs/water.json");
    const SCALAR: &str = include_str!("../../../configs/scalar.json");

    fn robot_cfg() -> RobotConfig {
        match ScenarioConfig::from_json_str(ROBOT).unwrap() {
            ScenarioConfig::Robot(c) => c,
            _ => unreachable!(),
        }
    }

    fn water_cfg() -> WaterConfig {
        match ScenarioConfig::from_json_str(WATER).unwrap() {
            ScenarioConfig::Water(c) => c,
            _ => unreachable!(),
        }
    }

    #[test]
    fn shipped_configs_build_and_validate() {
        for text in [ROBOT, ROBOT_RADIATION, WATER, SCALAR] {
            let cfg = ScenarioConfig::from_json_str(text).unwrap();
            let sc = Scenario::from_config(&cfg).unwrap();
            let xi0 = sc.xi0.clone();
            let report = validate_model(&sc.process, &sc.aux, &sc.sensors, &sc.grid, &move |_| {
                xi0.clone()
            });
            assert!(report.is_empty(), "{}: {report:?}", cfg.name());
            assert_eq!(sc.name, cfg.name());
        }
    }

    #[test]
    fn robot_charges_at_base_when_idle() {
        let c = robot_cfg();
        let sc = build_robot_scenario(&c).unwrap();
        let rhs = sc.aux.f_p(&sc.xi0, &[0.0, 0.0], 0.0);
        assert_eq!(rhs[0], c.c_e);
    }

    #[test]
    fn robot_noise_is_smallest_at_the_process() {
        let mut c = robot_cfg();
        let sc = build_robot_scenario(&c).unwrap();
        let at_process = [c.eta_0, c.p_p[0], c.p_p[1], 0.0];
        assert_eq!(sc.sensors[0].noise_cov(&at_process, 0.0)[(0, 0)], c.r_1max);
        assert_eq!(sc.sensors[1].noise_cov(&at_process, 0.0)[(0, 0)], c.r_2max);
        let d2 = (c.p_b[0] - c.p_p[0]).powi(2) + (c.p_b[1] - c.p_p[1]).powi(2);
        let at_base = sc.sensors[0].noise_cov(&sc.xi0, 0.0)[(0, 0)];
        assert!((at_base - c.r_1max * (c.r_1 * d2).exp()).abs() < 1e-12 * at_base);

        c.with_radiation = true;
        let rad = build_robot_scenario(&c).unwrap();
        let undamaged = [c.eta_0, 0.0, 0.0, c.p_p[0], c.p_p[1], 0.0];
        assert_eq!(rad.sensors[0].noise_cov(&undamaged, 0.0)[(0, 0)], c.r_1max);
        let damaged = [c.eta_0, 0.5, 0.0, c.p_p[0], c.p_p[1], 0.0];
        let r = rad.sensors[0].noise_cov(&damaged, 0.0)[(0, 0)];
        assert!((r - c.r_1max * (0.5 * c.r_1).exp()).abs() < 1e-12);
    }

    #[test]
    fn robot_jumps_charge_energy_and_damage() {
        let mut c = robot_cfg();
        c.with_radiation = true;
        let sc = build_robot_scenario(&c).unwrap();
        let at_process = [1.0, 0.0, 0.0, c.p_p[0], c.p_p[1], 0.0];
        let g1 = sc.sensors[0].jump(&at_process, &[0.0, 0.0], 0.0);
        let g2 = sc.sensors[1].jump(&at_process, &[0.0, 0.0], 0.0);
        assert_eq!(g1.as_slice(), &[-c.c_1, c.gamma_1, 0.0]);
        assert_eq!(g2.as_slice(), &[-c.c_2, 0.0, c.gamma_2]);
    }

    #[test]
    fn unicycle_kinematics() {
        let sc = build_robot_scenario(&robot_cfg()).unwrap();
        let d = sc
            .aux
            .f_u(&[0.0, 0.0, std::f64::consts::FRAC_PI_2], &[2.0, 0.5], 0.0);
        assert!(d[0].abs() < 1e-15);
        assert_eq!(d[1], 2.0);
        assert_eq!(d[2], 0.5);
    }

    #[test]
    fn invalid_robot_orderings_are_all_reported() {
        let mut v: Value = serde_json::from_str(ROBOT).unwrap();
        v["c_1"] = 1.0.into();
        v["r_1max"] = 10.0.into();
        v["gamma_2"] = 5.0.into();
        match ScenarioConfig::from_json_str(&v.to_string()) {
            Err(Error::Config(msgs)) => {
                assert_eq!(msgs.len(), 3, "{msgs:?}");
                assert!(msgs[0].contains("c_u"));
                assert!(msgs[1].contains("r_2max"));
                assert!(msgs[2].contains("gamma_1"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let mut v: Value = serde_json::from_str(WATER).unwrap();
        v["kapa"] = 1.0.into();
        match ScenarioConfig::from_json_str(&v.to_string()) {
            Err(Error::Config(msgs)) => assert_eq!(msgs, vec!["unknown key \"kapa\"".to_string()]),
            other => panic!("expected config error, got {other:?}"),
        }
        let mut v: Value = serde_json::from_str(WATER).unwrap();
        v.as_object_mut().unwrap().remove("kappa");
        assert!(ScenarioConfig::from_json_str(&v.to_string()).is_err());
        let mut v: Value = serde_json::from_str(WATER).unwrap();
        v["scenario"] = "spacecraft".into();
        assert!(matches!(
            ScenarioConfig::from_json_str(&v.to_string()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_water_orderings_are_reported() {
        let mut v: Value = serde_json::from_str(WATER).unwrap();
        v["r_20"] = 1.0.into();
        v["rho_1f"] = 1.0.into();
        match ScenarioConfig::from_json_str(&v.to_string()) {
            Err(Error::Config(msgs)) => assert_eq!(msgs.len(), 2, "{msgs:?}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn water_noise_and_fouling() {
        let c = water_cfg();
        let sc = build_water_scenario(&c).unwrap();
        assert_eq!(sc.sensors[0].noise_cov(&[0.0, 0.0], 0.0)[(0, 0)], c.r_10);
        assert_eq!(sc.sensors[1].noise_cov(&[0.0, 0.0], 0.0)[(0, 0)], c.r_20);
        let r = sc.sensors[1].noise_cov(&[0.0, 0.3], 0.0)[(0, 0)];
        assert!((r - c.r_20 * (c.lambda_2f * 0.3).exp()).abs() < 1e-15);
        assert_eq!(
            sc.sensors[1].jump(&[0.0, 0.0], &[0.0, 0.0], 0.0).as_slice(),
            &[0.0, c.rho_2f]
        );
        // Fouling decays at α + γu without measurements.
        let d = sc.aux.f_p(&[0.4, 0.2], &[0.5, 0.0], 0.0);
        assert!((d[0] + (c.alpha_f + c.gamma_f * 0.5) * 0.4).abs() < 1e-15);
        assert!((d[1] + c.alpha_f * 0.2).abs() < 1e-15);
    }

    #[test]
    fn water_runs_in_deviation_coordinates() {
        let c = water_cfg();
        let sc = build_water_scenario(&c).unwrap();
        assert_eq!(sc.state_offset, c.x_amb);
        assert_eq!(sc.mean0[0] + sc.state_offset, c.mu_0);
        assert_eq!(sc.process.drift(&sc.xi0, 0.0)[(0, 0)], -c.kappa);
    }

    #[test]
    fn common_options_reach_the_solver() {
        let mut v: Value = serde_json::from_str(SCALAR).unwrap();
        v["feas_tol"] = 1e-5.into();
        v["max_outer"] = 7.into();
        let sc =
            Scenario::from_config(&ScenarioConfig::from_json_str(&v.to_string()).unwrap()).unwrap();
        assert_eq!(sc.solver.feas_tol, 1e-5);
        assert_eq!(sc.solver.max_outer, 7);
        assert_eq!(sc.solver.opt_tol, SolverOptions::default().opt_tol);
    }
}
