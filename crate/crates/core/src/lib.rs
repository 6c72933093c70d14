//! Measurement scheduling for continuous-discrete Kalman filters.
//!
//! Measurements arrive as Poisson processes whose rates are planned by optimal control on a
//! deterministic upper bound of the expected filter covariance, then converted into
//! deterministic measurement times by optimal quantization.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod gp;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod ocp;
pub mod pipeline;
pub mod quantize;
pub mod scenarios;
pub mod simulate;

pub use bounds::{propagate_bounds, BoundOptions, BoundTrajectory};
pub use error::{Error, Result};
pub use kalman::{filter_pass, rts_smooth, FilterTrajectory, SmoothedTrajectory};
pub use linalg::{Matrix, Vector};
pub use model::{
    AuxModel, ConvexityTag, Event, GaussianBelief, InputPlan, ProcessModel, RatePlan, Schedule,
    Sensor, TimeGrid,
};
pub use ocp::{OcpSolution, OcpSpec, SolverOptions};
pub use quantize::IntensityProfile;
pub use scenarios::{Scenario, ScenarioConfig};
pub use simulate::{McReport, RngStream, RunStats};
