//! Optimal-control transcription and the augmented-Lagrangian NLP solver.

pub mod nlp;
pub mod solver;
pub mod transcription;

pub use nlp::{gradient_check, DenseNlp, Nlp, NlpDerivatives, NlpEval};
pub use solver::{minimize, SolveReport, SolverOptions};
pub use transcription::{
    extract_plan, solve_nlp, transcribe, Constraint, DecisionVector, Layout, NodeFn, NodeView,
    OcpSolution, OcpSpec, SolveDiagnostics, TranscribedOcp, Weights, CHOLESKY_FLOOR,
};
