//! Gradient-based phase optimization.

pub mod chain;
pub mod objective;
pub mod train;

pub use chain::{Forward, PhaseChain};
pub use objective::{softmax, softmax_cross_entropy, EnergyReadout, MatrixFit, ScaleMode};
pub use train::{
    random_phases, train, ClassificationProblem, LossTrace, MatrixFitProblem, OptimizerState, Problem, Schedule,
    TraceEntry,
};
