//! Physical model of a stacked intelligent metasurface.

pub mod geometry;
pub mod propagation;
pub mod stack;

pub use geometry::{GeometrySpec, SimGeometry};
pub use propagation::{build_propagation_matrix, propagation_coefficient, rayleigh_sommerfeld, Link};
pub use stack::{end_to_end_channel, sim_transfer, wrap_phase, PhaseConfig, SimStack};
