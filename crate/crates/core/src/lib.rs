//! Wave-domain signal processing with stacked (SIM) and flexible (FIM)
//! intelligent metasurfaces.

pub mod channels;
pub mod config;
pub mod emnist;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod fim;
pub mod linalg;
pub mod optim;
pub mod runner;
pub mod sim;

pub use error::{Error, Result};
