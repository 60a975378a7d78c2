//! Sparse polynomial feedback laws learned through closed-loop simulation.

pub mod basis;
pub mod benchmarks;
pub mod dynamics;
pub mod error;
pub mod evaltree;
pub mod experiment;
pub mod metrics;
pub mod objective;
pub mod optimizer;
pub mod oracles;
pub mod model;

pub use error::{Error, Result};
