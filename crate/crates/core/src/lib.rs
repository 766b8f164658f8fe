//! Simulation and stability analysis of distributed mirror descent with
//! integral feedback over undirected agent networks.

mod error;

pub mod cli;
pub mod dynamics;
pub mod graph;
pub mod metrics;
pub mod mirror;
pub mod objective;
pub mod stability;

pub use error::{Error, Result};
