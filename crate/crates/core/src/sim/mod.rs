//! Discrete-event simulation: topology, churn, the event queue, and the
//! engine that runs a [`Scenario`](crate::config::Scenario) under any of the
//! supported algorithms.

pub mod churn;
mod engine;
pub mod event;
pub mod topology;
pub mod trace;

pub use engine::{run, run_with, RunOptions};
pub use trace::{RunStats, SimulationTrace, TaskRecord};
