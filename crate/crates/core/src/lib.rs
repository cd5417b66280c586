//! Simulator and protocol library for priority-aware model-distributed
//! inference on edge networks.
//!
//! A [`config::Scenario`] describes workers, links, sources and their
//! models. [`sim::run`] plays it out under one of four algorithms:
//! priority-aware offloading with an RTC/CTC handshake, two ring-pipeline
//! baselines, or local-only processing. [`metrics`] turns the resulting
//! trace into average inference times, and [`oracle`] brute-forces the
//! accuracy/delay objective on small instances.

pub mod baselines;
pub mod config;
pub mod cost;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod scheduler;
pub mod sim;
pub mod sweep;
pub mod worker;

pub use config::{Algorithm, Scenario, ScenarioConfig};
pub use error::{ConfigError, SimError};
pub use sim::{run, SimulationTrace};
