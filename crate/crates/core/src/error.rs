use std::path::PathBuf;

use thiserror::Error;

use crate::model::WorkerId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("partition {k} is out of range 1..={parts}")]
    PartitionOutOfRange { k: u32, parts: u32 },
    #[error("cannot split {layers} layers into {parts} partitions")]
    BadPartitionCount { parts: u32, layers: u32 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error("no path from {from} to {to}")]
    NoPath { from: WorkerId, to: WorkerId },
    #[error("worker {0} is not in the topology")]
    UnknownWorker(WorkerId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("offload decision needs at least one candidate")]
    NoCandidates,
    #[error("missing status snapshot for candidate {0}")]
    MissingSnapshot(WorkerId),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: PathBuf, source: Box<toml::de::Error> },
    #[error("serializing scenario: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("scenario is invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("bad override: {0}")]
    Override(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("deadlock at t={time:.6}: no pending events but {remaining} data points unfinished")]
    Deadlock { time: f64, remaining: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("source {source_name} has no data points in the trace")]
    Empty { source_name: String },
    #[error("source {source_name} is missing task (d={data}, k={partition})")]
    Missing { source_name: String, data: u32, partition: u32 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{assignments} assignments exceed the enumeration cap {cap}")]
    CapExceeded { assignments: f64, cap: u64 },
    #[error("instance has no workers")]
    NoWorkers,
    #[error(transparent)]
    Cost(#[from] CostError),
}
