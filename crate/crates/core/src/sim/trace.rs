use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::model::{SimTime, TaskKey, WorkerId};

/// Creation and completion of one task as seen by its source.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskRecord {
    pub key: TaskKey,
    /// Partitions of this task's data point.
    pub num_partitions: u32,
    pub created_at: SimTime,
    pub completed_at: SimTime,
    pub processed_by: WorkerId,
}

/// Counters gathered while running; the safety checks read these.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub messages: BTreeMap<&'static str, u64>,
    pub protocol_errors: u64,
    /// A grant was issued while another was outstanding at the same worker.
    pub double_grants: u64,
    /// A task existed in two places at once or was computed twice.
    pub duplicated_tasks: u64,
    /// Tasks or data points still unaccounted for when the run ended.
    pub lost_tasks: u64,
    pub offloads: u64,
    pub denials: u64,
    pub rtc_timeouts: u64,
    pub bounces: u64,
    pub churn_events: u64,
    pub admitted: BTreeMap<u32, u32>,
    pub results: BTreeMap<u32, u32>,
}

impl RunStats {
    pub fn total_messages(&self) -> u64 {
        self.messages.values().sum()
    }

    pub fn protocol_messages(&self) -> u64 {
        self.messages.iter().filter(|(k, _)| !matches!(**k, "FeatureTransfer" | "OutputReturn")).map(|(_, v)| *v).sum()
    }
}

/// Full record of one run: one text line per event plus task lifecycles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimulationTrace {
    pub scenario: String,
    pub algorithm: String,
    pub seed: u64,
    pub lines: Vec<String>,
    pub tasks: Vec<TaskRecord>,
    pub stats: RunStats,
    pub truncated: bool,
    pub end_time: SimTime,
}

impl SimulationTrace {
    pub fn push(&mut self, time: SimTime, kind: &str, payload: std::fmt::Arguments<'_>) {
        let mut line = String::with_capacity(64);
        let _ = write!(line, "{time:.9} {kind} {payload}");
        self.lines.push(line);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for l in &self.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }
}
