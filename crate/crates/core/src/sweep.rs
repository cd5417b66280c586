//! Cartesian sweeps over algorithm × seed × partition counts. Every cell is
//! an independent run; rows come back in cell order whether the cells ran
//! in parallel or not.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::{Algorithm, Overrides, Scenario, ScenarioConfig};
use crate::metrics::{summarize, SourceMetrics};
use crate::sim::{run_with, RunOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Partition count per source, in declaration order. `None` keeps the
    /// scenario's own plans.
    pub partitions: Option<Vec<u32>>,
}

impl SweepCell {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            seed: Some(self.seed),
            algorithm: Some(self.algorithm),
            partitions: self.partitions.clone(),
            ..Default::default()
        }
    }

    pub fn partition_label(&self) -> String {
        match &self.partitions {
            Some(p) => p.iter().map(u32::to_string).collect::<Vec<_>>().join("-"),
            None => "default".into(),
        }
    }
}

/// Cells in row-major order: algorithm, then partition variant, then seed.
/// Partition variants only apply to PA-MDI; the baselines choose their own
/// split.
pub fn cells(algorithms: &[Algorithm], seeds: &[u64], partitions: &[Vec<u32>]) -> Vec<SweepCell> {
    let mut out = Vec::new();
    for &algorithm in algorithms {
        let variants: Vec<Option<Vec<u32>>> = if algorithm == Algorithm::PaMdi && !partitions.is_empty() {
            partitions.iter().cloned().map(Some).collect()
        } else {
            vec![None]
        };
        for p in &variants {
            for &seed in seeds {
                out.push(SweepCell { algorithm, seed, partitions: p.clone() });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub scenario: String,
    pub cell: SweepCell,
    pub metrics: Vec<SourceMetrics>,
    pub truncated: bool,
    pub total_messages: u64,
    pub protocol_messages: u64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn csv_header(source_names: &[String]) -> String {
        let mut cols = vec![
            "scenario".to_string(),
            "algorithm".into(),
            "partitions".into(),
            "seed".into(),
            "truncated".into(),
            "messages".into(),
            "protocol_messages".into(),
        ];
        cols.extend(source_names.iter().map(|n| format!("avg_{n}")));
        cols.push("error".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut cols = vec![
            self.scenario.clone(),
            self.cell.algorithm.to_string(),
            self.cell.partition_label(),
            self.cell.seed.to_string(),
            self.truncated.to_string(),
            self.total_messages.to_string(),
            self.protocol_messages.to_string(),
        ];
        cols.extend(self.metrics.iter().map(|m| m.avg_inference_time.map(|t| format!("{t:.9}")).unwrap_or_default()));
        cols.push(self.error.clone().unwrap_or_default().replace([',', '\n'], ";"));
        cols.join(",")
    }
}

pub fn run_cell(base: &ScenarioConfig, cell: &SweepCell) -> SweepRow {
    let mut row = SweepRow {
        scenario: base.name.clone(),
        cell: cell.clone(),
        metrics: Vec::new(),
        truncated: false,
        total_messages: 0,
        protocol_messages: 0,
        error: None,
    };
    let mut cfg = base.clone();
    let result =
        cfg.apply(&cell.overrides()).and_then(|_| Scenario::from_config(&cfg)).map_err(|e| e.to_string()).and_then(
            |sc| run_with(&sc, &RunOptions { record_lines: false }).map(|t| (sc, t)).map_err(|e| e.to_string()),
        );
    match result {
        Ok((sc, trace)) => {
            row.metrics = summarize(&trace, &sc.sources);
            row.truncated = trace.truncated;
            row.total_messages = trace.stats.total_messages();
            row.protocol_messages = trace.stats.protocol_messages();
        }
        Err(e) => row.error = Some(e),
    }
    row
}

pub fn sweep_sequential(base: &ScenarioConfig, cells: &[SweepCell]) -> Vec<SweepRow> {
    cells.iter().map(|c| run_cell(base, c)).collect()
}

#[cfg(feature = "parallel")]
pub fn sweep_parallel(base: &ScenarioConfig, cells: &[SweepCell]) -> Vec<SweepRow> {
    cells.par_iter().map(|c| run_cell(base, c)).collect()
}

/// Runs every cell, in parallel when the `parallel` feature is enabled.
pub fn sweep(base: &ScenarioConfig, cells: &[SweepCell]) -> Vec<SweepRow> {
    #[cfg(feature = "parallel")]
    {
        sweep_parallel(base, cells)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sweep_sequential(base, cells)
    }
}
