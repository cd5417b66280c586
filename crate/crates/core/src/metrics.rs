//! Average inference time and per-source summaries computed from a trace.

use std::collections::BTreeMap;

use crate::error::MetricsError;
use crate::model::{SourceSpec, TaskKey};
use crate::sim::trace::{SimulationTrace, TaskRecord};

/// Mean over data points of the summed `completed - created` of every task
/// of that data point.
pub fn average_inference_time(trace: &SimulationTrace, source: &SourceSpec) -> Result<f64, MetricsError> {
    average_over(&trace.tasks, source)
}

pub fn average_over<'a>(
    records: impl IntoIterator<Item = &'a TaskRecord>,
    source: &SourceSpec,
) -> Result<f64, MetricsError> {
    if source.num_data_points == 0 {
        return Err(MetricsError::Empty { source_name: source.name.clone() });
    }
    let mut by_key: BTreeMap<TaskKey, &TaskRecord> = BTreeMap::new();
    for r in records {
        if r.key.source == source.id {
            by_key.insert(r.key, r);
        }
    }
    if by_key.is_empty() {
        return Err(MetricsError::Empty { source_name: source.name.clone() });
    }
    let mut total = 0.0;
    for d in 1..=source.num_data_points {
        let missing = |k| MetricsError::Missing { source_name: source.name.clone(), data: d, partition: k };
        let key = |k| TaskKey { source: source.id, data: d, partition: k };
        let first = by_key.get(&key(1)).ok_or_else(|| missing(1))?;
        let mut per_data = 0.0;
        for k in 1..=first.num_partitions {
            let r = by_key.get(&key(k)).ok_or_else(|| missing(k))?;
            per_data += r.completed_at - r.created_at;
        }
        total += per_data;
    }
    Ok(total / f64::from(source.num_data_points))
}

/// One line of the per-source summary.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceMetrics {
    pub name: String,
    pub priority: f64,
    pub results: u32,
    pub data_points: u32,
    /// `None` when the run did not finish every data point.
    pub avg_inference_time: Option<f64>,
}

pub fn summarize(trace: &SimulationTrace, sources: &[SourceSpec]) -> Vec<SourceMetrics> {
    sources
        .iter()
        .map(|s| SourceMetrics {
            name: s.name.clone(),
            priority: s.priority,
            results: trace.stats.results.get(&s.id.0).copied().unwrap_or(0),
            data_points: s.num_data_points,
            avg_inference_time: average_inference_time(trace, s).ok(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{SourceId, WorkerId};
    use proptest::prelude::*;

    fn source(d: u32) -> SourceSpec {
        SourceSpec {
            id: SourceId(0),
            name: "s".into(),
            host: WorkerId(0),
            model_id: "m".into(),
            priority: 1.0,
            accuracy_gain: 1.0,
            num_data_points: d,
        }
    }

    fn rec(d: u32, k: u32, parts: u32, c: f64, done: f64) -> TaskRecord {
        TaskRecord {
            key: TaskKey { source: SourceId(0), data: d, partition: k },
            num_partitions: parts,
            created_at: c,
            completed_at: done,
            processed_by: WorkerId(0),
        }
    }

    #[test]
    fn single_partition() {
        let recs = vec![rec(1, 1, 1, 0.0, 2.0), rec(2, 1, 1, 5.0, 7.0)];
        assert_eq!(average_over(&recs, &source(2)).unwrap(), 2.0);
    }

    #[test]
    fn two_partitions_sum() {
        let recs = vec![rec(1, 1, 2, 0.0, 1.0), rec(1, 2, 2, 1.0, 4.0), rec(2, 1, 2, 4.0, 5.0), rec(2, 2, 2, 5.0, 8.0)];
        assert_eq!(average_over(&recs, &source(2)).unwrap(), 4.0);
    }

    #[test]
    fn missing_and_empty() {
        let recs = vec![rec(1, 1, 2, 0.0, 1.0)];
        assert_eq!(
            average_over(&recs, &source(1)),
            Err(MetricsError::Missing { source_name: "s".into(), data: 1, partition: 2 })
        );
        assert!(matches!(average_over(&[], &source(1)), Err(MetricsError::Empty { .. })));
        assert!(matches!(average_over(&recs, &source(0)), Err(MetricsError::Empty { .. })));
    }

    proptest! {
        #[test]
        fn order_does_not_matter(
            lat in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 6),
            perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let recs: Vec<TaskRecord> = lat
                .iter()
                .enumerate()
                .map(|(i, (c, l))| rec(i as u32 / 2 + 1, i as u32 % 2 + 1, 2, *c, c + l))
                .collect();
            let shuffled: Vec<TaskRecord> = perm.iter().map(|&i| recs[i].clone()).collect();
            let a = average_over(&recs, &source(3)).unwrap();
            let b = average_over(&shuffled, &source(3)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
