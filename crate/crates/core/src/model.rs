//! Domain types shared by every other module: models, partitions, tasks,
//! sources and worker profiles.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Simulation time in seconds.
pub type SimTime = f64;

/// Index of a worker in the scenario's declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

/// Index of a data source in the scenario's declaration order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SourceId(pub u32);

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    /// 1-based position inside the model.
    pub index: u32,
    pub flops: f64,
    /// Size of the feature vector this layer emits.
    pub output_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub id: String,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn num_layers(&self) -> u32 {
        self.layers.len() as u32
    }

    pub fn total_flops(&self) -> f64 {
        self.layers.iter().map(|l| l.flops).sum()
    }

    /// Bytes entering layer `index` (1-based): the raw input for layer 1,
    /// otherwise the previous layer's feature vector.
    pub fn bytes_into(&self, index: u32) -> u64 {
        if index <= 1 {
            self.input_bytes
        } else {
            self.layers[index as usize - 2].output_bytes
        }
    }

    /// Bytes leaving layer `index`; the last layer emits the model output.
    pub fn bytes_out_of(&self, index: u32) -> u64 {
        if index >= self.num_layers() {
            self.output_bytes
        } else {
            self.layers[index as usize - 1].output_bytes
        }
    }

    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.layers.is_empty() {
            out.push(format!("model `{}` has no layers", self.id));
        }
        for (pos, layer) in self.layers.iter().enumerate() {
            if layer.index != pos as u32 + 1 {
                out.push(format!(
                    "model `{}` layer at position {} has index {}, expected {}",
                    self.id,
                    pos + 1,
                    layer.index,
                    pos + 1
                ));
            }
            if !(layer.flops > 0.0 && layer.flops.is_finite()) {
                out.push(format!("model `{}` layer {} flops must be > 0", self.id, layer.index));
            }
            if layer.output_bytes == 0 {
                out.push(format!("model `{}` layer {} output_bytes must be > 0", self.id, layer.index));
            }
        }
        out
    }
}

/// A contiguous range of layers, inclusive on both ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cut {
    pub begin: u32,
    pub end: u32,
}

impl Cut {
    pub fn new(begin: u32, end: u32) -> Self {
        Cut { begin, end }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub model_id: String,
    pub cuts: Vec<Cut>,
}

impl PartitionPlan {
    pub fn new(model_id: impl Into<String>, cuts: Vec<Cut>) -> Self {
        PartitionPlan { model_id: model_id.into(), cuts }
    }

    /// Splits `num_layers` into `parts` contiguous cuts whose sizes differ by
    /// at most one; earlier partitions take the extra layer.
    pub fn uniform(model: &ModelSpec, parts: u32) -> Result<Self, ModelError> {
        let layers = model.num_layers();
        if parts == 0 || parts > layers {
            return Err(ModelError::BadPartitionCount { parts, layers });
        }
        let base = layers / parts;
        let extra = layers % parts;
        let mut cuts = Vec::with_capacity(parts as usize);
        let mut begin = 1;
        for k in 0..parts {
            let len = base + u32::from(k < extra);
            cuts.push(Cut::new(begin, begin + len - 1));
            begin += len;
        }
        Ok(PartitionPlan::new(model.id.clone(), cuts))
    }

    pub fn num_partitions(&self) -> u32 {
        self.cuts.len() as u32
    }

    /// Every problem with the plan against `model`; empty when valid.
    pub fn check(&self, model: &ModelSpec) -> Vec<String> {
        let mut out = Vec::new();
        if self.cuts.is_empty() {
            out.push(format!("partition plan for `{}` has no cuts", self.model_id));
            return out;
        }
        let mut expected = 1;
        for (k, cut) in self.cuts.iter().enumerate() {
            if cut.begin > cut.end {
                out.push(format!("cut {} ({}, {}) is reversed", k + 1, cut.begin, cut.end));
            }
            if cut.begin < expected {
                out.push(format!("cut {} ({}, {}) overlaps the previous cut", k + 1, cut.begin, cut.end));
            } else if cut.begin > expected {
                out.push(format!(
                    "gap before cut {} ({}, {}): layer {} is not covered",
                    k + 1,
                    cut.begin,
                    cut.end,
                    expected
                ));
            }
            expected = cut.end.max(expected.saturating_sub(1)) + 1;
        }
        let last = self.cuts.last().map(|c| c.end).unwrap_or(0);
        if last != model.num_layers() {
            out.push(format!("cuts end at layer {last} but model `{}` has {} layers", model.id, model.num_layers()));
        }
        out
    }

    pub fn cut(&self, k: u32) -> Result<Cut, ModelError> {
        if k == 0 || k > self.num_partitions() {
            return Err(ModelError::PartitionOutOfRange { k, parts: self.num_partitions() });
        }
        Ok(self.cuts[k as usize - 1])
    }
}

/// FLOPs of partition `k` (1-based): the sum of its layers' FLOPs.
pub fn task_flops(plan: &PartitionPlan, model: &ModelSpec, k: u32) -> Result<f64, ModelError> {
    let cut = plan.cut(k)?;
    if cut.end > model.num_layers() || cut.begin == 0 {
        return Err(ModelError::PartitionOutOfRange { k, parts: plan.num_partitions() });
    }
    Ok(model.layers[cut.begin as usize - 1..cut.end as usize].iter().map(|l| l.flops).sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceSpec {
    pub id: SourceId,
    pub name: String,
    pub host: WorkerId,
    pub model_id: String,
    /// Priority weight; larger is more urgent.
    pub priority: f64,
    /// Accuracy gained when one data point is fully processed.
    pub accuracy_gain: f64,
    pub num_data_points: u32,
}

impl SourceSpec {
    /// The `priority × accuracy_gain` denominator of the offload score.
    pub fn weight(&self) -> f64 {
        self.priority * self.accuracy_gain
    }
}

/// Identity of one task: partition `partition` of data point `data` of
/// source `source`. Ordered lexicographically by (source, data, partition).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskKey {
    pub source: SourceId,
    pub data: u32,
    pub partition: u32,
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/d{}/k{}", self.source, self.data, self.partition)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub key: TaskKey,
    /// Number of partitions of the data point this task belongs to.
    pub num_partitions: u32,
    pub created_at: SimTime,
    pub flops: f64,
    pub input_bytes: u64,
    pub output_bytes: u64,
}

impl Task {
    /// Builds partition `k` of data point `data` according to `plan`.
    pub fn from_plan(
        source: SourceId,
        data: u32,
        k: u32,
        plan: &PartitionPlan,
        model: &ModelSpec,
        created_at: SimTime,
    ) -> Result<Self, ModelError> {
        let cut = plan.cut(k)?;
        Ok(Task {
            key: TaskKey { source, data, partition: k },
            num_partitions: plan.num_partitions(),
            created_at,
            flops: task_flops(plan, model, k)?,
            input_bytes: model.bytes_into(cut.begin),
            output_bytes: model.bytes_out_of(cut.end),
        })
    }

    /// Age at `now`, clamped at zero.
    pub fn age(&self, now: SimTime) -> SimTime {
        (now - self.created_at).max(0.0)
    }

    pub fn is_last(&self) -> bool {
        self.key.partition == self.num_partitions
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerProfile {
    pub id: WorkerId,
    pub name: String,
    /// Inverse compute speed; a 5 GFLOPS device has 2e-10.
    pub seconds_per_flop: f64,
    pub is_source_host: bool,
    pub mobile: bool,
}

impl WorkerProfile {
    pub fn flops_per_second(&self) -> f64 {
        1.0 / self.seconds_per_flop
    }
}
