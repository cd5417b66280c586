//! Placement rules of the comparison policies: everything-local, and the
//! ring pipelines used by AR-MDI and MS-MDI.
//!
//! None of these functions look at source priorities.

use crate::model::{Cut, ModelSpec, PartitionPlan, SourceId, SourceSpec, Task, WorkerId};

/// The ordered worker chain a ring baseline pushes one source's data
/// through. The first worker hosts the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RingChain {
    pub source: SourceId,
    pub order: Vec<WorkerId>,
}

impl RingChain {
    /// The chain restricted to workers for which `present` holds, in chain
    /// order.
    pub fn present(&self, present: impl Fn(WorkerId) -> bool) -> Vec<WorkerId> {
        self.order.iter().copied().filter(|&w| present(w)).collect()
    }

    /// First present worker strictly after `w` in chain order, wrapping
    /// around. Falls back to the head when nothing else is present.
    pub fn successor(&self, w: WorkerId, present: impl Fn(WorkerId) -> bool) -> WorkerId {
        let n = self.order.len();
        let start = self.order.iter().position(|&x| x == w).unwrap_or(0);
        (1..=n).map(|i| self.order[(start + i) % n]).find(|&x| x != w && present(x)).unwrap_or(self.order[0])
    }
}

/// `chain` with `departed` removed; relative order of the rest is kept.
pub fn baseline_bypass(chain: &[WorkerId], departed: WorkerId) -> Vec<WorkerId> {
    chain.iter().copied().filter(|&w| w != departed).collect()
}

/// Everything runs where the data lives.
pub fn local_policy(_task: &Task, source: &SourceSpec) -> WorkerId {
    source.host
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RingVariant {
    /// Layer allocation proportional to measured worker speed.
    Adaptive,
    /// Uniform layer allocation.
    Uniform,
}

/// Worker that processes partition `k` (1-based) when the model is split
/// over `chain` in order.
pub fn ring_policy(k: u32, chain: &[WorkerId]) -> WorkerId {
    chain[(k as usize - 1) % chain.len()]
}

/// Splits `model` over `chain` for one data point: one partition per chain
/// worker (fewer if the model has fewer layers). `seconds_per_flop` gives
/// the measured speed of each chain worker and is only read by the adaptive
/// variant.
pub fn ring_plan(
    model: &ModelSpec,
    chain: &[WorkerId],
    variant: RingVariant,
    seconds_per_flop: impl Fn(WorkerId) -> f64,
) -> PartitionPlan {
    let parts = (chain.len() as u32).clamp(1, model.num_layers());
    match variant {
        RingVariant::Uniform => PartitionPlan::uniform(model, parts).expect("parts within layer count"),
        RingVariant::Adaptive => {
            let speeds: Vec<f64> = chain[..parts as usize].iter().map(|&w| 1.0 / seconds_per_flop(w)).collect();
            proportional_plan(model, &speeds)
        }
    }
}

/// Contiguous split whose per-partition FLOP share tracks `speeds`. Each
/// partition gets at least one layer.
pub fn proportional_plan(model: &ModelSpec, speeds: &[f64]) -> PartitionPlan {
    let layers = model.num_layers();
    let n = (speeds.len() as u32).clamp(1, layers);
    let speeds = &speeds[..n as usize];
    let total_speed: f64 = speeds.iter().sum();
    let total_flops = model.total_flops();
    let mut cum = Vec::with_capacity(layers as usize + 1);
    cum.push(0.0);
    for l in &model.layers {
        cum.push(cum.last().copied().unwrap_or(0.0) + l.flops);
    }

    let mut cuts = Vec::with_capacity(n as usize);
    let mut begin = 1u32;
    let mut share = 0.0;
    for (i, s) in speeds.iter().enumerate() {
        let i = i as u32;
        if i + 1 == n {
            cuts.push(Cut::new(begin, layers));
            break;
        }
        share += s / total_speed;
        let target = share * total_flops;
        // last layer of this partition: the boundary whose cumulative FLOPs
        // is nearest the target
        let mut end = begin;
        while end < layers && (cum[end as usize + 1] - target).abs() <= (cum[end as usize] - target).abs() {
            end += 1;
        }
        let remaining = n - i - 1;
        end = end.clamp(begin, layers - remaining);
        cuts.push(Cut::new(begin, end));
        begin = end + 1;
    }
    PartitionPlan::new(model.id.clone(), cuts)
}
