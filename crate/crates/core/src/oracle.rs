//! Exhaustive policy search over small static instances, used to check the
//! greedy offload rule against the global accuracy/delay objective.
//!
//! A policy assigns every task `(m, d, k)` a worker. Its value is
//!
//! ```text
//! J = Σ_m γ_m Σ_d α_m Π_k (1 - P(worker of (m,d,k)))  -  β Σ_{m,d,k} ρ(m,d,k)
//! ```
//!
//! where `ρ` is the shortest-path delay from the worker of the previous
//! partition (the source host for `k = 1`) plus the compute time and any
//! backlog already waiting on the chosen worker.

use std::collections::BTreeMap;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::config::Scenario;
use crate::cost::path_delay;
use crate::error::OracleError;
use crate::model::{task_flops, SourceId, SourceSpec, TaskKey, WorkerId};
use crate::sim::topology::Topology;

pub type PolicyAssignment = BTreeMap<TaskKey, WorkerId>;

/// One partition of a source's model as the oracle sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub flops: f64,
    pub input_bytes: u64,
}

#[derive(Clone, Debug)]
pub struct OracleSource {
    pub spec: SourceSpec,
    pub stages: Vec<Stage>,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub topology: Topology,
    pub sources: Vec<OracleSource>,
    /// Failure probability of a task placed on each worker.
    pub failure: Vec<f64>,
    /// Work already queued on each worker, in seconds.
    pub backlog: Vec<f64>,
}

impl Instance {
    pub fn new(topology: Topology, sources: Vec<OracleSource>) -> Self {
        let n = topology.len();
        Instance { topology, sources, failure: vec![0.0; n], backlog: vec![0.0; n] }
    }

    /// Builds an instance from a scenario's workers, links, sources and
    /// partition plans. Failure probabilities come from the scenario's
    /// oracle section.
    pub fn from_scenario(sc: &Scenario) -> Result<Self, OracleError> {
        let mut sources = Vec::new();
        for (s, plan) in sc.sources.iter().zip(&sc.plans) {
            let model = sc.model_of(s.id);
            let mut stages = Vec::new();
            for k in 1..=plan.num_partitions() {
                let cut = plan.cut(k).map_err(|_| OracleError::NoWorkers)?;
                stages.push(Stage {
                    flops: task_flops(plan, model, k).map_err(|_| OracleError::NoWorkers)?,
                    input_bytes: model.bytes_into(cut.begin),
                });
            }
            let mut spec = s.clone();
            if let Some(d) = sc.oracle.data_points {
                spec.num_data_points = d;
            }
            sources.push(OracleSource { spec, stages });
        }
        let mut inst = Instance::new(sc.topology.clone(), sources);
        for (name, p) in &sc.oracle.failure {
            if let Some(w) = sc.topology.find(name) {
                inst.failure[w.0 as usize] = *p;
            }
        }
        Ok(inst)
    }

    /// Every task in enumeration order: source, then data point, then
    /// partition.
    pub fn tasks(&self) -> Vec<TaskKey> {
        let mut out = Vec::new();
        for s in &self.sources {
            for d in 1..=s.spec.num_data_points {
                for k in 1..=s.stages.len() as u32 {
                    out.push(TaskKey { source: s.spec.id, data: d, partition: k });
                }
            }
        }
        out
    }

    fn source(&self, id: SourceId) -> &OracleSource {
        self.sources.iter().find(|s| s.spec.id == id).expect("task of a known source")
    }

    /// Delay of running `key` on `to` when its input sits on `from`.
    pub fn rho(&self, key: TaskKey, from: WorkerId, to: WorkerId) -> Result<f64, OracleError> {
        let stage = &self.source(key.source).stages[key.partition as usize - 1];
        let comm = path_delay(&self.topology, from, to, stage.input_bytes)?;
        Ok(comm + stage.flops * self.topology.profile(to).seconds_per_flop + self.backlog[to.0 as usize])
    }
}

/// Value of the objective for `assignment`, which must cover every task.
pub fn objective(assignment: &PolicyAssignment, inst: &Instance, beta: f64) -> Result<f64, OracleError> {
    let mut accuracy = 0.0;
    let mut delay = 0.0;
    for s in &inst.sources {
        let m = s.spec.id;
        for d in 1..=s.spec.num_data_points {
            let mut survive = 1.0;
            let mut prev = s.spec.host;
            for k in 1..=s.stages.len() as u32 {
                let key = TaskKey { source: m, data: d, partition: k };
                let w = assignment[&key];
                survive *= 1.0 - inst.failure[w.0 as usize];
                delay += inst.rho(key, prev, w)?;
                prev = w;
            }
            accuracy += s.spec.priority * s.spec.accuracy_gain * survive;
        }
    }
    Ok(accuracy - beta * delay)
}

/// Worker minimizing `ρ / (γ α)` for `key` with its input on `from`;
/// ties go to the lowest id.
pub fn per_task_minimizer(inst: &Instance, key: TaskKey, from: WorkerId) -> Result<(WorkerId, f64), OracleError> {
    let spec = &inst.source(key.source).spec;
    let weight = spec.priority * spec.accuracy_gain;
    let mut best: Option<(WorkerId, f64)> = None;
    for p in inst.topology.profiles() {
        if !inst.topology.is_present(p.id) {
            continue;
        }
        let Ok(r) = inst.rho(key, from, p.id) else { continue };
        let score = r / weight;
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((p.id, score));
        }
    }
    best.ok_or(OracleError::NoWorkers)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    /// A global maximizer (the first one in enumeration order).
    pub assignment: PolicyAssignment,
    pub value: f64,
    /// Best assignment for each data point considered on its own.
    pub per_data: BTreeMap<(SourceId, u32), PolicyAssignment>,
    /// The per-data-point optima joined into one policy.
    pub joined: PolicyAssignment,
    pub joined_value: f64,
}

/// Precomputed `ρ` for every (task, from, to) plus per-task survival factors.
struct Table {
    workers: Vec<WorkerId>,
    rho: Vec<Vec<Vec<f64>>>,
}

impl Table {
    fn build(inst: &Instance, tasks: &[TaskKey]) -> Result<Self, OracleError> {
        let workers: Vec<WorkerId> =
            inst.topology.profiles().iter().map(|p| p.id).filter(|&w| inst.topology.is_present(w)).collect();
        if workers.is_empty() {
            return Err(OracleError::NoWorkers);
        }
        let n = inst.topology.len();
        let mut rho = Vec::with_capacity(tasks.len());
        for &t in tasks {
            let mut by_from = vec![vec![f64::INFINITY; n]; n];
            for &from in &workers {
                for &to in &workers {
                    by_from[from.0 as usize][to.0 as usize] = inst.rho(t, from, to).unwrap_or(f64::INFINITY);
                }
            }
            rho.push(by_from);
        }
        Ok(Table { workers, rho })
    }
}

/// Value contributed by one data point's partitions placed on `choice`.
fn data_value(inst: &Instance, table: &Table, s: &OracleSource, first: usize, choice: &[WorkerId], beta: f64) -> f64 {
    let mut survive = 1.0;
    let mut delay = 0.0;
    let mut prev = s.spec.host;
    for (i, &w) in choice.iter().enumerate() {
        survive *= 1.0 - inst.failure[w.0 as usize];
        delay += table.rho[first + i][prev.0 as usize][w.0 as usize];
        prev = w;
    }
    s.spec.priority * s.spec.accuracy_gain * survive - beta * delay
}

fn decode(mut index: u64, base: u64, out: &mut [WorkerId], workers: &[WorkerId]) {
    for slot in out.iter_mut() {
        *slot = workers[(index % base) as usize];
        index /= base;
    }
}

/// Index of the best assignment among `0..total`; ties keep the lowest
/// index.
fn search(total: u64, eval: impl Fn(u64) -> f64 + Sync) -> (u64, f64) {
    let better = |a: (u64, f64), b: (u64, f64)| {
        if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) {
            b
        } else {
            a
        }
    };
    #[cfg(feature = "parallel")]
    {
        (0..total).into_par_iter().map(|i| (i, eval(i))).reduce(|| (u64::MAX, f64::NEG_INFINITY), better)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..total).map(|i| (i, eval(i))).fold((u64::MAX, f64::NEG_INFINITY), better)
    }
}

/// Exhaustive search over every assignment of every task to every present
/// worker.
pub fn brute_force_optimal(inst: &Instance, beta: f64, cap: u64) -> Result<OracleSolution, OracleError> {
    let tasks = inst.tasks();
    let table = Table::build(inst, &tasks)?;
    let base = table.workers.len() as u64;
    let count = (base as f64).powi(tasks.len() as i32);
    if count > cap as f64 {
        return Err(OracleError::CapExceeded { assignments: count, cap });
    }
    let total = base.pow(tasks.len() as u32);

    // (source index, first task index, partitions) per data point
    let mut blocks = Vec::new();
    let mut first = 0;
    for (si, s) in inst.sources.iter().enumerate() {
        for _ in 0..s.spec.num_data_points {
            blocks.push((si, first, s.stages.len()));
            first += s.stages.len();
        }
    }

    // J is a sum over data points, so each data point's contribution is
    // tabulated once per local choice and every global assignment is
    // scored by looking its digits up.
    struct Block {
        stride: u64,
        local_total: u64,
        values: Vec<f64>,
    }
    let tables: Vec<Block> = blocks
        .iter()
        .map(|&(si, f, k)| {
            let local_total = base.pow(k as u32);
            let mut c = vec![WorkerId(0); k];
            let values = (0..local_total)
                .map(|i| {
                    decode(i, base, &mut c, &table.workers);
                    data_value(inst, &table, &inst.sources[si], f, &c, beta)
                })
                .collect();
            Block { stride: base.pow(f as u32), local_total, values }
        })
        .collect();

    let (best, _) =
        search(total, |i| tables.iter().map(|b| b.values[((i / b.stride) % b.local_total) as usize]).sum::<f64>());
    let mut choice = vec![WorkerId(0); tasks.len()];
    decode(best, base, &mut choice, &table.workers);
    let assignment: PolicyAssignment = tasks.iter().copied().zip(choice.iter().copied()).collect();
    let value = objective(&assignment, inst, beta)?;

    let mut per_data = BTreeMap::new();
    let mut joined = PolicyAssignment::new();
    for (&(si, f, k), b) in blocks.iter().zip(&tables) {
        let s = &inst.sources[si];
        let (best_local, _) = search(b.local_total, |i| b.values[i as usize]);
        let mut c = vec![WorkerId(0); k];
        decode(best_local, base, &mut c, &table.workers);
        let part: PolicyAssignment = tasks[f..f + k].iter().copied().zip(c).collect();
        joined.extend(part.iter().map(|(k, w)| (*k, *w)));
        per_data.insert((s.spec.id, tasks[f].data), part);
    }
    let joined_value = objective(&joined, inst, beta)?;
    Ok(OracleSolution { assignment, value, per_data, joined, joined_value })
}
