//! Per-worker task selection, the offload decision rule, what happens when a
//! task finishes, and data-point admission at sources.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::cost::StatusSnapshot;
use crate::error::{ModelError, SchedulerError};
use crate::model::{ModelSpec, PartitionPlan, SimTime, SourceId, SourceSpec, Task, WorkerId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueueDiscipline {
    /// Highest priority first, then oldest, then (source, data, partition).
    #[default]
    Priority,
    /// Arrival order, priority-blind.
    Fifo,
    /// One FIFO per source, served in turn.
    RoundRobin,
}

#[derive(Clone, Debug)]
struct Entry {
    task: Task,
    priority: f64,
    seq: u64,
}

/// The set of tasks a worker is responsible for, either to run or to offload.
#[derive(Clone, Debug, Default)]
pub struct TaskQueue {
    discipline: QueueDiscipline,
    entries: Vec<Entry>,
    seq: u64,
    last_served: Option<SourceId>,
}

impl TaskQueue {
    pub fn new(discipline: QueueDiscipline) -> Self {
        TaskQueue { discipline, ..Default::default() }
    }

    pub fn discipline(&self) -> QueueDiscipline {
        self.discipline
    }

    pub fn push(&mut self, task: Task, priority: f64) {
        self.seq += 1;
        self.entries.push(Entry { task, priority, seq: self.seq });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Task> {
        self.entries.iter().map(|e| &e.task)
    }

    pub fn holds_data(&self, source: SourceId, data: u32) -> bool {
        self.iter().any(|t| t.key.source == source && t.key.data == data)
    }

    fn priority_order(a: &Entry, b: &Entry) -> Ordering {
        // Greater means "fetch first".
        a.priority
            .total_cmp(&b.priority)
            .then_with(|| b.task.created_at.total_cmp(&a.task.created_at))
            .then_with(|| b.task.key.cmp(&a.task.key))
    }

    fn next_index(&self) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        match self.discipline {
            QueueDiscipline::Priority => {
                self.entries.iter().enumerate().max_by(|(_, a), (_, b)| Self::priority_order(a, b)).map(|(i, _)| i)
            }
            QueueDiscipline::Fifo => self.entries.iter().enumerate().min_by_key(|(_, e)| e.seq).map(|(i, _)| i),
            QueueDiscipline::RoundRobin => {
                let mut sources: Vec<SourceId> = self.entries.iter().map(|e| e.task.key.source).collect();
                sources.sort();
                sources.dedup();
                let pick = match self.last_served {
                    Some(last) => sources.iter().copied().find(|s| *s > last).unwrap_or(sources[0]),
                    None => sources[0],
                };
                self.entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.task.key.source == pick)
                    .min_by_key(|(_, e)| e.seq)
                    .map(|(i, _)| i)
            }
        }
    }

    pub fn peek_next(&self) -> Option<&Task> {
        self.next_index().map(|i| &self.entries[i].task)
    }

    /// Removes and returns the task this queue's discipline serves next.
    pub fn pop_next(&mut self, _now: SimTime) -> Option<Task> {
        let i = self.next_index()?;
        let e = self.entries.remove(i);
        self.last_served = Some(e.task.key.source);
        Some(e.task)
    }

    /// Removes every task matching `pred`, in arrival order.
    pub fn drain_where(&mut self, mut pred: impl FnMut(&Task) -> bool) -> Vec<Task> {
        let mut taken: Vec<Entry> = Vec::new();
        let mut kept = Vec::with_capacity(self.entries.len());
        for e in self.entries.drain(..) {
            if pred(&e.task) {
                taken.push(e);
            } else {
                kept.push(e);
            }
        }
        self.entries = kept;
        taken.sort_by_key(|e| e.seq);
        taken.into_iter().map(|e| e.task).collect()
    }
}

/// Fetches the highest-priority, oldest task.
pub fn fetch_next(queue: &mut TaskQueue, now: SimTime) -> Option<Task> {
    queue.pop_next(now)
}

/// One entry of the offload candidate set, as seen by the deciding worker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub worker: WorkerId,
    /// Communication delay to reach `worker`; zero for the decider itself.
    pub delay: SimTime,
    pub seconds_per_flop: f64,
    pub backlog: SimTime,
}

impl Candidate {
    pub fn from_snapshot(snapshot: &StatusSnapshot, delay: SimTime) -> Self {
        Candidate {
            worker: snapshot.worker,
            delay,
            seconds_per_flop: snapshot.seconds_per_flop,
            backlog: snapshot.backlog_sec,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffloadDecision {
    pub chosen: WorkerId,
    pub score: f64,
    pub per_candidate: BTreeMap<WorkerId, f64>,
}

/// `(delay + age + flops * seconds_per_flop + backlog) / weight`.
pub fn offload_score(task: &Task, weight: f64, candidate: &Candidate, now: SimTime) -> f64 {
    (candidate.delay + task.age(now) + task.flops * candidate.seconds_per_flop + candidate.backlog) / weight
}

/// Picks the candidate with the smallest score; ties go to the lowest id.
pub fn decide_offload(
    task: &Task,
    weight: f64,
    candidates: &[Candidate],
    now: SimTime,
) -> Result<OffloadDecision, SchedulerError> {
    let per_candidate: BTreeMap<WorkerId, f64> =
        candidates.iter().map(|c| (c.worker, offload_score(task, weight, c, now))).collect();
    let mut best: Option<(WorkerId, f64)> = None;
    for (&w, &s) in &per_candidate {
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((w, s));
        }
    }
    let (chosen, score) = best.ok_or(SchedulerError::NoCandidates)?;
    Ok(OffloadDecision { chosen, score, per_candidate })
}

/// Same as [`decide_offload`] but assembles candidates from status snapshots
/// and per-candidate delays.
pub fn decide_from_snapshots(
    task: &Task,
    weight: f64,
    snapshots: &BTreeMap<WorkerId, StatusSnapshot>,
    delays: &BTreeMap<WorkerId, SimTime>,
    now: SimTime,
) -> Result<OffloadDecision, SchedulerError> {
    let mut cands = Vec::with_capacity(delays.len());
    for (&w, &d) in delays {
        let snap = snapshots.get(&w).ok_or(SchedulerError::MissingSnapshot(w))?;
        cands.push(Candidate::from_snapshot(snap, d));
    }
    decide_offload(task, weight, &cands, now)
}

/// What a worker must do after finishing a task.
#[derive(Clone, Debug, PartialEq)]
pub enum DoneAction {
    /// Next partition of the same data point, created now and kept locally.
    Continue(Task),
    /// Final partition finished at the source host: record the result.
    Finished,
    /// Final partition finished elsewhere: ship the output to the source host.
    ReturnOutput { to: WorkerId, bytes: u64 },
}

pub fn on_task_done(
    task: &Task,
    at: WorkerId,
    source: &SourceSpec,
    plan: &PartitionPlan,
    model: &ModelSpec,
    now: SimTime,
) -> Result<DoneAction, ModelError> {
    if !task.is_last() {
        let next = Task::from_plan(task.key.source, task.key.data, task.key.partition + 1, plan, model, now)?;
        return Ok(DoneAction::Continue(next));
    }
    if at == source.host {
        Ok(DoneAction::Finished)
    } else {
        Ok(DoneAction::ReturnOutput { to: source.host, bytes: task.output_bytes })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitTrigger {
    Completed,
    Offloaded,
    OutputReturned,
}

/// Tracks which data points each source has admitted so that every data
/// index is admitted at most once regardless of how many triggers fire.
#[derive(Clone, Debug, Default)]
pub struct Admissions {
    admitted: BTreeMap<SourceId, u32>,
}

impl Admissions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admitted(&self, source: SourceId) -> u32 {
        self.admitted.get(&source).copied().unwrap_or(0)
    }

    /// Admits data point 1 if it has not been admitted yet.
    pub fn admit_first(&mut self, source: &SourceSpec) -> Option<u32> {
        self.admit_after(source, 0)
    }

    /// Called when data point `done` of `source` has left the source host
    /// (finished, offloaded, or its output returned).
    pub fn admit_next(&mut self, source: &SourceSpec, done: u32, _trigger: AdmitTrigger) -> Option<u32> {
        self.admit_after(source, done)
    }

    fn admit_after(&mut self, source: &SourceSpec, done: u32) -> Option<u32> {
        let next = done + 1;
        let slot = self.admitted.entry(source.id).or_insert(0);
        if next > source.num_data_points || next <= *slot {
            return None;
        }
        *slot = next;
        Some(next)
    }
}
