//! Delay model: compute time, worker backlog, per-link transfer time and
//! shortest-path delay across the current topology.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::CostError;
use crate::model::{SimTime, Task, WorkerId, WorkerProfile};
use crate::sim::topology::Topology;
use crate::worker::WorkerState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub a: WorkerId,
    pub b: WorkerId,
    pub bandwidth_bytes_per_sec: f64,
    pub propagation_delay_sec: f64,
}

impl LinkSpec {
    pub fn connects(&self, x: WorkerId, y: WorkerId) -> bool {
        (self.a == x && self.b == y) || (self.a == y && self.b == x)
    }

    pub fn other(&self, x: WorkerId) -> WorkerId {
        if self.a == x {
            self.b
        } else {
            self.a
        }
    }
}

/// What a worker reports about itself in a status reply.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatusSnapshot {
    pub worker: WorkerId,
    pub seconds_per_flop: f64,
    pub backlog_sec: f64,
    pub taken_at: SimTime,
}

pub fn compute_delay(task: &Task, profile: &WorkerProfile) -> SimTime {
    task.flops * profile.seconds_per_flop
}

/// Time for `worker` to finish what it already holds: the remainder of the
/// running task plus the compute time of every queued task. Communication is
/// not included.
pub fn backlog(worker: &WorkerState, profile: &WorkerProfile, now: SimTime) -> SimTime {
    let running = worker.running.as_ref().map(|r| (r.finish_at - now).max(0.0)).unwrap_or(0.0);
    running + worker.queue.iter().map(|t| compute_delay(t, profile)).sum::<f64>()
}

pub fn transfer_delay(bytes: u64, link: &LinkSpec) -> SimTime {
    link.propagation_delay_sec + bytes as f64 / link.bandwidth_bytes_per_sec
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: WorkerId,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum total delay of sending `bytes` from `from` to `to`, with the hop
/// sequence (excluding `from`). Only present workers and their links count.
pub fn shortest_path(
    topology: &Topology,
    from: WorkerId,
    to: WorkerId,
    bytes: u64,
) -> Result<(SimTime, Vec<WorkerId>), CostError> {
    let n = topology.len();
    for w in [from, to] {
        if w.0 as usize >= n {
            return Err(CostError::UnknownWorker(w));
        }
    }
    if !topology.is_present(from) || !topology.is_present(to) {
        return Err(CostError::NoPath { from, to });
    }
    if from == to {
        return Ok((0.0, Vec::new()));
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<WorkerId>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[from.0 as usize] = 0.0;
    heap.push(Frontier { cost: 0.0, node: from });
    while let Some(Frontier { cost, node }) = heap.pop() {
        if cost > dist[node.0 as usize] {
            continue;
        }
        if node == to {
            break;
        }
        for (next, link) in topology.present_links_of(node) {
            let c = cost + transfer_delay(bytes, link);
            if c < dist[next.0 as usize] {
                dist[next.0 as usize] = c;
                prev[next.0 as usize] = Some(node);
                heap.push(Frontier { cost: c, node: next });
            }
        }
    }
    if dist[to.0 as usize].is_infinite() {
        return Err(CostError::NoPath { from, to });
    }
    let mut hops = vec![to];
    let mut cur = to;
    while let Some(p) = prev[cur.0 as usize] {
        if p == from {
            break;
        }
        hops.push(p);
        cur = p;
    }
    hops.reverse();
    Ok((dist[to.0 as usize], hops))
}

/// Delay of the cheapest route for `bytes` from `from` to `to`; zero when
/// they are the same worker.
pub fn path_delay(topology: &Topology, from: WorkerId, to: WorkerId, bytes: u64) -> Result<SimTime, CostError> {
    shortest_path(topology, from, to, bytes).map(|(d, _)| d)
}
