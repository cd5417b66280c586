use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::{SimTime, TaskKey, WorkerId};
use crate::protocol::Message;

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    /// `msg` reaches `hop_to` on its way to `dest`. `epoch` is the presence
    /// epoch of `hop_to` when the hop started; a mismatch means it left
    /// in between.
    MessageDelivery {
        msg: Message,
        hop_from: WorkerId,
        hop_to: WorkerId,
        dest: WorkerId,
        epoch: u64,
    },
    ComputeComplete {
        worker: WorkerId,
    },
    ChurnLeave {
        worker: WorkerId,
    },
    ChurnReturn {
        worker: WorkerId,
    },
    /// Give up waiting for status replies of decision round `round`.
    StatusRefresh {
        worker: WorkerId,
        round: u64,
    },
    RtcTimeout {
        worker: WorkerId,
        round: u64,
    },
    GrantExpiry {
        worker: WorkerId,
        task: TaskKey,
    },
    /// An undeliverable data message comes back to the hop that sent it.
    Bounce {
        msg: Message,
        at: WorkerId,
        dest: WorkerId,
    },
}

impl EventKind {
    pub fn is_churn(&self) -> bool {
        matches!(self, EventKind::ChurnLeave { .. } | EventKind::ChurnReturn { .. })
    }
}

#[derive(Clone, Debug)]
pub struct Event {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Time-ordered event queue; ties pop in insertion order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Event>,
    seq: u64,
    non_churn: usize,
}

impl EventQueue {
    pub fn push(&mut self, time: SimTime, kind: EventKind) {
        self.seq += 1;
        if !kind.is_churn() {
            self.non_churn += 1;
        }
        self.heap.push(Event { time, seq: self.seq, kind });
    }

    pub fn pop(&mut self) -> Option<Event> {
        let ev = self.heap.pop()?;
        if !ev.kind.is_churn() {
            self.non_churn -= 1;
        }
        Some(ev)
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    /// Events other than churn still pending.
    pub fn pending_work(&self) -> usize {
        self.non_churn
    }
}
