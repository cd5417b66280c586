//! Wire messages and the RTC/CTC handshake that keeps a worker from being
//! claimed by several offloaders at once.
//!
//! A requester sends `Rtc` to its chosen target. A CPU-idle target with no
//! outstanding grant broadcasts `Ctc` to all its neighbors, naming the head
//! of its pending-request list. The named requester then ships the feature
//! vector; every other requester waiting on that target treats the broadcast
//! as a denial. A grant that is not followed by a transfer within the RTC
//! timeout is revoked.

use std::fmt;

use crate::cost::{transfer_delay, LinkSpec, StatusSnapshot};
use crate::model::{SimTime, SourceId, Task, TaskKey, WorkerId, WorkerProfile};
use crate::worker::WorkerState;

#[derive(Clone, Debug, PartialEq)]
pub enum MessageKind {
    StatusRequest,
    StatusReply { seconds_per_flop: f64, backlog_sec: f64 },
    Rtc { task: TaskKey, flops: f64 },
    Ctc { granted: WorkerId, task: TaskKey, flops: f64 },
    FeatureTransfer { task: Task, bytes: u64 },
    OutputReturn { task: TaskKey, bytes: u64 },
}

impl MessageKind {
    pub fn name(&self) -> &'static str {
        match self {
            MessageKind::StatusRequest => "StatusRequest",
            MessageKind::StatusReply { .. } => "StatusReply",
            MessageKind::Rtc { .. } => "RTC",
            MessageKind::Ctc { .. } => "CTC",
            MessageKind::FeatureTransfer { .. } => "FeatureTransfer",
            MessageKind::OutputReturn { .. } => "OutputReturn",
        }
    }

    /// Data messages carry feature vectors and queue behind each other on a
    /// link; control messages do not.
    pub fn is_data(&self) -> bool {
        matches!(self, MessageKind::FeatureTransfer { .. } | MessageKind::OutputReturn { .. })
    }

    pub fn payload_bytes(&self, control_bytes: u64) -> u64 {
        match self {
            MessageKind::FeatureTransfer { bytes, .. } | MessageKind::OutputReturn { bytes, .. } => *bytes,
            _ => control_bytes,
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MessageKind::StatusRequest => write!(f, "StatusRequest"),
            MessageKind::StatusReply { seconds_per_flop, backlog_sec } => {
                write!(f, "StatusReply spf={seconds_per_flop:e} q={backlog_sec:.9}")
            }
            MessageKind::Rtc { task, flops } => write!(f, "RTC task={task} flops={flops:e}"),
            MessageKind::Ctc { granted, task, flops } => {
                write!(f, "CTC granted={granted} task={task} flops={flops:e}")
            }
            MessageKind::FeatureTransfer { task, bytes } => {
                write!(f, "FeatureTransfer task={} bytes={bytes}", task.key)
            }
            MessageKind::OutputReturn { task, bytes } => {
                write!(f, "OutputReturn task={task} bytes={bytes}")
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Recipient {
    Worker(WorkerId),
    /// Every current one-hop neighbor of the sender.
    Neighbors,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub sender: WorkerId,
    pub recipient: Recipient,
    pub sent_at: SimTime,
}

impl Message {
    pub fn to(sender: WorkerId, recipient: WorkerId, kind: MessageKind, now: SimTime) -> Self {
        Message { kind, sender, recipient: Recipient::Worker(recipient), sent_at: now }
    }

    pub fn broadcast(sender: WorkerId, kind: MessageKind, now: SimTime) -> Self {
        Message { kind, sender, recipient: Recipient::Neighbors, sent_at: now }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PendingRtc {
    pub sender: WorkerId,
    pub task: TaskKey,
    pub flops: f64,
    pub received_at: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grant {
    pub to: WorkerId,
    pub task: TaskKey,
    pub expires_at: SimTime,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RtcState {
    pub pending: Vec<PendingRtc>,
    pub granted: Option<Grant>,
}

impl RtcState {
    pub fn clear(&mut self) {
        self.pending.clear();
        self.granted = None;
    }
}

/// Side effects a worker asks the engine to carry out after handling a
/// message.
#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Send(Message),
    /// A task was inserted into the worker's queue.
    Inserted(TaskKey),
    GrantIssued(Grant),
    StatusReceived(StatusSnapshot),
    CtcHeard {
        from: WorkerId,
        granted: WorkerId,
        task: TaskKey,
    },
    OutputArrived(TaskKey),
    ProtocolError(String),
}

/// Per-call context for [`handle_message`].
pub struct HandlerCtx<'a> {
    pub now: SimTime,
    pub rtc_timeout: SimTime,
    /// Whether incoming feature transfers must be covered by a grant.
    pub handshake: bool,
    pub priority_of: &'a dyn Fn(SourceId) -> f64,
    /// Source hosted by this worker, if `OutputReturn` is legitimate here.
    pub hosts_source: &'a dyn Fn(SourceId) -> bool,
}

pub fn handle_message(
    worker: &mut WorkerState,
    profile: &WorkerProfile,
    msg: &Message,
    backlog_sec: f64,
    ctx: &HandlerCtx<'_>,
) -> Vec<Action> {
    let mut out = Vec::new();
    match &msg.kind {
        MessageKind::FeatureTransfer { task, .. } => {
            if ctx.handshake {
                match &worker.rtc.granted {
                    Some(g) if g.to == msg.sender && g.task == task.key => {
                        worker.rtc.granted = None;
                    }
                    _ => out.push(Action::ProtocolError(format!(
                        "transfer of {} from {} without a matching grant",
                        task.key, msg.sender
                    ))),
                }
            }
            worker.queue.push(task.clone(), (ctx.priority_of)(task.key.source));
            out.push(Action::Inserted(task.key));
            if ctx.handshake {
                if let Some(ctc) = try_grant(worker, ctx.now, ctx.rtc_timeout) {
                    let grant = worker.rtc.granted.clone().expect("grant set by try_grant");
                    out.push(Action::Send(ctc));
                    out.push(Action::GrantIssued(grant));
                }
            }
        }
        MessageKind::StatusRequest => {
            out.push(Action::Send(Message::to(
                worker.id,
                msg.sender,
                MessageKind::StatusReply { seconds_per_flop: profile.seconds_per_flop, backlog_sec },
                ctx.now,
            )));
        }
        MessageKind::StatusReply { seconds_per_flop, backlog_sec } => {
            out.push(Action::StatusReceived(StatusSnapshot {
                worker: msg.sender,
                seconds_per_flop: *seconds_per_flop,
                backlog_sec: *backlog_sec,
                taken_at: ctx.now,
            }));
        }
        MessageKind::Rtc { task, flops } => {
            worker.rtc.pending.push(PendingRtc {
                sender: msg.sender,
                task: *task,
                flops: *flops,
                received_at: ctx.now,
            });
            if let Some(ctc) = try_grant(worker, ctx.now, ctx.rtc_timeout) {
                let grant = worker.rtc.granted.clone().expect("grant set by try_grant");
                out.push(Action::Send(ctc));
                out.push(Action::GrantIssued(grant));
            }
        }
        MessageKind::Ctc { granted, task, .. } => {
            out.push(Action::CtcHeard { from: msg.sender, granted: *granted, task: *task });
        }
        MessageKind::OutputReturn { task, .. } => {
            if (ctx.hosts_source)(task.source) {
                out.push(Action::OutputArrived(*task));
            } else {
                out.push(Action::ProtocolError(format!(
                    "output for {task} delivered to {} which does not host the source",
                    worker.id
                )));
            }
        }
    }
    out
}

/// Grants the head pending RTC if the worker's CPU is idle and no grant is
/// outstanding. Returns the CTC broadcast to send. Requests older than the
/// RTC timeout are dropped first; the rest are denied by the broadcast.
pub fn try_grant(worker: &mut WorkerState, now: SimTime, rtc_timeout: SimTime) -> Option<Message> {
    if worker.is_computing() || worker.rtc.granted.is_some() || !worker.present {
        return None;
    }
    worker.rtc.pending.retain(|p| p.received_at + rtc_timeout >= now);
    let head = worker
        .rtc
        .pending
        .iter()
        .min_by(|a, b| a.received_at.total_cmp(&b.received_at).then_with(|| a.sender.cmp(&b.sender)))?
        .clone();
    worker.rtc.pending.clear();
    worker.rtc.granted = Some(Grant { to: head.sender, task: head.task, expires_at: now + rtc_timeout });
    Some(Message::broadcast(
        worker.id,
        MessageKind::Ctc { granted: head.sender, task: head.task, flops: head.flops },
        now,
    ))
}

/// Revokes the grant for `task` if it is still outstanding and has expired.
pub fn expire_grant(worker: &mut WorkerState, task: TaskKey, now: SimTime) -> bool {
    match &worker.rtc.granted {
        Some(g) if g.task == task && g.expires_at <= now => {
            worker.rtc.granted = None;
            true
        }
        _ => false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OffloadOutcome {
    Granted,
    Denied,
    Timeout,
}

/// Requester-side view of one RTC round.
#[derive(Clone, Debug, PartialEq)]
pub struct Handshake {
    pub requester: WorkerId,
    pub target: WorkerId,
    pub task: TaskKey,
    pub sent_at: SimTime,
    pub deadline: SimTime,
}

impl Handshake {
    pub fn start(
        requester: WorkerId,
        target: WorkerId,
        task: &Task,
        now: SimTime,
        timeout: SimTime,
    ) -> (Self, Message) {
        let hs = Handshake { requester, target, task: task.key, sent_at: now, deadline: now + timeout };
        let rtc = Message::to(requester, target, MessageKind::Rtc { task: task.key, flops: task.flops }, now);
        (hs, rtc)
    }

    pub fn on_ctc(&self, from: WorkerId, granted: WorkerId, task: TaskKey) -> Option<OffloadOutcome> {
        if from != self.target {
            return None;
        }
        if granted == self.requester {
            (task == self.task).then_some(OffloadOutcome::Granted)
        } else {
            Some(OffloadOutcome::Denied)
        }
    }

    pub fn on_timeout(&self, now: SimTime) -> Option<OffloadOutcome> {
        (now >= self.deadline).then_some(OffloadOutcome::Timeout)
    }
}

/// Three round trips of a control message over the slowest incident link.
pub fn rtc_timeout<'a>(incident: impl IntoIterator<Item = &'a LinkSpec>, control_bytes: u64, factor: f64) -> SimTime {
    let rtt = incident.into_iter().map(|l| 2.0 * transfer_delay(control_bytes, l)).fold(0.0, f64::max);
    factor * rtt
}
