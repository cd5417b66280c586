use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{ring_plan, RingChain, RingVariant};
use crate::config::{Algorithm, Medium, Scenario};
use crate::cost::{backlog, path_delay, shortest_path, transfer_delay, StatusSnapshot};
use crate::error::SimError;
use crate::model::{Cut, PartitionPlan, SimTime, SourceId, Task, TaskKey, WorkerId};
use crate::protocol::{
    handle_message, rtc_timeout, try_grant, Action, HandlerCtx, Handshake, Message, MessageKind, OffloadOutcome,
};
use crate::scheduler::{
    decide_offload, on_task_done, Admissions, AdmitTrigger, Candidate, DoneAction, QueueDiscipline,
};
use crate::sim::churn::ChurnStream;
use crate::sim::event::{EventKind, EventQueue};
use crate::sim::topology::Topology;
use crate::sim::trace::{SimulationTrace, TaskRecord};
use crate::worker::{Running, WorkerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep one text line per event. Counters and task records are kept
    /// either way.
    pub record_lines: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { record_lines: true }
    }
}

pub fn run(scenario: &Scenario) -> Result<SimulationTrace, SimError> {
    run_with(scenario, &RunOptions::default())
}

pub fn run_with(scenario: &Scenario, options: &RunOptions) -> Result<SimulationTrace, SimError> {
    Engine::new(scenario, options).run()
}

macro_rules! tr {
    ($e:expr, $kind:expr, $($arg:tt)*) => {
        if $e.record {
            let now = $e.now;
            let payload = format!($($arg)*);
            $e.trace.push(now, $kind, format_args!("{payload}"));
        }
    };
}

/// Where a worker is in its fetch/decide/offload loop.
#[derive(Debug)]
enum Placement {
    Idle,
    Status {
        task: Task,
        round: u64,
        awaiting: BTreeSet<WorkerId>,
        snaps: BTreeMap<WorkerId, StatusSnapshot>,
    },
    Handshake {
        task: Task,
        round: u64,
        hs: Handshake,
        snaps: BTreeMap<WorkerId, StatusSnapshot>,
        excluded: BTreeSet<WorkerId>,
    },
}

/// How one data point of a ring baseline is split and where each partition
/// goes.
#[derive(Clone, Debug)]
struct Route {
    plan: PartitionPlan,
    chain: Vec<WorkerId>,
}

#[derive(Debug)]
struct RingState {
    chain: RingChain,
    current: Option<(PartitionPlan, Vec<WorkerId>)>,
    since_adapt: u32,
}

struct Engine<'a> {
    sc: &'a Scenario,
    algorithm: Algorithm,
    record: bool,
    topo: Topology,
    workers: Vec<WorkerState>,
    placement: Vec<Placement>,
    round: Vec<u64>,
    epoch: Vec<u64>,
    timeout: Vec<SimTime>,
    link_free: Vec<SimTime>,
    events: EventQueue,
    now: SimTime,
    trace: SimulationTrace,
    admissions: Admissions,
    local_plans: Vec<PartitionPlan>,
    routes: HashMap<(SourceId, u32), Route>,
    rings: Vec<RingState>,
    measured: Vec<(f64, f64)>,
    created: BTreeMap<TaskKey, (SimTime, u32)>,
    done: BTreeMap<TaskKey, TaskRecord>,
    awaiting_output: HashMap<TaskKey, ((SimTime, u32), WorkerId)>,
    live: HashMap<TaskKey, u32>,
    computed: HashMap<TaskKey, u32>,
    results: Vec<u32>,
    held: Vec<Vec<(Message, WorkerId)>>,
    stalled: Vec<(Message, WorkerId, WorkerId)>,
    inflight: BTreeSet<(WorkerId, TaskKey)>,
    churn: Vec<ChurnStream>,
    jitter: Option<(ChaCha8Rng, f64)>,
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, options: &RunOptions) -> Self {
        let n = sc.topology.len();
        let discipline = match sc.algorithm {
            Algorithm::PaMdi => QueueDiscipline::Priority,
            Algorithm::ArMdi => QueueDiscipline::RoundRobin,
            Algorithm::MsMdi | Algorithm::Local => QueueDiscipline::Fifo,
        };
        let workers = (0..n as u32).map(|i| WorkerState::with_discipline(WorkerId(i), discipline)).collect();
        let timeout = (0..n as u32)
            .map(|i| {
                let t = rtc_timeout(
                    sc.topology.incident_links(WorkerId(i)),
                    sc.network.control_bytes,
                    sc.network.rtc_timeout_factor,
                );
                if t > 0.0 {
                    t
                } else {
                    1e-3
                }
            })
            .collect();
        let links = match sc.network.medium {
            Medium::PerLink => sc.topology.links().len().max(1),
            Medium::Shared => 1,
        };
        let local_plans = sc
            .sources
            .iter()
            .map(|s| {
                let m = sc.model_of(s.id);
                PartitionPlan::new(m.id.clone(), vec![Cut::new(1, m.num_layers())])
            })
            .collect();
        let rings = sc.rings.iter().map(|c| RingState { chain: c.clone(), current: None, since_adapt: 0 }).collect();
        let jitter = (sc.network.compute_jitter > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
            rng.set_stream(0);
            (rng, sc.network.compute_jitter)
        });
        let trace = SimulationTrace {
            scenario: sc.name.clone(),
            algorithm: sc.algorithm.to_string(),
            seed: sc.seed,
            ..Default::default()
        };
        Engine {
            sc,
            algorithm: sc.algorithm,
            record: options.record_lines,
            topo: sc.topology.clone(),
            workers,
            placement: (0..n).map(|_| Placement::Idle).collect(),
            round: vec![0; n],
            epoch: vec![0; n],
            timeout,
            link_free: vec![0.0; links],
            events: EventQueue::default(),
            now: 0.0,
            trace,
            admissions: Admissions::new(),
            local_plans,
            routes: HashMap::new(),
            rings,
            measured: vec![(0.0, 0.0); n],
            created: BTreeMap::new(),
            done: BTreeMap::new(),
            awaiting_output: HashMap::new(),
            live: HashMap::new(),
            computed: HashMap::new(),
            results: vec![0; sc.sources.len()],
            held: vec![Vec::new(); n],
            stalled: Vec::new(),
            inflight: BTreeSet::new(),
            churn: sc.churn.as_ref().map(|c| c.streams()).unwrap_or_default(),
            jitter,
        }
    }

    fn pa(&self) -> bool {
        self.algorithm == Algorithm::PaMdi
    }

    fn name(&self, w: WorkerId) -> &str {
        self.topo.name(w)
    }

    fn all_done(&self) -> bool {
        self.sc.sources.iter().all(|s| self.results[s.id.0 as usize] >= s.num_data_points)
    }

    fn run(mut self) -> Result<SimulationTrace, SimError> {
        for i in 0..self.churn.len() {
            self.schedule_churn(i);
        }
        let ids: Vec<SourceId> = self.sc.sources.iter().map(|s| s.id).collect();
        for m in ids {
            if self.pa() {
                let src = self.sc.source(m).clone();
                if let Some(d) = self.admissions.admit_first(&src) {
                    self.admit(m, d)?;
                }
            }
        }
        self.after_event()?;
        loop {
            if self.all_done() && self.events.pending_work() == 0 {
                break;
            }
            let Some(t) = self.events.peek_time() else {
                let remaining =
                    self.sc.sources.iter().map(|s| u64::from(s.num_data_points - self.results[s.id.0 as usize])).sum();
                return Err(SimError::Deadlock { time: self.now, remaining });
            };
            if t > self.sc.max_sim_time {
                self.trace.truncated = true;
                self.now = self.sc.max_sim_time;
                tr!(self, "truncated", "pending={}", self.events.pending_work());
                break;
            }
            let ev = self.events.pop().expect("peeked");
            self.now = ev.time;
            self.dispatch(ev.kind)?;
            self.after_event()?;
        }
        Ok(self.finish())
    }

    fn finish(mut self) -> SimulationTrace {
        if !self.trace.truncated {
            let lost = self.created.keys().filter(|k| !self.done.contains_key(k)).count();
            self.trace.stats.lost_tasks += lost as u64;
        }
        self.trace.tasks = std::mem::take(&mut self.done).into_values().collect();
        self.trace.end_time = self.now;
        self.trace
    }

    /// Starts whatever idle workers can start, then admits baseline data.
    fn after_event(&mut self) -> Result<(), SimError> {
        for i in 0..self.workers.len() {
            self.kick(WorkerId(i as u32))?;
        }
        if !self.pa() {
            for i in 0..self.sc.sources.len() {
                self.baseline_admit(SourceId(i as u32))?;
            }
            for i in 0..self.workers.len() {
                self.kick(WorkerId(i as u32))?;
            }
        }
        Ok(())
    }

    // ---------------------------------------------------------------- churn

    fn schedule_churn(&mut self, i: usize) {
        if let Some(ev) = self.churn[i].next() {
            let kind = if ev.leave {
                EventKind::ChurnLeave { worker: ev.worker }
            } else {
                EventKind::ChurnReturn { worker: ev.worker }
            };
            self.events.push(ev.time, kind);
        }
    }

    fn churn_index(&self, w: WorkerId) -> Option<usize> {
        self.churn.iter().position(|s| s.worker() == w)
    }

    fn leave(&mut self, w: WorkerId) -> Result<(), SimError> {
        if !self.topo.is_present(w) {
            return Ok(());
        }
        self.trace.stats.churn_events += 1;
        tr!(self, "leave", "{}", self.name(w));
        self.topo.set_present(w, false);
        self.epoch[w.0 as usize] += 1;
        let ws = &mut self.workers[w.0 as usize];
        ws.present = false;
        ws.rtc.clear();
        match std::mem::replace(&mut self.placement[w.0 as usize], Placement::Idle) {
            Placement::Idle => {}
            Placement::Status { task, .. } | Placement::Handshake { task, .. } => {
                tr!(self, "abort", "{} task={}", self.name(w), task.key);
                self.insert(w, task);
            }
        }
        if !self.pa() {
            // the ring routes around the departed worker at once
            let tasks = self.workers[w.0 as usize].queue.drain_where(|_| true);
            for t in tasks {
                self.take_out(t.key);
                let to = self.bypass_target(t.key.source, w);
                tr!(self, "bypass", "task={} {}->{}", t.key, self.name(w), self.name(to));
                self.insert(to, t);
            }
        }
        Ok(())
    }

    fn back(&mut self, w: WorkerId) -> Result<(), SimError> {
        if self.topo.is_present(w) {
            return Ok(());
        }
        self.trace.stats.churn_events += 1;
        tr!(self, "return", "{}", self.name(w));
        self.topo.set_present(w, true);
        self.workers[w.0 as usize].present = true;
        for (msg, dest) in std::mem::take(&mut self.held[w.0 as usize]) {
            self.forward(msg, w, dest);
        }
        for (msg, at, dest) in std::mem::take(&mut self.stalled) {
            self.forward(msg, at, dest);
        }
        Ok(())
    }

    // ------------------------------------------------------------- dispatch

    fn dispatch(&mut self, kind: EventKind) -> Result<(), SimError> {
        match kind {
            EventKind::MessageDelivery { msg, hop_from, hop_to, dest, epoch } => {
                self.deliver(msg, hop_from, hop_to, dest, epoch)
            }
            EventKind::ComputeComplete { worker } => self.compute_done(worker),
            EventKind::ChurnLeave { worker } => {
                if let Some(i) = self.churn_index(worker) {
                    self.schedule_churn(i);
                }
                self.leave(worker)
            }
            EventKind::ChurnReturn { worker } => {
                if let Some(i) = self.churn_index(worker) {
                    self.schedule_churn(i);
                }
                self.back(worker)
            }
            EventKind::StatusRefresh { worker, round } => {
                let stale = matches!(&self.placement[worker.0 as usize],
                    Placement::Status { round: r, .. } if *r == round);
                if stale {
                    tr!(self, "status-timeout", "{}", self.name(worker));
                    self.decide(worker, BTreeSet::new())?;
                }
                Ok(())
            }
            EventKind::RtcTimeout { worker, round } => {
                let target = match &self.placement[worker.0 as usize] {
                    Placement::Handshake { round: r, hs, .. } if *r == round => {
                        hs.on_timeout(self.now).map(|_| hs.target)
                    }
                    _ => None,
                };
                if let Some(target) = target {
                    self.trace.stats.rtc_timeouts += 1;
                    tr!(self, "rtc-timeout", "{} target={}", self.name(worker), self.name(target));
                    self.redecide(worker, target)?;
                }
                Ok(())
            }
            EventKind::GrantExpiry { worker, task } => {
                if self.inflight.contains(&(worker, task)) {
                    return Ok(());
                }
                let now = self.now;
                if crate::protocol::expire_grant(&mut self.workers[worker.0 as usize], task, now) {
                    tr!(self, "grant-expired", "{} task={}", self.name(worker), task);
                    self.grant_if_idle(worker);
                }
                Ok(())
            }
            EventKind::Bounce { msg, at, dest } => self.bounced(msg, at, dest),
        }
    }

    // ------------------------------------------------------------ messages

    fn originate(&mut self, msg: Message) {
        *self.trace.stats.messages.entry(msg.kind.name()).or_insert(0) += 1;
        tr!(self, "send", "{} from={}", msg.kind, self.name(msg.sender));
        match msg.recipient {
            crate::protocol::Recipient::Worker(d) => {
                let from = msg.sender;
                self.forward(msg, from, d);
            }
            crate::protocol::Recipient::Neighbors => {
                for n in self.topo.neighbors(msg.sender) {
                    self.forward(msg.clone(), msg.sender, n);
                }
            }
        }
    }

    /// Puts `msg` on the next link from `at` toward `dest`.
    fn forward(&mut self, msg: Message, at: WorkerId, dest: WorkerId) {
        let data = msg.kind.is_data();
        if !self.topo.is_present(at) {
            if data {
                tr!(self, "hold", "{} at={}", msg.kind, self.name(at));
                self.held[at.0 as usize].push((msg, dest));
            } else {
                tr!(self, "drop", "{} at={}", msg.kind, self.name(at));
            }
            return;
        }
        if at == dest {
            let epoch = self.epoch[at.0 as usize];
            self.events.push(self.now, EventKind::MessageDelivery { msg, hop_from: at, hop_to: at, dest, epoch });
            return;
        }
        let bytes = msg.kind.payload_bytes(self.sc.network.control_bytes);
        let hop = match shortest_path(&self.topo, at, dest, bytes) {
            Ok((_, hops)) => hops[0],
            Err(_) => {
                if !data {
                    tr!(self, "drop", "{} at={} no-route", msg.kind, self.name(at));
                } else if self.topo.is_present(dest) {
                    tr!(self, "stall", "{} at={}", msg.kind, self.name(at));
                    self.stalled.push((msg, at, dest));
                } else if self.pa() {
                    self.bounce(msg, at, dest);
                } else {
                    self.redirect(msg, dest);
                }
                return;
            }
        };
        let li = self.topo.link_between(at, hop).expect("route uses existing links");
        let link = *self.topo.link(li);
        let arrival = if data {
            let slot = match self.sc.network.medium {
                Medium::PerLink => li,
                Medium::Shared => 0,
            };
            let start = self.now.max(self.link_free[slot]);
            let ser = bytes as f64 / link.bandwidth_bytes_per_sec;
            self.link_free[slot] = start + ser;
            start + ser + link.propagation_delay_sec
        } else {
            self.now + transfer_delay(bytes, &link)
        };
        let epoch = self.epoch[hop.0 as usize];
        self.events.push(arrival, EventKind::MessageDelivery { msg, hop_from: at, hop_to: hop, dest, epoch });
    }

    fn bounce(&mut self, msg: Message, at: WorkerId, dest: WorkerId) {
        self.trace.stats.bounces += 1;
        let t = self.now + self.timeout[at.0 as usize];
        self.events.push(t, EventKind::Bounce { msg, at, dest });
    }

    /// Baseline shortcut: data meant for a departed worker goes straight to
    /// whoever replaces it.
    fn redirect(&mut self, msg: Message, dest: WorkerId) {
        let to = match &msg.kind {
            MessageKind::FeatureTransfer { task, .. } => self.bypass_target(task.key.source, dest),
            MessageKind::OutputReturn { task, .. } => self.sc.source(task.source).host,
            _ => return,
        };
        tr!(self, "bypass", "{} {}->{}", msg.kind, self.name(dest), self.name(to));
        let epoch = self.epoch[to.0 as usize];
        self.events.push(self.now, EventKind::MessageDelivery { msg, hop_from: to, hop_to: to, dest: to, epoch });
    }

    fn deliver(
        &mut self,
        msg: Message,
        hop_from: WorkerId,
        hop_to: WorkerId,
        dest: WorkerId,
        epoch: u64,
    ) -> Result<(), SimError> {
        let present = self.topo.is_present(hop_to);
        let gone = !present || epoch != self.epoch[hop_to.0 as usize];
        if gone && (self.pa() || !present) {
            if !msg.kind.is_data() {
                tr!(self, "drop", "{} at={} absent", msg.kind, self.name(hop_to));
            } else if self.pa() {
                tr!(self, "lost", "{} at={} absent", msg.kind, self.name(hop_to));
                self.bounce(msg, hop_from, dest);
            } else {
                self.redirect(msg, dest);
            }
            return Ok(());
        }
        if hop_to != dest {
            self.forward(msg, hop_to, dest);
            return Ok(());
        }
        tr!(self, "recv", "{} from={} at={}", msg.kind, self.name(msg.sender), self.name(dest));
        self.handle(dest, msg)
    }

    fn bounced(&mut self, msg: Message, at: WorkerId, dest: WorkerId) -> Result<(), SimError> {
        tr!(self, "bounce", "{} back-at={}", msg.kind, self.name(at));
        match msg.kind {
            MessageKind::FeatureTransfer { task, .. } if at == msg.sender => {
                self.inflight.remove(&(dest, task.key));
                self.insert(at, task);
            }
            _ => self.forward(msg, at, dest),
        }
        Ok(())
    }

    fn handle(&mut self, w: WorkerId, msg: Message) -> Result<(), SimError> {
        if let MessageKind::FeatureTransfer { task, .. } = &msg.kind {
            self.inflight.remove(&(w, task.key));
        }
        let sc = self.sc;
        let profile = self.topo.profile(w).clone();
        let q = backlog(&self.workers[w.0 as usize], &profile, self.now);
        let priority_of = |s: SourceId| sc.source(s).priority;
        let hosts_source = |s: SourceId| sc.source(s).host == w;
        let ctx = HandlerCtx {
            now: self.now,
            rtc_timeout: self.timeout[w.0 as usize],
            handshake: self.pa(),
            priority_of: &priority_of,
            hosts_source: &hosts_source,
        };
        let actions = handle_message(&mut self.workers[w.0 as usize], &profile, &msg, q, &ctx);
        for a in actions {
            self.apply(w, a)?;
        }
        Ok(())
    }

    fn apply(&mut self, w: WorkerId, action: Action) -> Result<(), SimError> {
        match action {
            Action::Send(m) => self.originate(m),
            Action::Inserted(key) => {
                self.put_in(key);
                tr!(self, "enqueue", "{} at={}", key, self.name(w));
            }
            Action::GrantIssued(g) => self.granted(w, g.to, g.task, g.expires_at),
            Action::StatusReceived(s) => {
                let ready = match &mut self.placement[w.0 as usize] {
                    Placement::Status { awaiting, snaps, .. } => {
                        if awaiting.remove(&s.worker) {
                            snaps.insert(s.worker, s);
                            awaiting.is_empty()
                        } else {
                            false
                        }
                    }
                    _ => false,
                };
                if ready {
                    self.decide(w, BTreeSet::new())?;
                }
            }
            Action::CtcHeard { from, granted, task } => {
                let outcome = match &self.placement[w.0 as usize] {
                    Placement::Handshake { hs, .. } => hs.on_ctc(from, granted, task),
                    _ => None,
                };
                match outcome {
                    Some(OffloadOutcome::Granted) => self.ship(w)?,
                    Some(OffloadOutcome::Denied) => {
                        self.trace.stats.denials += 1;
                        tr!(self, "denied", "{} by={}", self.name(w), self.name(from));
                        self.redecide(w, from)?;
                    }
                    _ => {}
                }
            }
            Action::OutputArrived(key) => {
                if let Some((created, by)) = self.awaiting_output.remove(&key) {
                    self.record_done(key, created, by);
                    self.result(key)?;
                } else {
                    self.trace.stats.duplicated_tasks += 1;
                    tr!(self, "protocol-error", "unexpected output {}", key);
                }
            }
            Action::ProtocolError(e) => {
                self.trace.stats.protocol_errors += 1;
                tr!(self, "protocol-error", "{}", e);
            }
        }
        Ok(())
    }

    fn granted(&mut self, w: WorkerId, to: WorkerId, task: TaskKey, expires_at: SimTime) {
        tr!(self, "grant", "{} to={} task={}", self.name(w), self.name(to), task);
        self.events.push(expires_at, EventKind::GrantExpiry { worker: w, task });
    }

    fn grant_if_idle(&mut self, w: WorkerId) {
        if !self.pa() {
            return;
        }
        let now = self.now;
        let t = self.timeout[w.0 as usize];
        let had = self.workers[w.0 as usize].rtc.granted.is_some();
        if let Some(ctc) = try_grant(&mut self.workers[w.0 as usize], now, t) {
            if had {
                self.trace.stats.double_grants += 1;
            }
            let g = self.workers[w.0 as usize].rtc.granted.clone().expect("just granted");
            self.originate(ctc);
            self.granted(w, g.to, g.task, g.expires_at);
        }
    }

    // ------------------------------------------------------- task tracking

    fn put_in(&mut self, key: TaskKey) {
        let n = self.live.entry(key).or_insert(0);
        if *n > 0 {
            self.trace.stats.duplicated_tasks += 1;
        }
        *n += 1;
    }

    fn take_out(&mut self, key: TaskKey) {
        if let Some(n) = self.live.get_mut(&key) {
            *n = n.saturating_sub(1);
        }
    }

    fn insert(&mut self, w: WorkerId, task: Task) {
        self.put_in(task.key);
        tr!(self, "enqueue", "{} at={}", task.key, self.name(w));
        let p = self.sc.source(task.key.source).priority;
        self.workers[w.0 as usize].queue.push(task, p);
    }

    fn create(&mut self, task: &Task) {
        if self.created.insert(task.key, (self.now, task.num_partitions)).is_some() {
            self.trace.stats.duplicated_tasks += 1;
        }
    }

    fn record_done(&mut self, key: TaskKey, created: (SimTime, u32), by: WorkerId) {
        let rec = TaskRecord {
            key,
            num_partitions: created.1,
            created_at: created.0,
            completed_at: self.now,
            processed_by: by,
        };
        if self.done.insert(key, rec).is_some() {
            self.trace.stats.duplicated_tasks += 1;
        }
    }

    fn plan(&self, source: SourceId, data: u32) -> &PartitionPlan {
        match self.algorithm {
            Algorithm::PaMdi => &self.sc.plans[source.0 as usize],
            Algorithm::Local => &self.local_plans[source.0 as usize],
            Algorithm::ArMdi | Algorithm::MsMdi => &self.routes[&(source, data)].plan,
        }
    }

    /// Worker holding any task of data point `d` of `m` at the source host.
    fn host_holds(&self, m: SourceId, d: u32) -> bool {
        let host = self.sc.source(m).host;
        let ws = &self.workers[host.0 as usize];
        let of_d = |k: &TaskKey| k.source == m && k.data == d;
        ws.queue.holds_data(m, d)
            || ws.running.as_ref().is_some_and(|r| of_d(&r.task.key))
            || match &self.placement[host.0 as usize] {
                Placement::Status { task, .. } | Placement::Handshake { task, .. } => of_d(&task.key),
                Placement::Idle => false,
            }
    }

    // ----------------------------------------------------------- admission

    fn admit(&mut self, m: SourceId, d: u32) -> Result<(), SimError> {
        let src = self.sc.source(m);
        let host = src.host;
        if matches!(self.algorithm, Algorithm::ArMdi | Algorithm::MsMdi) {
            let route = self.next_route(m);
            self.routes.insert((m, d), route);
        }
        let model = self.sc.model_of(m);
        let task = Task::from_plan(m, d, 1, self.plan(m, d), model, self.now)?;
        *self.trace.stats.admitted.entry(m.0).or_insert(0) += 1;
        tr!(self, "admit", "{} d={} at={}", self.sc.source(m).name, d, self.name(host));
        self.create(&task);
        self.insert(host, task);
        Ok(())
    }

    fn admit_after(&mut self, m: SourceId, d: u32, trigger: AdmitTrigger) -> Result<(), SimError> {
        let src = self.sc.source(m).clone();
        if let Some(next) = self.admissions.admit_next(&src, d, trigger) {
            self.admit(m, next)?;
        }
        Ok(())
    }

    fn window(&self, m: SourceId) -> u32 {
        match self.algorithm {
            Algorithm::Local | Algorithm::PaMdi => 1,
            Algorithm::ArMdi | Algorithm::MsMdi => {
                self.sc.baselines.window.unwrap_or(self.sc.rings[m.0 as usize].order.len() as u32)
            }
        }
    }

    fn baseline_admit(&mut self, m: SourceId) -> Result<(), SimError> {
        let src = self.sc.source(m).clone();
        let admitted = self.admissions.admitted(m);
        if admitted >= src.num_data_points || admitted - self.results[m.0 as usize] >= self.window(m) {
            return Ok(());
        }
        let ws = &self.workers[src.host.0 as usize];
        let first = |t: &Task| t.key.source == m && t.key.partition == 1;
        if ws.queue.iter().any(first) || ws.running.as_ref().is_some_and(|r| first(&r.task)) {
            return Ok(());
        }
        if let Some(d) = self.admissions.admit_next(&src, admitted, AdmitTrigger::Completed) {
            self.admit(m, d)?;
        }
        Ok(())
    }

    fn next_route(&mut self, m: SourceId) -> Route {
        let variant = if self.algorithm == Algorithm::ArMdi { RingVariant::Adaptive } else { RingVariant::Uniform };
        let every = self.sc.baselines.adapt_every;
        let topo = &self.topo;
        let present = self.rings[m.0 as usize].chain.present(|w| topo.is_present(w));
        let measured = &self.measured;
        let nominal = |w: WorkerId| topo.profile(w).seconds_per_flop;
        let ring = &mut self.rings[m.0 as usize];
        let stale = match &ring.current {
            None => true,
            Some((_, chain)) => *chain != present || (variant == RingVariant::Adaptive && ring.since_adapt >= every),
        };
        if stale {
            let model = self.sc.model_of(m);
            let plan = ring_plan(model, &present, variant, |w| {
                let (flops, secs) = measured[w.0 as usize];
                if flops > 0.0 {
                    secs / flops
                } else {
                    nominal(w)
                }
            });
            ring.current = Some((plan, present));
            ring.since_adapt = 0;
        }
        ring.since_adapt += 1;
        let (plan, chain) = ring.current.clone().expect("set above");
        let parts = plan.num_partitions() as usize;
        Route { plan, chain: chain[..parts].to_vec() }
    }

    /// Present worker that takes over `w`'s share of `source`'s ring.
    fn bypass_target(&self, source: SourceId, w: WorkerId) -> WorkerId {
        let topo = &self.topo;
        let ring = &self.rings[source.0 as usize].chain;
        if ring.order.contains(&w) {
            ring.successor(w, |x| topo.is_present(x))
        } else {
            self.sc.source(source).host
        }
    }

    // ---------------------------------------------------------- the loop

    fn kick(&mut self, w: WorkerId) -> Result<(), SimError> {
        let i = w.0 as usize;
        if self.workers[i].is_computing() || !matches!(self.placement[i], Placement::Idle) {
            return Ok(());
        }
        let Some(task) = self.workers[i].queue.pop_next(self.now) else {
            return Ok(());
        };
        self.take_out(task.key);
        tr!(self, "fetch", "{} task={}", self.name(w), task.key);
        if !self.pa() {
            self.start_compute(w, task);
            return Ok(());
        }
        let neighbors = self.topo.neighbors(w);
        if neighbors.is_empty() {
            self.start_compute(w, task);
            return Ok(());
        }
        self.round[i] += 1;
        let round = self.round[i];
        for &n in &neighbors {
            self.originate(Message::to(w, n, MessageKind::StatusRequest, self.now));
        }
        self.placement[i] =
            Placement::Status { task, round, awaiting: neighbors.into_iter().collect(), snaps: BTreeMap::new() };
        self.events.push(self.now + self.timeout[i], EventKind::StatusRefresh { worker: w, round });
        Ok(())
    }

    fn redecide(&mut self, w: WorkerId, exclude: WorkerId) -> Result<(), SimError> {
        let excluded = match &mut self.placement[w.0 as usize] {
            Placement::Handshake { excluded, .. } => {
                excluded.insert(exclude);
                std::mem::take(excluded)
            }
            _ => return Ok(()),
        };
        self.decide(w, excluded)
    }

    /// Scores every candidate not in `excluded` and either starts the task
    /// locally or opens a handshake with the best neighbor.
    fn decide(&mut self, w: WorkerId, excluded: BTreeSet<WorkerId>) -> Result<(), SimError> {
        let i = w.0 as usize;
        let (task, snaps) = match std::mem::replace(&mut self.placement[i], Placement::Idle) {
            Placement::Status { task, snaps, .. } | Placement::Handshake { task, snaps, .. } => (task, snaps),
            Placement::Idle => return Ok(()),
        };
        let profile = self.topo.profile(w);
        let mut cands = vec![Candidate {
            worker: w,
            delay: 0.0,
            seconds_per_flop: profile.seconds_per_flop,
            backlog: backlog(&self.workers[i], profile, self.now),
        }];
        let neighbors = self.topo.neighbors(w);
        for (j, s) in &snaps {
            if excluded.contains(j) || !neighbors.contains(j) {
                continue;
            }
            if let Ok(d) = path_delay(&self.topo, w, *j, task.input_bytes) {
                cands.push(Candidate::from_snapshot(s, d));
            }
        }
        let weight = self.sc.source(task.key.source).weight();
        let decision = decide_offload(&task, weight, &cands, self.now).expect("self is always a candidate");
        tr!(
            self,
            "decide",
            "{} task={} chosen={} score={:.9} candidates={}",
            self.name(w),
            task.key,
            self.name(decision.chosen),
            decision.score,
            cands.len()
        );
        if decision.chosen == w {
            self.start_compute(w, task);
            return Ok(());
        }
        self.round[i] += 1;
        let round = self.round[i];
        let (hs, rtc) = Handshake::start(w, decision.chosen, &task, self.now, self.timeout[i]);
        self.originate(rtc);
        self.events.push(hs.deadline, EventKind::RtcTimeout { worker: w, round });
        self.placement[i] = Placement::Handshake { task, round, hs, snaps, excluded };
        Ok(())
    }

    /// The target cleared us: send the feature vector.
    fn ship(&mut self, w: WorkerId) -> Result<(), SimError> {
        let (task, target) = match std::mem::replace(&mut self.placement[w.0 as usize], Placement::Idle) {
            Placement::Handshake { task, hs, .. } => (task, hs.target),
            other => {
                self.placement[w.0 as usize] = other;
                return Ok(());
            }
        };
        self.trace.stats.offloads += 1;
        let key = task.key;
        let bytes = task.input_bytes;
        self.inflight.insert((target, key));
        self.originate(Message::to(w, target, MessageKind::FeatureTransfer { task, bytes }, self.now));
        let src = self.sc.source(key.source);
        if src.host == w && !self.host_holds(key.source, key.data) {
            self.admit_after(key.source, key.data, AdmitTrigger::Offloaded)?;
        }
        Ok(())
    }

    fn start_compute(&mut self, w: WorkerId, task: Task) {
        let spf = self.topo.profile(w).seconds_per_flop;
        let factor = match &mut self.jitter {
            Some((rng, j)) => 1.0 + *j * rng.random_range(-1.0..=1.0),
            None => 1.0,
        };
        let dur = task.flops * spf * factor;
        tr!(self, "compute-start", "{} task={} duration={:.9}", self.name(w), task.key, dur);
        let finish_at = self.now + dur;
        self.workers[w.0 as usize].running = Some(Running { task, started_at: self.now, finish_at });
        self.events.push(finish_at, EventKind::ComputeComplete { worker: w });
    }

    fn compute_done(&mut self, w: WorkerId) -> Result<(), SimError> {
        let Some(run) = self.workers[w.0 as usize].running.take() else {
            return Ok(());
        };
        let task = run.task;
        let key = task.key;
        let m = &mut self.measured[w.0 as usize];
        m.0 += task.flops;
        m.1 += self.now - run.started_at;
        let c = self.computed.entry(key).or_insert(0);
        *c += 1;
        if *c > 1 {
            self.trace.stats.duplicated_tasks += 1;
        }
        tr!(self, "compute-done", "{} task={}", self.name(w), key);
        let created = self.created.get(&key).copied().unwrap_or((task.created_at, task.num_partitions));
        let src = self.sc.source(key.source).clone();
        let model = self.sc.model_of(key.source);
        let action = on_task_done(&task, w, &src, self.plan(key.source, key.data), model, self.now)?;
        match action {
            DoneAction::Continue(next) => {
                self.record_done(key, created, w);
                self.create(&next);
                if self.pa() || self.algorithm == Algorithm::Local {
                    self.insert(w, next);
                } else {
                    self.pass_along(w, next);
                }
            }
            DoneAction::Finished => {
                self.record_done(key, created, w);
                self.result(key)?;
            }
            DoneAction::ReturnOutput { to, bytes } => {
                self.awaiting_output.insert(key, (created, w));
                let msg = Message::to(w, to, MessageKind::OutputReturn { task: key, bytes }, self.now);
                if !self.pa() && !self.topo.is_present(w) {
                    *self.trace.stats.messages.entry(msg.kind.name()).or_insert(0) += 1;
                    self.redirect(msg, to);
                } else {
                    self.originate(msg);
                }
            }
        }
        self.grant_if_idle(w);
        Ok(())
    }

    /// Ring baselines: hand the next partition to its assigned worker.
    fn pass_along(&mut self, w: WorkerId, next: Task) {
        let route = &self.routes[&(next.key.source, next.key.data)];
        let mut to = route.chain[next.key.partition as usize - 1];
        if !self.topo.is_present(to) {
            to = self.bypass_target(next.key.source, to);
        }
        if to == w {
            self.insert(w, next);
            return;
        }
        let bytes = next.input_bytes;
        let msg = Message::to(w, to, MessageKind::FeatureTransfer { task: next, bytes }, self.now);
        if self.topo.is_present(w) {
            self.originate(msg);
        } else {
            *self.trace.stats.messages.entry(msg.kind.name()).or_insert(0) += 1;
            self.redirect(msg, to);
        }
    }

    fn result(&mut self, key: TaskKey) -> Result<(), SimError> {
        let m = key.source;
        self.results[m.0 as usize] += 1;
        *self.trace.stats.results.entry(m.0).or_insert(0) += 1;
        tr!(self, "result", "{} d={}", self.sc.source(m).name, key.data);
        if self.pa() {
            self.admit_after(m, key.data, AdmitTrigger::Completed)?;
        }
        Ok(())
    }
}
