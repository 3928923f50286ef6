//! Deterministic discrete-event simulation of clients and servers
//! exchanging messages over reliable asynchronous channels.
//!
//! Time is an integer tick. Server handlers run instantly. Events due at
//! the same tick are processed deliveries first, then timers, then new
//! client requests, each group ordered by identifier, so a run is a pure
//! function of (protocol, world, workload, schedule, config).

mod log;
mod paired;
mod schedule;

pub use log::{MessageLog, MessageRecord};
pub use paired::{paired_run, PairedRun, ServerDiff, StateDiff};
pub use schedule::{Action, MessageMatch, Override, Schedule};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{
    ClientId, EventKind, History, ObjectId, OpEvent, Tick, Transaction, TxnId, ValueId,
};
use crate::protocol::{
    ClientNode, Ctx, NodeEnv, Payload, Placement, ProcessId, Protocol, ServerNode, TxnOutcome,
};
use schedule::{Dispatcher, Fate};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("message {message} held under token {token:?} is never released")]
    UnreleasedHold { token: String, message: u64 },
    #[error("protocol {protocol} needs clock access, which this world does not grant")]
    ClockAccessDenied { protocol: String },
    #[error("API violation by {process}: {detail}")]
    ApiViolation { process: ProcessId, detail: String },
    #[error("protocol {protocol} cannot run transaction {txn}")]
    ShapeMismatch { protocol: String, txn: TxnId },
    #[error("object {0} has no server")]
    Unplaced(ObjectId),
    #[error("two runs of the same inputs diverged: {0}")]
    NondeterminismDetected(String),
    #[error("probe transaction {0} did not complete")]
    ProbeIncomplete(TxnId),
}

/// Static system configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct World {
    pub servers: u32,
    pub placement: Placement,
    /// Whether bindings that read the global clock may run.
    pub allow_clock: bool,
    /// Bound on message delay handed to protocols. Defaults to the
    /// schedule's maximum delay.
    pub delay_bound: Option<Tick>,
}

impl World {
    pub fn new(servers: u32, objects: usize) -> Self {
        Self {
            servers,
            placement: Placement::round_robin(objects, servers),
            allow_clock: true,
            delay_bound: None,
        }
    }

    pub fn with_placement(servers: u32, placement: Placement) -> Self {
        Self {
            servers,
            placement,
            allow_clock: true,
            delay_bound: None,
        }
    }
}

/// One transaction a client will issue. The client starts it at
/// `max(not_before, previous end + 1 + think)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub not_before: Tick,
    pub think: Tick,
    pub txn: Transaction,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub clients: BTreeMap<ClientId, Vec<Request>>,
    /// Transactions issued once the system is quiescent: no message in
    /// flight, no pending request.
    #[serde(default)]
    pub after_quiescence: Vec<Transaction>,
}

impl Workload {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, txn: Transaction, not_before: Tick, think: Tick) -> &mut Self {
        self.clients.entry(txn.client).or_default().push(Request {
            not_before,
            think,
            txn,
        });
        self
    }

    pub fn probe(&mut self, txn: Transaction) -> &mut Self {
        self.after_quiescence.push(txn);
        self
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.clients
            .values()
            .flatten()
            .map(|r| &r.txn)
            .chain(self.after_quiescence.iter())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: Tick,
    #[serde(default)]
    pub snapshot_at: Vec<Tick>,
}

impl RunConfig {
    pub fn until(horizon: Tick) -> Self {
        Self {
            horizon,
            snapshot_at: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibilityEvent {
    pub tick: Tick,
    pub server: u32,
    pub object: ObjectId,
    pub value: ValueId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// State after every event at or before this tick.
    pub tick: Tick,
    pub servers: Vec<serde_json::Value>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub history: History,
    pub log: MessageLog,
    pub visibility: Vec<VisibilityEvent>,
    /// Requested snapshots followed by the final state.
    pub snapshots: Vec<Snapshot>,
    /// Tick at which the system first became quiescent.
    pub quiescence: Option<Tick>,
    /// Messages still undelivered when the horizon was reached.
    pub in_flight: usize,
    /// Transactions started but not finished by the horizon. Their events
    /// are left out of `history`.
    pub incomplete: Vec<TxnId>,
    pub last_tick: Tick,
}

impl RunOutput {
    pub fn final_state(&self) -> &Snapshot {
        self.snapshots
            .last()
            .expect("a final snapshot is always taken")
    }

    pub fn snapshot_at(&self, tick: Tick) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.tick == tick)
    }

    /// First tick at which `value` of `object` became visible anywhere.
    pub fn visible_at(&self, object: &ObjectId, value: ValueId) -> Option<Tick> {
        self.visibility
            .iter()
            .find(|v| &v.object == object && v.value == value)
            .map(|v| v.tick)
    }

    /// End tick of a finished transaction.
    pub fn end_of(&self, txn: TxnId) -> Option<Tick> {
        self.history
            .events
            .iter()
            .find(|e| e.txn == txn && e.kind == EventKind::TxnEnd)
            .map(|e| e.time)
    }
}

struct ClientSlot {
    node: Box<dyn ClientNode>,
    pending: VecDeque<Request>,
    current: Option<(Transaction, Tick)>,
    last_end: Tick,
    scheduled: bool,
}

const CLASS_DELIVER: u8 = 0;
const CLASS_TIMER: u8 = 1;
const CLASS_REQUEST: u8 = 2;

/// Runs one simulation.
pub fn run(
    protocol: &dyn Protocol,
    world: &World,
    workload: &Workload,
    schedule: &Schedule,
    config: &RunConfig,
) -> Result<RunOutput, SimError> {
    Sim::new(protocol, world, workload, schedule, config)?.run()
}

/// Runs twice and fails if the two runs differ in any observable way.
pub fn run_checked(
    protocol: &dyn Protocol,
    world: &World,
    workload: &Workload,
    schedule: &Schedule,
    config: &RunConfig,
) -> Result<RunOutput, SimError> {
    let a = run(protocol, world, workload, schedule, config)?;
    let b = run(protocol, world, workload, schedule, config)?;
    if a.history != b.history {
        return Err(SimError::NondeterminismDetected("histories differ".into()));
    }
    if a.log != b.log {
        return Err(SimError::NondeterminismDetected(
            "message logs differ".into(),
        ));
    }
    if a.snapshots != b.snapshots {
        return Err(SimError::NondeterminismDetected(
            "server states differ".into(),
        ));
    }
    Ok(a)
}

struct Sim<'a> {
    protocol: &'a dyn Protocol,
    world: &'a World,
    config: &'a RunConfig,
    env: NodeEnv,
    dispatcher: Dispatcher,
    queue: BinaryHeap<Reverse<(Tick, u8, u64)>>,
    messages: BTreeMap<u64, (ProcessId, ProcessId, Payload)>,
    held: Vec<(u64, String)>,
    timers: BTreeMap<u64, (ProcessId, u64)>,
    next_timer: u64,
    servers: Vec<Box<dyn ServerNode>>,
    clients: BTreeMap<ClientId, ClientSlot>,
    probes: Vec<Transaction>,
    events: Vec<OpEvent>,
    log: Vec<MessageRecord>,
    visibility: Vec<VisibilityEvent>,
    snapshots: Vec<Snapshot>,
    snapshot_due: VecDeque<Tick>,
    quiescence: Option<Tick>,
    now: Tick,
    cause: Option<u64>,
}

impl<'a> Sim<'a> {
    fn new(
        protocol: &'a dyn Protocol,
        world: &'a World,
        workload: &Workload,
        schedule: &Schedule,
        config: &'a RunConfig,
    ) -> Result<Self, SimError> {
        if protocol.clock_access() && !world.allow_clock {
            return Err(SimError::ClockAccessDenied {
                protocol: protocol.name().to_string(),
            });
        }
        for txn in workload.transactions() {
            if !protocol.accepts(txn) {
                return Err(SimError::ShapeMismatch {
                    protocol: protocol.name().to_string(),
                    txn: txn.id,
                });
            }
            for o in txn.objects() {
                if world.placement.server_of(o).is_none() {
                    return Err(SimError::Unplaced(o.clone()));
                }
            }
        }
        let env = NodeEnv {
            placement: Arc::new(world.placement.clone()),
            delay_bound: world.delay_bound.unwrap_or(schedule.delay_max),
        };
        let servers = (0..world.servers)
            .map(|s| protocol.server(s, &env))
            .collect();
        let mut snapshot_due: Vec<Tick> = config.snapshot_at.clone();
        snapshot_due.sort_unstable();
        snapshot_due.dedup();
        let mut sim = Self {
            protocol,
            world,
            config,
            env,
            dispatcher: Dispatcher::new(schedule.clone()),
            queue: BinaryHeap::new(),
            messages: BTreeMap::new(),
            held: Vec::new(),
            timers: BTreeMap::new(),
            next_timer: 0,
            servers,
            clients: BTreeMap::new(),
            probes: workload.after_quiescence.clone(),
            events: Vec::new(),
            log: Vec::new(),
            visibility: Vec::new(),
            snapshots: Vec::new(),
            snapshot_due: snapshot_due.into(),
            quiescence: None,
            now: 0,
            cause: None,
        };
        for (&c, reqs) in &workload.clients {
            sim.slot(c).pending.extend(reqs.iter().cloned());
            sim.schedule_next(c);
        }
        Ok(sim)
    }

    fn slot(&mut self, c: ClientId) -> &mut ClientSlot {
        let (protocol, env) = (self.protocol, &self.env);
        self.clients.entry(c).or_insert_with(|| ClientSlot {
            node: protocol.client(c, env),
            pending: VecDeque::new(),
            current: None,
            last_end: 0,
            scheduled: false,
        })
    }

    fn schedule_next(&mut self, c: ClientId) {
        let slot = self.slot(c);
        if slot.current.is_some() || slot.scheduled {
            return;
        }
        let Some(req) = slot.pending.front() else {
            return;
        };
        let base = if slot.last_end == 0 && slot.current.is_none() {
            0
        } else {
            slot.last_end + 1
        };
        let at = req.not_before.max(base + req.think);
        slot.scheduled = true;
        self.queue.push(Reverse((at, CLASS_REQUEST, u64::from(c))));
    }

    fn all_idle(&self) -> bool {
        self.clients
            .values()
            .all(|s| s.current.is_none() && s.pending.is_empty())
    }

    fn take_snapshots_before(&mut self, t: Tick) {
        while let Some(&s) = self.snapshot_due.front() {
            if s >= t {
                break;
            }
            self.snapshot_due.pop_front();
            self.snapshot(s);
        }
    }

    fn snapshot(&mut self, tick: Tick) {
        let servers = self.servers.iter().map(|s| s.snapshot()).collect();
        self.snapshots.push(Snapshot { tick, servers });
    }

    fn run(mut self) -> Result<RunOutput, SimError> {
        loop {
            let Some(&Reverse((t, class, id))) = self.queue.peek() else {
                if self.quiescence.is_none() && self.held.is_empty() && self.all_idle() {
                    self.quiescence = Some(self.now);
                    if !self.probes.is_empty() {
                        for txn in std::mem::take(&mut self.probes) {
                            let c = txn.client;
                            let not_before = self.now + 1;
                            self.slot(c).pending.push_back(Request {
                                not_before,
                                think: 0,
                                txn,
                            });
                            self.schedule_next(c);
                        }
                        continue;
                    }
                }
                break;
            };
            if t > self.config.horizon {
                break;
            }
            self.queue.pop();
            self.take_snapshots_before(t);
            self.now = t;
            self.cause = (class == CLASS_DELIVER).then_some(id);
            match class {
                CLASS_DELIVER => self.deliver(id)?,
                CLASS_TIMER => self.fire_timer(id)?,
                _ => self.issue(id as ClientId)?,
            }
        }
        if let Some((message, token)) = self.held.first() {
            return Err(SimError::UnreleasedHold {
                token: token.clone(),
                message: *message,
            });
        }
        let horizon = self.config.horizon;
        let end = self.now;
        self.take_snapshots_before(horizon + 1);
        self.snapshot(end.max(self.snapshots.last().map_or(0, |s| s.tick)));
        let in_flight = self
            .queue
            .iter()
            .filter(|Reverse((_, class, _))| *class == CLASS_DELIVER)
            .count();
        let incomplete: Vec<TxnId> = self
            .clients
            .values()
            .filter_map(|s| s.current.as_ref().map(|(t, _)| t.id))
            .collect();
        let events = self
            .events
            .into_iter()
            .filter(|e| !incomplete.contains(&e.txn))
            .collect();
        Ok(RunOutput {
            history: History::from_events(events),
            log: MessageLog { records: self.log },
            visibility: self.visibility,
            snapshots: self.snapshots,
            quiescence: self.quiescence,
            in_flight,
            incomplete,
            last_tick: end,
        })
    }

    fn issue(&mut self, c: ClientId) -> Result<(), SimError> {
        let now = self.now;
        let clock = self.protocol.clock_access();
        let slot = self.slot(c);
        slot.scheduled = false;
        let req = slot.pending.pop_front().expect("scheduled request exists");
        slot.current = Some((req.txn.clone(), now));
        self.events.push(OpEvent {
            time: now,
            client: c,
            txn: req.txn.id,
            kind: EventKind::TxnStart,
        });
        let mut ctx = Ctx::new(ProcessId::Client(c), now, clock);
        self.slot(c).node.on_request(&mut ctx, &req.txn);
        self.apply(ProcessId::Client(c), ctx)
    }

    fn deliver(&mut self, id: u64) -> Result<(), SimError> {
        let (src, dst, msg) = self.messages.remove(&id).expect("queued message exists");
        let mut ctx = Ctx::new(dst, self.now, self.protocol.clock_access());
        match dst {
            ProcessId::Client(c) => self.slot(c).node.on_message(&mut ctx, src, msg),
            ProcessId::Server(s) => self.servers[s as usize].on_message(&mut ctx, src, msg),
        }
        self.apply(dst, ctx)
    }

    fn fire_timer(&mut self, id: u64) -> Result<(), SimError> {
        let (owner, token) = self.timers.remove(&id).expect("queued timer exists");
        let mut ctx = Ctx::new(owner, self.now, self.protocol.clock_access());
        match owner {
            ProcessId::Client(c) => self.slot(c).node.on_timer(&mut ctx, token),
            ProcessId::Server(s) => self.servers[s as usize].on_timer(&mut ctx, token),
        }
        self.apply(owner, ctx)
    }

    fn violation(process: ProcessId, detail: impl Into<String>) -> SimError {
        SimError::ApiViolation {
            process,
            detail: detail.into(),
        }
    }

    fn apply(&mut self, me: ProcessId, ctx: Ctx) -> Result<(), SimError> {
        if ctx.clock_denied {
            return Err(SimError::ClockAccessDenied {
                protocol: self.protocol.name().to_string(),
            });
        }
        let now = self.now;
        for (at, token) in ctx.timers {
            if at <= now {
                return Err(Self::violation(me, "timer set in the past"));
            }
            let id = self.next_timer;
            self.next_timer += 1;
            self.timers.insert(id, (me, token));
            self.queue.push(Reverse((at, CLASS_TIMER, id)));
        }
        for (object, value) in ctx.visible {
            let ProcessId::Server(server) = me else {
                return Err(Self::violation(me, "clients cannot make values visible"));
            };
            self.visibility.push(VisibilityEvent {
                tick: now,
                server,
                object,
                value,
            });
        }
        for (dst, msg) in ctx.outbox {
            self.send(me, dst, msg)?;
        }
        if let Some(outcome) = ctx.completed {
            let ProcessId::Client(c) = me else {
                return Err(Self::violation(me, "servers cannot complete transactions"));
            };
            self.complete(c, outcome)?;
        }
        Ok(())
    }

    fn send(&mut self, src: ProcessId, dst: ProcessId, msg: Payload) -> Result<(), SimError> {
        match (src, dst) {
            (ProcessId::Client(_), ProcessId::Client(_)) => {
                return Err(Self::violation(src, "clients cannot message clients"))
            }
            (_, ProcessId::Server(s)) if s >= self.world.servers => {
                return Err(Self::violation(src, format!("no server {s}")))
            }
            _ => {}
        }
        let id = self.log.len() as u64;
        let fate = self.dispatcher.dispatch(src, dst, self.now, &msg);
        let deliver_at = match fate {
            Fate::At(t) => {
                self.queue.push(Reverse((t, CLASS_DELIVER, id)));
                Some(t)
            }
            Fate::Held(token) => {
                self.held.push((id, token));
                None
            }
        };
        let values = if dst.is_client() {
            msg.revealed_values()
        } else {
            None
        };
        self.log.push(MessageRecord {
            id,
            src,
            dst,
            sent_at: self.now,
            deliver_at,
            payload_kind: msg.kind().to_string(),
            txn: msg.txn(),
            values,
            cause: self.cause,
            payload: Some(msg.clone()),
        });
        self.messages.insert(id, (src, dst, msg));
        Ok(())
    }

    fn complete(&mut self, c: ClientId, outcome: TxnOutcome) -> Result<(), SimError> {
        let now = self.now;
        let me = ProcessId::Client(c);
        let slot = self.slot(c);
        let Some((txn, _start)) = slot.current.take() else {
            return Err(Self::violation(
                me,
                "completion without a running transaction",
            ));
        };
        if !outcome.reads.keys().eq(txn.reads.iter()) {
            return Err(Self::violation(
                me,
                format!("{} must return exactly one value per read object", txn.id),
            ));
        }
        if !outcome.writes.iter().eq(txn.writes.keys()) {
            return Err(Self::violation(
                me,
                format!("{} must acknowledge exactly its writes", txn.id),
            ));
        }
        slot.last_end = now + 1;
        for (object, value) in outcome.reads {
            self.events.push(OpEvent {
                time: now,
                client: c,
                txn: txn.id,
                kind: EventKind::ReadReturn { object, value },
            });
        }
        for (object, value) in txn.writes {
            self.events.push(OpEvent {
                time: now,
                client: c,
                txn: txn.id,
                kind: EventKind::WriteAck { object, value },
            });
        }
        self.events.push(OpEvent {
            time: now + 1,
            client: c,
            txn: txn.id,
            kind: EventKind::TxnEnd,
        });
        self.schedule_next(c);
        Ok(())
    }
}
