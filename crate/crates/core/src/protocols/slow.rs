//! Two-phase-commit writes with Lamport stamps, and read-only transactions
//! that fetch the newest visible versions and then, in a second round, the
//! exact versions named by the dependencies of what came back.
//!
//! The same machinery without the second round (and optionally with
//! server-to-server helping before visibility) backs the fast generic
//! baseline.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::common::{DepContext, ReadVersion, Stamp, VersionRecord, VersionStore, Wants};
use super::fast_generic::HelpDepth;
use crate::history::{ClientId, ObjectId, Transaction, TxnId};
use crate::protocol::{
    AckPhase, ClientNode, Ctx, NodeEnv, Payload, Placement, ProcessId, Protocol, ServerNode, Shape,
    TxnOutcome,
};

pub struct SlowTwoRound;

impl Protocol for SlowTwoRound {
    fn name(&self) -> &str {
        "slow-2round"
    }

    fn shape(&self) -> Shape {
        Shape::Generic
    }

    fn fast_rots(&self) -> bool {
        false
    }

    fn client(&self, id: ClientId, env: &NodeEnv) -> Box<dyn ClientNode> {
        Box::new(TwoPhaseClient::new(id, env, true))
    }

    fn server(&self, index: u32, env: &NodeEnv) -> Box<dyn ServerNode> {
        Box::new(TwoPhaseServer::new(index, env, HelpDepth::None))
    }
}

enum Phase {
    Read1,
    Read2,
    Prepare { max_time: u64 },
    Commit,
}

struct Running {
    txn: Transaction,
    phase: Phase,
    waiting: BTreeSet<u32>,
    versions: BTreeMap<ObjectId, ReadVersion>,
}

pub(crate) struct TwoPhaseClient {
    id: ClientId,
    placement: Placement,
    second_round: bool,
    ctx: DepContext,
    clock: u64,
    running: Option<Running>,
}

impl TwoPhaseClient {
    pub(crate) fn new(id: ClientId, env: &NodeEnv, second_round: bool) -> Self {
        Self {
            id,
            placement: env.placement.as_ref().clone(),
            second_round,
            ctx: DepContext::new(),
            clock: 0,
            running: None,
        }
    }

    fn start_reads(&self, ctx: &mut Ctx, run: &mut Running) {
        run.phase = Phase::Read1;
        for (server, objects) in self.placement.group(&run.txn.reads) {
            run.waiting.insert(server);
            ctx.send(
                ProcessId::Server(server),
                Payload::RotReq {
                    txn: run.txn.id,
                    objects,
                    clock: self.clock,
                },
            );
        }
    }

    fn start_second_round(&self, ctx: &mut Ctx, run: &mut Running) {
        run.phase = Phase::Read2;
        let mut target: BTreeMap<ObjectId, Stamp> = BTreeMap::new();
        for o in &run.txn.reads {
            let mut t = self.ctx.get(o).max(run.versions[o].stamp);
            for v in run.versions.values() {
                t = t.max(v.deps.get(o));
            }
            target.insert(o.clone(), t);
        }
        for (server, objects) in self.placement.group(&run.txn.reads) {
            run.waiting.insert(server);
            let wants = objects
                .into_iter()
                .map(|o| (o.clone(), target[&o]))
                .collect();
            ctx.send(
                ProcessId::Server(server),
                Payload::RotReq2 {
                    txn: run.txn.id,
                    wants,
                },
            );
        }
    }

    fn absorb_reads(&mut self, run: &Running) {
        for v in run.versions.values() {
            self.ctx.bump(&v.object, v.stamp);
            self.ctx.merge(&v.deps);
            self.clock = self.clock.max(v.stamp.time).max(v.deps.max_time());
        }
    }

    fn start_writes(&self, ctx: &mut Ctx, run: &mut Running) {
        run.phase = Phase::Prepare { max_time: 0 };
        let groups = self.placement.group(run.txn.writes.keys());
        let participants: Vec<u32> = groups.keys().copied().collect();
        let siblings: Vec<ObjectId> = run.txn.writes.keys().cloned().collect();
        for (server, objects) in groups {
            run.waiting.insert(server);
            let writes = objects
                .into_iter()
                .map(|o| {
                    let v = run.txn.writes[&o];
                    (o, v)
                })
                .collect();
            ctx.send(
                ProcessId::Server(server),
                Payload::WritePrepare {
                    txn: run.txn.id,
                    writes,
                    deps: self.ctx.clone(),
                    siblings: siblings.clone(),
                    participants: participants.clone(),
                    clock: self.clock,
                },
            );
        }
    }

    fn finish(&mut self, ctx: &mut Ctx, run: Running) {
        ctx.complete(TxnOutcome {
            reads: run
                .versions
                .iter()
                .map(|(o, v)| (o.clone(), v.value))
                .collect(),
            writes: run.txn.writes.keys().cloned().collect(),
        });
    }

    /// Moves to the next phase once every server of the current one replied.
    fn advance(&mut self, ctx: &mut Ctx, mut run: Running) {
        match run.phase {
            Phase::Read1 if self.second_round => {
                self.start_second_round(ctx, &mut run);
                self.running = Some(run);
            }
            Phase::Read1 | Phase::Read2 => {
                self.absorb_reads(&run);
                if run.txn.writes.is_empty() {
                    self.finish(ctx, run);
                } else {
                    self.start_writes(ctx, &mut run);
                    self.running = Some(run);
                }
            }
            Phase::Prepare { max_time } => {
                let stamp = Stamp::new(max_time, self.id);
                let servers = self.placement.group(run.txn.writes.keys());
                for server in servers.keys() {
                    run.waiting.insert(*server);
                    ctx.send(
                        ProcessId::Server(*server),
                        Payload::WriteCommit {
                            txn: run.txn.id,
                            stamp,
                        },
                    );
                }
                for o in run.txn.writes.keys() {
                    self.ctx.bump(o, stamp);
                }
                self.clock = self.clock.max(max_time);
                run.phase = Phase::Commit;
                self.running = Some(run);
            }
            Phase::Commit => self.finish(ctx, run),
        }
    }
}

impl ClientNode for TwoPhaseClient {
    fn on_request(&mut self, ctx: &mut Ctx, txn: &Transaction) {
        let mut run = Running {
            txn: txn.clone(),
            phase: Phase::Read1,
            waiting: BTreeSet::new(),
            versions: BTreeMap::new(),
        };
        if txn.reads.is_empty() {
            self.start_writes(ctx, &mut run);
        } else {
            self.start_reads(ctx, &mut run);
        }
        self.running = Some(run);
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        let ProcessId::Server(s) = from else { return };
        let Some(mut run) = self.running.take() else {
            return;
        };
        if msg.txn() != Some(run.txn.id) || !run.waiting.contains(&s) {
            self.running = Some(run);
            return;
        }
        match (&mut run.phase, msg) {
            (Phase::Read1 | Phase::Read2, Payload::RotResp { versions, .. }) => {
                for v in versions {
                    run.versions.insert(v.object.clone(), v);
                }
            }
            (
                Phase::Prepare { max_time },
                Payload::WriteAck {
                    phase: AckPhase::Prepared,
                    stamp,
                    ..
                },
            ) => *max_time = (*max_time).max(stamp.time),
            (
                Phase::Commit,
                Payload::WriteAck {
                    phase: AckPhase::Committed,
                    ..
                },
            ) => {}
            _ => {
                self.running = Some(run);
                return;
            }
        }
        run.waiting.remove(&s);
        if run.waiting.is_empty() {
            self.advance(ctx, run);
        } else {
            self.running = Some(run);
        }
    }
}

struct Prepared {
    versions: Vec<(ObjectId, Stamp)>,
    siblings: Vec<ObjectId>,
    participants: Vec<u32>,
}

pub(crate) struct TwoPhaseServer {
    index: u32,
    servers: u32,
    help: HelpDepth,
    clock: u64,
    store: VersionStore,
    prepared: BTreeMap<TxnId, Prepared>,
    /// Committed versions waiting for helping rounds before turning visible.
    helping: BTreeMap<TxnId, Vec<(ObjectId, Stamp)>>,
    parked: Vec<(ProcessId, TxnId, Wants)>,
}

impl TwoPhaseServer {
    pub(crate) fn new(index: u32, env: &NodeEnv, help: HelpDepth) -> Self {
        let servers = env.placement.servers().last().map_or(1, |s| s + 1);
        Self {
            index,
            servers,
            help,
            clock: 0,
            store: VersionStore::default(),
            prepared: BTreeMap::new(),
            helping: BTreeMap::new(),
            parked: Vec::new(),
        }
    }

    fn try_exact(&mut self, wants: &[(ObjectId, Stamp)]) -> Option<Vec<ReadVersion>> {
        let mut out = Vec::with_capacity(wants.len());
        for (o, s) in wants {
            let v = self.store.find(o, *s).filter(|v| v.visible)?;
            out.push(v.to_read(o));
        }
        Some(out)
    }

    fn serve_parked(&mut self, ctx: &mut Ctx) {
        let parked = std::mem::take(&mut self.parked);
        for (from, txn, wants) in parked {
            match self.try_exact(&wants) {
                Some(versions) => ctx.send(
                    from,
                    Payload::RotResp {
                        txn,
                        round: 2,
                        versions,
                    },
                ),
                None => self.parked.push((from, txn, wants)),
            }
        }
    }

    fn reveal(&mut self, ctx: &mut Ctx, versions: &[(ObjectId, Stamp)]) {
        for (o, s) in versions {
            let v = self.store.find(o, *s).expect("committed version is stored");
            v.visible = true;
            let value = v.value;
            ctx.mark_visible(o.clone(), value);
        }
        self.serve_parked(ctx);
    }

    fn commit(&mut self, ctx: &mut Ctx, txn: TxnId, stamp: Stamp) {
        self.clock = self.clock.max(stamp.time);
        let Some(p) = self.prepared.remove(&txn) else {
            return;
        };
        let mut committed = Vec::new();
        for (o, pstamp) in &p.versions {
            let vs = self.store.versions(o);
            let pos = vs
                .iter()
                .position(|v| v.stamp == *pstamp && !v.visible)
                .expect("prepared version is stored");
            let mut rec: VersionRecord = vs.remove(pos);
            rec.stamp = stamp;
            for sib in p.siblings.iter().filter(|s| *s != o) {
                rec.deps.bump(sib, stamp);
            }
            self.store.insert(o, rec);
            committed.push((o.clone(), stamp));
        }
        let peers: Vec<u32> = p
            .participants
            .iter()
            .copied()
            .filter(|s| *s != self.index)
            .collect();
        let peers = if peers.is_empty() && self.servers > 1 {
            vec![(self.index + 1) % self.servers]
        } else {
            peers
        };
        if self.help == HelpDepth::None || peers.is_empty() {
            self.reveal(ctx, &committed);
        } else {
            self.helping.insert(txn, committed);
            for peer in peers {
                ctx.send(ProcessId::Server(peer), Payload::Help { txn, round: 0 });
            }
        }
    }

    fn on_help(&mut self, ctx: &mut Ctx, from: ProcessId, txn: TxnId, round: u32) {
        let next = round + 1;
        match self.help {
            HelpDepth::None => {}
            HelpDepth::Unbounded => ctx.send(from, Payload::Help { txn, round: next }),
            HelpDepth::Rounds(n) => {
                if next >= n {
                    if let Some(vs) = self.helping.remove(&txn) {
                        self.reveal(ctx, &vs);
                    }
                }
                if next <= n {
                    ctx.send(from, Payload::Help { txn, round: next });
                }
            }
        }
    }
}

impl ServerNode for TwoPhaseServer {
    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        match msg {
            Payload::RotReq { txn, objects, .. } => {
                let versions = objects
                    .iter()
                    .map(|o| self.store.latest_visible(o).to_read(o))
                    .collect();
                ctx.send(
                    from,
                    Payload::RotResp {
                        txn,
                        round: 1,
                        versions,
                    },
                );
            }
            Payload::RotReq2 { txn, wants } => {
                self.parked.push((from, txn, wants));
                self.serve_parked(ctx);
            }
            Payload::WritePrepare {
                txn,
                writes,
                deps,
                siblings,
                participants,
                clock,
            } => {
                let ts = self.clock.max(clock).max(deps.max_time()) + 1;
                self.clock = ts;
                let stamp = Stamp::new(ts, txn.client());
                let mut versions = Vec::new();
                for (o, value) in writes {
                    self.store.insert(
                        &o,
                        VersionRecord {
                            value,
                            stamp,
                            deps: deps.clone(),
                            visible: false,
                        },
                    );
                    versions.push((o, stamp));
                }
                self.prepared.insert(
                    txn,
                    Prepared {
                        versions,
                        siblings,
                        participants,
                    },
                );
                ctx.send(
                    from,
                    Payload::WriteAck {
                        txn,
                        phase: AckPhase::Prepared,
                        stamp,
                    },
                );
            }
            Payload::WriteCommit { txn, stamp } => {
                self.commit(ctx, txn, stamp);
                ctx.send(
                    from,
                    Payload::WriteAck {
                        txn,
                        phase: AckPhase::Committed,
                        stamp,
                    },
                );
            }
            Payload::Help { txn, round } => self.on_help(ctx, from, txn, round),
            _ => {}
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({
            "clock": self.clock,
            "store": self.store.snapshot(),
            "prepared": self.prepared.keys().collect::<Vec<_>>(),
            "helping": self.helping.keys().collect::<Vec<_>>(),
        })
    }
}
