//! Fast, visible read-only transactions with single-object writes.
//!
//! Writes are acknowledged at once and turn visible asynchronously: a server
//! asks the servers holding the new version's dependencies to confirm those
//! are visible, and each answer carries the responder's table of "old"
//! transactions. A read-only transaction listed in that table has already
//! read something older than a dependency of the new version, so it keeps
//! being served the version that preceded the new one. Servers remember
//! every read-only transaction they served, which is what makes reads
//! visible.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::common::{DepContext, ReadVersion, Stamp, VersionRecord, VersionStore, Wants};
use crate::history::{ClientId, ObjectId, Transaction, TxnId};
use crate::protocol::{
    ClientNode, Ctx, NodeEnv, Payload, Placement, ProcessId, Protocol, ServerNode, Shape,
    TxnOutcome,
};

pub struct FastVisible;

impl Protocol for FastVisible {
    fn name(&self) -> &str {
        "fast-visible"
    }

    fn shape(&self) -> Shape {
        Shape::Restricted
    }

    fn fast_rots(&self) -> bool {
        true
    }

    fn client(&self, _id: ClientId, env: &NodeEnv) -> Box<dyn ClientNode> {
        Box::new(D1Client {
            placement: env.placement.as_ref().clone(),
            ctx: DepContext::new(),
            clock: 0,
            running: None,
        })
    }

    fn server(&self, index: u32, env: &NodeEnv) -> Box<dyn ServerNode> {
        Box::new(D1Server::new(index, env))
    }
}

/// What a read-only transaction is (or must be) served at some server.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OldTxEntry {
    pub ctx: DepContext,
    pub values: BTreeMap<ObjectId, Stamp>,
}

impl OldTxEntry {
    fn absorb(&mut self, other: &OldTxEntry) {
        self.ctx.merge(&other.ctx);
        for (o, s) in &other.values {
            self.values.entry(o.clone()).or_insert(*s);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OldTxTable(pub BTreeMap<TxnId, OldTxEntry>);

impl OldTxTable {
    fn absorb(&mut self, txn: TxnId, entry: &OldTxEntry) {
        self.0.entry(txn).or_default().absorb(entry);
    }
}

struct Running {
    txn: Transaction,
    waiting: BTreeSet<u32>,
    versions: Vec<ReadVersion>,
}

struct D1Client {
    placement: Placement,
    ctx: DepContext,
    clock: u64,
    running: Option<Running>,
}

impl ClientNode for D1Client {
    fn on_request(&mut self, ctx: &mut Ctx, txn: &Transaction) {
        let mut waiting = BTreeSet::new();
        for (object, value) in &txn.writes {
            let server = self.placement.server_of(object).expect("placed");
            waiting.insert(server);
            ctx.send(
                ProcessId::Server(server),
                Payload::D1Write {
                    txn: txn.id,
                    object: object.clone(),
                    value: *value,
                    clock: self.clock,
                    deps: self.ctx.clone(),
                },
            );
        }
        for (server, objects) in self.placement.group(&txn.reads) {
            waiting.insert(server);
            ctx.send(
                ProcessId::Server(server),
                Payload::D1RotReq {
                    txn: txn.id,
                    objects,
                    clock: self.clock,
                    ctx: self.ctx.clone(),
                },
            );
        }
        self.running = Some(Running {
            txn: txn.clone(),
            waiting,
            versions: Vec::new(),
        });
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        let ProcessId::Server(s) = from else { return };
        let Some(run) = self.running.as_mut() else {
            return;
        };
        if msg.txn() != Some(run.txn.id) || !run.waiting.contains(&s) {
            return;
        }
        match msg {
            Payload::D1Wack { object, stamp, .. } => {
                self.ctx.bump(&object, stamp);
                self.clock = self.clock.max(stamp.time);
            }
            Payload::D1RotResp {
                versions, clock, ..
            } => {
                self.clock = self.clock.max(clock);
                run.versions.extend(versions);
            }
            _ => return,
        }
        run.waiting.remove(&s);
        if !run.waiting.is_empty() {
            return;
        }
        let run = self.running.take().expect("running");
        let mut reads = BTreeMap::new();
        for v in &run.versions {
            self.ctx.bump(&v.object, v.stamp);
            self.ctx.merge(&v.deps);
            self.clock = self.clock.max(v.stamp.time).max(v.deps.max_time());
            reads.insert(v.object.clone(), v.value);
        }
        ctx.complete(TxnOutcome {
            reads,
            writes: run.txn.writes.keys().cloned().collect(),
        });
    }
}

/// Visibility work for the oldest invisible version of one object.
#[derive(Default)]
struct Propagation {
    stamp: Stamp,
    awaiting: BTreeSet<u64>,
    incoming: Vec<OldTxTable>,
}

struct D1Server {
    index: u32,
    placement: Placement,
    clock: u64,
    store: VersionStore,
    /// Invisible versions per object, oldest first.
    fifo: BTreeMap<ObjectId, VecDeque<Stamp>>,
    props: BTreeMap<ObjectId, Propagation>,
    next_req: u64,
    req_owner: BTreeMap<u64, ObjectId>,
    parked: Vec<(ProcessId, u64, Wants)>,
    current: BTreeMap<TxnId, OldTxEntry>,
    oldtx: OldTxTable,
}

impl D1Server {
    fn new(index: u32, env: &NodeEnv) -> Self {
        Self {
            index,
            placement: env.placement.as_ref().clone(),
            clock: 0,
            store: VersionStore::default(),
            fifo: BTreeMap::new(),
            props: BTreeMap::new(),
            next_req: 0,
            req_owner: BTreeMap::new(),
            parked: Vec::new(),
            current: BTreeMap::new(),
            oldtx: OldTxTable::default(),
        }
    }

    fn is_local(&self, o: &ObjectId) -> bool {
        self.placement.server_of(o) == Some(self.index)
    }

    fn visible_at_least(&self, o: &ObjectId, s: Stamp) -> bool {
        self.store.latest_visible_stamp(o) >= s
    }

    fn deps_of(&mut self, o: &ObjectId, s: Stamp) -> DepContext {
        self.store
            .find(o, s)
            .map(|v| v.deps.clone())
            .expect("queued version is stored")
    }

    fn start(&mut self, ctx: &mut Ctx, o: &ObjectId, stamp: Stamp) {
        let deps = self.deps_of(o, stamp);
        let mut prop = Propagation {
            stamp,
            ..Propagation::default()
        };
        let remote: Vec<&ObjectId> = deps
            .iter()
            .filter(|(d, s)| **s > Stamp::ZERO && !self.is_local(d))
            .map(|(d, _)| d)
            .collect();
        for (server, objects) in self.placement.group(remote) {
            let req = self.next_req;
            self.next_req += 1;
            self.req_owner.insert(req, o.clone());
            prop.awaiting.insert(req);
            let wants = objects
                .into_iter()
                .map(|d| (d.clone(), deps.get(&d)))
                .collect();
            ctx.send(
                ProcessId::Server(server),
                Payload::VisReq {
                    req,
                    wants,
                    clock: self.clock,
                },
            );
        }
        self.props.insert(o.clone(), prop);
    }

    fn ready(&mut self, o: &ObjectId) -> bool {
        let Some(prop) = self.props.get(o) else {
            return false;
        };
        if !prop.awaiting.is_empty() {
            return false;
        }
        let stamp = prop.stamp;
        let deps = self.deps_of(o, stamp);
        let ok = deps
            .iter()
            .filter(|(d, _)| *d != o && self.is_local(d))
            .all(|(d, s)| self.visible_at_least(d, *s));
        ok
    }

    fn finalize(&mut self, ctx: &mut Ctx, o: &ObjectId) {
        let prop = self.props.remove(o).expect("propagation in progress");
        let w = prop.stamp;
        let mut incoming = OldTxTable::default();
        for table in &prop.incoming {
            for (t, e) in &table.0 {
                incoming.absorb(*t, e);
            }
        }
        let moving: Vec<TxnId> = self
            .current
            .iter()
            .filter(|(t, e)| incoming.0.contains_key(t) || e.values.get(o).is_some_and(|s| *s < w))
            .map(|(t, _)| *t)
            .collect();
        for t in moving {
            let e = self.current.remove(&t).expect("listed");
            self.oldtx.absorb(t, &e);
        }
        for (t, e) in &incoming.0 {
            self.oldtx.absorb(*t, e);
        }
        let prev = self.store.latest_visible(o).stamp;
        for e in self.oldtx.0.values_mut() {
            if !e.values.contains_key(o) {
                e.values.insert(o.clone(), e.ctx.get(o).max(prev));
            }
        }
        let v = self.store.find(o, w).expect("queued version is stored");
        v.visible = true;
        let value = v.value;
        ctx.mark_visible(o.clone(), value);
        let q = self.fifo.get_mut(o).expect("queue exists");
        q.pop_front();
        if q.is_empty() {
            self.fifo.remove(o);
        }
    }

    /// Drives visibility as far as it can go without new messages.
    fn pump(&mut self, ctx: &mut Ctx) {
        loop {
            let mut progressed = false;
            let heads: Vec<(ObjectId, Stamp)> = self
                .fifo
                .iter()
                .map(|(o, q)| (o.clone(), *q.front().expect("non-empty")))
                .collect();
            for (o, stamp) in heads {
                if !self.props.contains_key(&o) {
                    self.start(ctx, &o, stamp);
                }
                if self.ready(&o) {
                    self.finalize(ctx, &o);
                    progressed = true;
                }
            }
            if progressed {
                self.serve_parked(ctx);
            } else {
                break;
            }
        }
        self.serve_parked(ctx);
    }

    fn serve_parked(&mut self, ctx: &mut Ctx) {
        let parked = std::mem::take(&mut self.parked);
        for (from, req, wants) in parked {
            if wants.iter().all(|(o, s)| self.visible_at_least(o, *s)) {
                ctx.send(
                    from,
                    Payload::VisResp {
                        req,
                        oldtx: self.oldtx.clone(),
                        clock: self.clock,
                    },
                );
            } else {
                self.parked.push((from, req, wants));
            }
        }
    }

    fn read(&mut self, txn: TxnId, o: &ObjectId, client_ctx: &DepContext) -> ReadVersion {
        if let Some(s) = self
            .oldtx
            .0
            .get(&txn)
            .and_then(|e| e.values.get(o))
            .copied()
        {
            if let Some(v) = self.store.find(o, s) {
                return v.to_read(o);
            }
        }
        let latest = self.store.latest_visible(o);
        let wanted = client_ctx.get(o);
        if wanted > latest.stamp {
            if let Some(v) = self.store.find(o, wanted) {
                return v.to_read(o);
            }
        }
        latest.to_read(o)
    }
}

impl ServerNode for D1Server {
    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        match msg {
            Payload::D1Write {
                txn,
                object,
                value,
                clock,
                deps,
            } => {
                let ts = self.clock.max(clock).max(deps.max_time()) + 1;
                self.clock = ts;
                let stamp = Stamp::new(ts, txn.client());
                self.store.insert(
                    &object,
                    VersionRecord {
                        value,
                        stamp,
                        deps,
                        visible: false,
                    },
                );
                self.fifo
                    .entry(object.clone())
                    .or_default()
                    .push_back(stamp);
                ctx.send(from, Payload::D1Wack { txn, object, stamp });
                self.pump(ctx);
            }
            Payload::D1RotReq {
                txn,
                objects,
                clock,
                ctx: client_ctx,
            } => {
                self.clock = self.clock.max(clock);
                let versions: Vec<ReadVersion> = objects
                    .iter()
                    .map(|o| self.read(txn, o, &client_ctx))
                    .collect();
                let entry = self.current.entry(txn).or_default();
                entry.ctx.merge(&client_ctx);
                for v in &versions {
                    entry.values.insert(v.object.clone(), v.stamp);
                }
                ctx.send(
                    from,
                    Payload::D1RotResp {
                        txn,
                        versions,
                        clock: self.clock,
                    },
                );
            }
            Payload::VisReq { req, wants, clock } => {
                self.clock = self.clock.max(clock);
                self.parked.push((from, req, wants));
                self.serve_parked(ctx);
            }
            Payload::VisResp { req, oldtx, clock } => {
                self.clock = self.clock.max(clock);
                if let Some(o) = self.req_owner.remove(&req) {
                    if let Some(p) = self.props.get_mut(&o) {
                        p.awaiting.remove(&req);
                        p.incoming.push(oldtx);
                    }
                }
                self.pump(ctx);
            }
            _ => {}
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({
            "clock": self.clock,
            "store": self.store.snapshot(),
            "pending": self.fifo,
            "current": self.current,
            "oldtx": self.oldtx,
        })
    }
}
