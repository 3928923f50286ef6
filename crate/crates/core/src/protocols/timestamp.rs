//! Reads and writes ordered by the global clock.
//!
//! Writes are stamped with the issue tick. Reads return, per object, the
//! newest version stamped below a threshold. The plain variant uses the
//! read's own issue tick as threshold. The bounded variant reads `2u` ticks
//! in the past, where `u` bounds message delay, and holds each writing
//! transaction open until `2u` ticks after it started, so everything below
//! the threshold has already landed and a client always reads its own
//! writes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::history::{ClientId, ObjectId, Tick, Transaction, ValueId};
use crate::protocol::{
    ClientNode, Ctx, NodeEnv, Payload, Placement, ProcessId, Protocol, ServerNode, Shape,
    TxnOutcome,
};

/// Global-clock stamp with the issuing client as tie-breaker.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct GlobalStamp {
    pub t: Tick,
    pub client: ClientId,
}

pub struct TsGlobal {
    bounded: bool,
    /// Delay bound override; `None` uses the world's bound.
    bound: Option<Tick>,
}

impl TsGlobal {
    pub fn plain() -> Self {
        Self {
            bounded: false,
            bound: None,
        }
    }

    pub fn bounded(bound: Option<Tick>) -> Self {
        Self {
            bounded: true,
            bound,
        }
    }
}

impl Protocol for TsGlobal {
    fn name(&self) -> &str {
        if self.bounded {
            "ts-global-2u"
        } else {
            "ts-global"
        }
    }

    fn shape(&self) -> Shape {
        Shape::Generic
    }

    fn fast_rots(&self) -> bool {
        true
    }

    fn clock_access(&self) -> bool {
        true
    }

    fn client(&self, id: ClientId, env: &NodeEnv) -> Box<dyn ClientNode> {
        let lag = if self.bounded {
            2 * self.bound.unwrap_or(env.delay_bound)
        } else {
            0
        };
        Box::new(D2Client {
            id,
            placement: env.placement.as_ref().clone(),
            lag,
            running: None,
        })
    }

    fn server(&self, _index: u32, _env: &NodeEnv) -> Box<dyn ServerNode> {
        Box::new(D2Server::default())
    }
}

struct Running {
    txn: Transaction,
    waiting: BTreeSet<u32>,
    reads: BTreeMap<ObjectId, ValueId>,
    hold_until: Tick,
    timer_done: bool,
}

struct D2Client {
    id: ClientId,
    placement: Placement,
    lag: Tick,
    running: Option<Running>,
}

impl D2Client {
    fn maybe_finish(&mut self, ctx: &mut Ctx) {
        let Some(run) = self.running.as_ref() else {
            return;
        };
        if !run.waiting.is_empty() || !run.timer_done {
            return;
        }
        let run = self.running.take().expect("running");
        ctx.complete(TxnOutcome {
            reads: run.reads,
            writes: run.txn.writes.keys().cloned().collect(),
        });
    }
}

impl ClientNode for D2Client {
    fn on_request(&mut self, ctx: &mut Ctx, txn: &Transaction) {
        let now = ctx.now();
        let threshold = GlobalStamp {
            t: now.saturating_sub(self.lag),
            client: self.id,
        };
        let write_stamp = GlobalStamp {
            t: now,
            client: self.id,
        };
        let mut waiting = BTreeSet::new();
        for (server, objects) in self.placement.group(&txn.reads) {
            waiting.insert(server);
            ctx.send(
                ProcessId::Server(server),
                Payload::D2Read {
                    txn: txn.id,
                    stamp: threshold,
                    objects,
                },
            );
        }
        for (server, objects) in self.placement.group(txn.writes.keys()) {
            waiting.insert(server);
            let writes = objects
                .into_iter()
                .map(|o| {
                    let v = txn.writes[&o];
                    (o, v)
                })
                .collect();
            ctx.send(
                ProcessId::Server(server),
                Payload::D2Write {
                    txn: txn.id,
                    stamp: write_stamp,
                    writes,
                },
            );
        }
        let hold_until = if txn.writes.is_empty() {
            now
        } else {
            now + self.lag
        };
        let timer_done = hold_until <= now;
        if !timer_done {
            ctx.set_timer(hold_until, 0);
        }
        self.running = Some(Running {
            txn: txn.clone(),
            waiting,
            reads: BTreeMap::new(),
            hold_until,
            timer_done,
        });
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        let ProcessId::Server(s) = from else { return };
        let Some(run) = self.running.as_mut() else {
            return;
        };
        let Payload::D2Resp { txn, reads, .. } = msg else {
            return;
        };
        if txn != run.txn.id || !run.waiting.remove(&s) {
            return;
        }
        run.reads.extend(reads);
        self.maybe_finish(ctx);
    }

    fn on_timer(&mut self, ctx: &mut Ctx, _token: u64) {
        let now = ctx.now();
        if let Some(run) = self.running.as_mut() {
            if now >= run.hold_until {
                run.timer_done = true;
            }
        }
        self.maybe_finish(ctx);
    }
}

#[derive(Default)]
struct D2Server {
    versions: BTreeMap<ObjectId, BTreeMap<GlobalStamp, ValueId>>,
}

impl ServerNode for D2Server {
    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        match msg {
            Payload::D2Read {
                txn,
                stamp,
                objects,
            } => {
                let reads = objects
                    .into_iter()
                    .map(|o| {
                        let v = self
                            .versions
                            .get(&o)
                            .and_then(|vs| vs.range(..stamp).next_back())
                            .map_or(ValueId::Bottom, |(_, v)| *v);
                        (o, v)
                    })
                    .collect();
                ctx.send(
                    from,
                    Payload::D2Resp {
                        txn,
                        reads,
                        acked: Vec::new(),
                    },
                );
            }
            Payload::D2Write { txn, stamp, writes } => {
                let mut acked = Vec::new();
                for (o, v) in writes {
                    self.versions.entry(o.clone()).or_default().insert(stamp, v);
                    ctx.mark_visible(o.clone(), v);
                    acked.push(o);
                }
                ctx.send(
                    from,
                    Payload::D2Resp {
                        txn,
                        reads: Vec::new(),
                        acked,
                    },
                );
            }
            _ => {}
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        let versions: BTreeMap<&ObjectId, Vec<(GlobalStamp, ValueId)>> = self
            .versions
            .iter()
            .map(|(o, vs)| (o, vs.iter().map(|(s, v)| (*s, *v)).collect()))
            .collect();
        json!({ "versions": versions })
    }
}
