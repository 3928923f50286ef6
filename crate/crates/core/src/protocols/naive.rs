//! Single-round reads of whatever each server currently stores. Fast and
//! invisible, and not causally consistent.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;

use super::common::{DepContext, ReadVersion, Stamp};
use crate::history::{ClientId, ObjectId, Transaction, TxnId, ValueId};
use crate::protocol::{
    AckPhase, ClientNode, Ctx, NodeEnv, Payload, Placement, ProcessId, Protocol, ServerNode, Shape,
    TxnOutcome,
};

pub struct NaiveInvisible;

impl Protocol for NaiveInvisible {
    fn name(&self) -> &str {
        "naive-invisible"
    }

    fn shape(&self) -> Shape {
        Shape::Restricted
    }

    fn fast_rots(&self) -> bool {
        true
    }

    fn client(&self, _id: ClientId, env: &NodeEnv) -> Box<dyn ClientNode> {
        Box::new(NaiveClient {
            placement: env.placement.as_ref().clone(),
            running: None,
        })
    }

    fn server(&self, _index: u32, _env: &NodeEnv) -> Box<dyn ServerNode> {
        Box::new(NaiveServer::default())
    }
}

struct Running {
    txn: TxnId,
    waiting: BTreeSet<u32>,
    reads: BTreeMap<ObjectId, ValueId>,
    writes: BTreeSet<ObjectId>,
}

struct NaiveClient {
    placement: Placement,
    running: Option<Running>,
}

impl ClientNode for NaiveClient {
    fn on_request(&mut self, ctx: &mut Ctx, txn: &Transaction) {
        let mut waiting = BTreeSet::new();
        for (server, objects) in self.placement.group(&txn.reads) {
            waiting.insert(server);
            ctx.send(
                ProcessId::Server(server),
                Payload::RotReq {
                    txn: txn.id,
                    objects,
                    clock: 0,
                },
            );
        }
        for (object, value) in &txn.writes {
            let server = self.placement.server_of(object).expect("placed");
            waiting.insert(server);
            ctx.send(
                ProcessId::Server(server),
                Payload::WritePrepare {
                    txn: txn.id,
                    writes: vec![(object.clone(), *value)],
                    deps: DepContext::new(),
                    siblings: Vec::new(),
                    participants: vec![server],
                    clock: 0,
                },
            );
        }
        self.running = Some(Running {
            txn: txn.id,
            waiting,
            reads: BTreeMap::new(),
            writes: txn.writes.keys().cloned().collect(),
        });
    }

    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        let Some(run) = self.running.as_mut() else {
            return;
        };
        let ProcessId::Server(s) = from else { return };
        match msg {
            Payload::RotResp { txn, versions, .. } if txn == run.txn => {
                for v in versions {
                    run.reads.insert(v.object, v.value);
                }
            }
            Payload::WriteAck { txn, .. } if txn == run.txn => {}
            _ => return,
        }
        run.waiting.remove(&s);
        if run.waiting.is_empty() {
            let run = self.running.take().expect("running");
            ctx.complete(TxnOutcome {
                reads: run.reads,
                writes: run.writes,
            });
        }
    }
}

#[derive(Default)]
struct NaiveServer {
    values: BTreeMap<ObjectId, ValueId>,
}

impl ServerNode for NaiveServer {
    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload) {
        match msg {
            Payload::RotReq { txn, objects, .. } => {
                let versions = objects
                    .into_iter()
                    .map(|o| ReadVersion {
                        value: self.values.get(&o).copied().unwrap_or(ValueId::Bottom),
                        object: o,
                        stamp: Stamp::ZERO,
                        deps: DepContext::new(),
                    })
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
            Payload::WritePrepare { txn, writes, .. } => {
                for (o, v) in writes {
                    self.values.insert(o.clone(), v);
                    ctx.mark_visible(o, v);
                }
                ctx.send(
                    from,
                    Payload::WriteAck {
                        txn,
                        phase: AckPhase::Committed,
                        stamp: Stamp::ZERO,
                    },
                );
            }
            _ => {}
        }
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "values": self.values })
    }
}
