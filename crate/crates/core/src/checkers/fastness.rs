//! Whether a transaction was fast: per involved server, at most one message
//! each way with the client, and the server answered without first taking
//! in any message from another server.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CheckError, Verdict, Witness};
use crate::history::{History, TxnId, TxnRecord};
use crate::protocol::ProcessId;
use crate::simnet::{MessageLog, MessageRecord};

const CHECKER: &str = "fastness";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastnessWitness {
    pub txn: TxnId,
    pub server: u32,
    pub reason: String,
    /// Ids of the offending messages.
    pub messages: Vec<u64>,
}

pub fn audit_fastness(h: &History, log: &MessageLog, txn: TxnId) -> Result<Verdict, CheckError> {
    let record = h
        .transactions()?
        .into_iter()
        .find(|t| t.id == txn)
        .ok_or(CheckError::UnknownTxn(txn))?;
    let own: Vec<&MessageRecord> = log.iter().filter(|m| m.txn == Some(txn)).collect();
    Ok(audit_record(&record, &own, log))
}

/// Audits one transaction given the messages tagged with it.
pub fn audit_record(record: &TxnRecord, own: &[&MessageRecord], log: &MessageLog) -> Verdict {
    let txn = record.id;
    let client = ProcessId::Client(record.client);
    let mut requests: BTreeMap<u32, Vec<&MessageRecord>> = BTreeMap::new();
    let mut responses: BTreeMap<u32, Vec<&MessageRecord>> = BTreeMap::new();
    for &m in own {
        match (m.src, m.dst) {
            (c, ProcessId::Server(s)) if c == client => requests.entry(s).or_default().push(m),
            (ProcessId::Server(s), c) if c == client => responses.entry(s).or_default().push(m),
            _ => {}
        }
    }
    let fail = |server, reason: &str, messages: Vec<u64>| {
        Verdict::fail(
            CHECKER,
            Witness::Fastness(FastnessWitness {
                txn,
                server,
                reason: reason.to_string(),
                messages,
            }),
        )
    };
    for (s, ms) in requests.iter().chain(responses.iter()) {
        if ms.len() > 1 {
            return fail(*s, "more than one message in one direction", ids(ms));
        }
    }
    for (s, reqs) in &requests {
        let req = reqs[0];
        let Some(recv) = req.deliver_at else { continue };
        let Some(resp) = responses.get(s).map(|r| r[0]) else {
            continue;
        };
        // The response was sent while handling the delivery of `cause` (or a
        // timer at `sent_at`). Any server message delivered to `s` after the
        // request and no later than that event was taken in before replying.
        let upper = match resp.cause {
            Some(c) if c == req.id => continue,
            Some(c) => match log.iter().find(|m| m.id == c) {
                Some(trig) => (trig.deliver_at.unwrap_or(resp.sent_at), trig.id),
                None => (resp.sent_at, u64::MAX),
            },
            None => (resp.sent_at, u64::MAX),
        };
        let between: Vec<&MessageRecord> = log
            .iter()
            .filter(|m| m.src.is_server() && m.dst == ProcessId::Server(*s))
            .filter(|m| {
                m.deliver_at
                    .is_some_and(|d| (d, m.id) > (recv, req.id) && (d, m.id) <= upper)
            })
            .collect();
        if !between.is_empty() {
            return fail(
                *s,
                "server took in a server message before replying",
                ids(&between),
            );
        }
    }
    Verdict::pass(CHECKER)
}

fn ids(ms: &[&MessageRecord]) -> Vec<u64> {
    ms.iter().map(|m| m.id).collect()
}
