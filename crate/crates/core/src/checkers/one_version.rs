//! Operational one-version check: every response to a reading transaction
//! carries one value per read object held by the responding server and no
//! value of any other object.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CheckError, Verdict, Witness};
use crate::history::{History, ObjectId, TxnId, TxnRecord};
use crate::protocol::{Placement, ProcessId};
use crate::simnet::{MessageLog, MessageRecord};

const CHECKER: &str = "one-version";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneVersionWitness {
    pub txn: TxnId,
    /// Offending response, absent when the problem is the returned result.
    pub message: Option<u64>,
    pub reason: String,
}

/// With a placement, each response must also cover every read object the
/// server stores. Without one, an object is attributed to the servers that
/// return it and may only come from one of them.
pub fn check_one_version(
    h: &History,
    log: &MessageLog,
    txn: TxnId,
    placement: Option<&Placement>,
) -> Result<Verdict, CheckError> {
    let record = h
        .transactions()?
        .into_iter()
        .find(|t| t.id == txn)
        .ok_or(CheckError::UnknownTxn(txn))?;
    let own: Vec<&MessageRecord> = log.iter().filter(|m| m.txn == Some(txn)).collect();
    Ok(check_record(&record, &own, placement))
}

/// Checks one transaction given the messages tagged with it.
pub fn check_record(
    record: &TxnRecord,
    own: &[&MessageRecord],
    placement: Option<&Placement>,
) -> Verdict {
    let txn = record.id;
    let fail = |message, reason: String| {
        Verdict::fail(
            CHECKER,
            Witness::OneVersion(OneVersionWitness {
                txn,
                message,
                reason,
            }),
        )
    };
    let reads: BTreeSet<&ObjectId> = record.reads.iter().map(|(o, _)| o).collect();
    if reads.len() != record.reads.len() {
        return fail(None, "result holds several values for one object".into());
    }
    let client = ProcessId::Client(record.client);
    let mut origin: BTreeMap<&ObjectId, u32> = BTreeMap::new();
    for m in own.iter().filter(|m| m.dst == client) {
        let (ProcessId::Server(s), Some(values)) = (m.src, m.values.as_ref()) else {
            continue;
        };
        let mut seen: BTreeSet<&ObjectId> = BTreeSet::new();
        for (o, _) in values {
            if !seen.insert(o) {
                return fail(Some(m.id), format!("two versions of {o}"));
            }
            if !reads.contains(o) {
                return fail(Some(m.id), format!("version of unread object {o}"));
            }
            if let Some(p) = placement {
                if p.server_of(o) != Some(s) {
                    return fail(Some(m.id), format!("{o} is not stored by server {s}"));
                }
            } else if *origin.entry(o).or_insert(s) != s {
                return fail(Some(m.id), format!("{o} returned by two servers"));
            }
        }
        if let Some(p) = placement {
            let expected: BTreeSet<&ObjectId> = reads
                .iter()
                .copied()
                .filter(|o| p.server_of(o) == Some(s))
                .collect();
            if seen != expected {
                return fail(Some(m.id), "response misses a read object".into());
            }
        }
    }
    Verdict::pass(CHECKER)
}
