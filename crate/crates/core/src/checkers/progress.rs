//! Eventual visibility, checked on reads issued after quiescence.
//!
//! A read `r(x)v'` that starts at or after the quiescence tick must, for
//! every write `w(x)v` in the run, either return `v` or return a value whose
//! writing transaction ended no earlier than `w`'s started. Reading the
//! initial value of a written object always fails.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{CheckError, Verdict, Witness};
use crate::history::{History, ObjectId, Tick, TxnId, ValueId};

const CHECKER: &str = "progress";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressWitness {
    pub read_txn: TxnId,
    pub object: ObjectId,
    pub returned: ValueId,
    /// The write the read should have observed or superseded.
    pub stale_write: TxnId,
    pub stale_value: ValueId,
}

pub fn check_progress(h: &History, quiescence: Tick) -> Result<Verdict, CheckError> {
    let txns = h.transactions()?;
    // object -> [(writer txn, value, start, end)]
    let mut writes: BTreeMap<&ObjectId, Vec<(TxnId, ValueId, Tick, Tick)>> = BTreeMap::new();
    let mut span: BTreeMap<(&ObjectId, ValueId), (Tick, Tick)> = BTreeMap::new();
    for t in &txns {
        for (o, v) in &t.writes {
            writes
                .entry(o)
                .or_default()
                .push((t.id, *v, t.start, t.end));
            span.insert((o, *v), (t.start, t.end));
        }
    }
    let mut probed: BTreeSet<&ObjectId> = BTreeSet::new();
    for t in txns.iter().filter(|t| t.start >= quiescence) {
        for (o, got) in &t.reads {
            probed.insert(o);
            let Some(ws) = writes.get(o) else { continue };
            for &(wtxn, wv, wstart, _) in ws {
                let fine = *got == wv
                    || span
                        .get(&(o, *got))
                        .is_some_and(|&(_, got_end)| got_end >= wstart);
                if !fine {
                    return Ok(Verdict::fail(
                        CHECKER,
                        Witness::Progress(ProgressWitness {
                            read_txn: t.id,
                            object: o.clone(),
                            returned: *got,
                            stale_write: wtxn,
                            stale_value: wv,
                        }),
                    ));
                }
            }
        }
    }
    if let Some(o) = writes.keys().find(|o| !probed.contains(*o)) {
        return Err(CheckError::NoProbeReads((*o).clone()));
    }
    Ok(Verdict::pass(CHECKER))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryBuilder;

    #[test]
    fn no_writes_passes() {
        let mut b = HistoryBuilder::new();
        b.txn(0).read("x", ValueId::Bottom).commit();
        assert!(check_progress(&b.build(), 0).unwrap().pass);
    }

    #[test]
    fn stale_probe_fails() {
        let mut b = HistoryBuilder::new();
        b.txn(0).write("x", ValueId::written(0, 1)).commit();
        b.txn(0).write("x", ValueId::written(0, 2)).commit();
        b.txn(1).read("x", ValueId::written(0, 1)).commit();
        let h = b.build();
        let q = h.transactions().unwrap()[2].start;
        let v = check_progress(&h, q).unwrap();
        assert!(!v.pass);
        let Some(Witness::Progress(w)) = v.witness else {
            panic!("progress witness expected")
        };
        assert_eq!(w.stale_value, ValueId::written(0, 2));
    }

    #[test]
    fn bottom_after_write_fails() {
        let mut b = HistoryBuilder::new();
        b.txn(0).write("x", ValueId::written(0, 1)).commit();
        b.txn(1).read("x", ValueId::Bottom).commit();
        let h = b.build();
        let q = h.transactions().unwrap()[1].start;
        assert!(!check_progress(&h, q).unwrap().pass);
    }

    #[test]
    fn missing_probe_is_an_error() {
        let mut b = HistoryBuilder::new();
        b.txn(0).write("x", ValueId::written(0, 1)).commit();
        assert!(matches!(
            check_progress(&b.build(), 1_000),
            Err(CheckError::NoProbeReads(_))
        ));
    }
}
