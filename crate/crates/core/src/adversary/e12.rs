//! A reader whose two requests straddle a causally ordered pair of writes.
//!
//! Server 0 holds X and server 1 holds Y. A reader sends its read-only
//! transaction early. Its request to server 0 arrives before anything new
//! is written. Its request to server 1 is held until one tick after the
//! new Y turns visible there. Meanwhile a writer writes X and then Y, so
//! the write of X precedes the write of Y causally. A protocol whose reads
//! leave no trace at server 0 cannot tell server 1 to keep the old Y, and
//! the reader sees the new Y next to the old X.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{AdversaryError, ScenarioReport};
use crate::checkers::{
    audit_fastness, audit_visibility, check_causal_serialization, check_progress, VisibilityClass,
};
use crate::history::{ObjectId, Tick, Transaction, TxnId, ValueId};
use crate::protocol::{Placement, ProcessId, Protocol};
use crate::simnet::{
    paired_run, run, Action, MessageMatch, RunConfig, RunOutput, Schedule, Workload, World,
};

const SCENARIO: &str = "e12";
const HOLD: &str = "reader-to-y";

/// Writes the old values and then the new ones, so every old write
/// causally precedes every new one.
const WRITER: u32 = 1;
const READER: u32 = 2;
const PROBE: u32 = 3;
/// Issues the follow-up read. It has its own channels so the straddling
/// read never shifts the delays it draws.
const LATE_READER: u32 = 4;

const READ_AT: Tick = 200;
const ARRIVE_AT: Tick = 210;
const WRITE_AT: Tick = 220;
const LATE_READ_AT: Tick = 3_000;
const REFERENCE_RELEASE: Tick = 6_000;
const HORIZON: Tick = 100_000;

/// Which horn of the visibility/consistency trade-off a protocol took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum E12Class {
    FastVisibleConsistent,
    FastInvisibleInconsistent,
    NotFast,
    /// Fast, invisible and still consistent, which is only possible by
    /// leaning on a synchronized clock.
    ClockCircumvention,
    Anomaly,
}

impl E12Class {
    pub fn as_str(self) -> &'static str {
        match self {
            E12Class::FastVisibleConsistent => "fast-visible-consistent",
            E12Class::FastInvisibleInconsistent => "fast-invisible-inconsistent",
            E12Class::NotFast => "not-fast",
            E12Class::ClockCircumvention => "clock-circumvention",
            E12Class::Anomaly => "anomaly",
        }
    }

    pub fn classify(fast: bool, visible: bool, consistent: bool, clock: bool) -> Self {
        match (fast, visible, consistent) {
            (false, _, _) => E12Class::NotFast,
            (true, true, true) => E12Class::FastVisibleConsistent,
            (true, false, false) => E12Class::FastInvisibleInconsistent,
            (true, false, true) if clock => E12Class::ClockCircumvention,
            _ => E12Class::Anomaly,
        }
    }
}

fn x() -> ObjectId {
    ObjectId::new("o0")
}

fn y() -> ObjectId {
    ObjectId::new("o1")
}

fn write(id: TxnId, object: ObjectId, value: ValueId) -> Transaction {
    Transaction::new(
        id,
        id.client(),
        BTreeSet::new(),
        BTreeMap::from([(object, value)]),
    )
    .expect("single write")
}

fn read_both(id: TxnId) -> Transaction {
    Transaction::new(id, id.client(), BTreeSet::from([x(), y()]), BTreeMap::new())
        .expect("two reads")
}

/// The reader's straddling transaction.
pub fn straddling_rot() -> TxnId {
    TxnId::new(READER, 0)
}

/// The follow-up read, issued once everything settled.
pub fn late_rot() -> TxnId {
    TxnId::new(LATE_READER, 0)
}

fn workload(with_probe: bool) -> Workload {
    let mut w = Workload::new();
    let x0 = ValueId::written(WRITER, 0);
    let y0 = ValueId::written(WRITER, 1);
    w.push(write(TxnId::new(WRITER, 0), x(), x0), 0, 0);
    w.push(write(TxnId::new(WRITER, 1), y(), y0), 0, 0);
    if with_probe {
        w.push(read_both(straddling_rot()), READ_AT, 0);
    }
    w.push(read_both(late_rot()), LATE_READ_AT, 0);
    let new_x = ValueId::written(WRITER, 2);
    let new_y = ValueId::written(WRITER, 3);
    w.push(write(TxnId::new(WRITER, 2), x(), new_x), WRITE_AT, 0);
    w.push(write(TxnId::new(WRITER, 3), y(), new_y), 0, 0);
    w.probe(read_both(TxnId::new(PROBE, 0)));
    w
}

fn schedule(seed: u64, release: Tick) -> Schedule {
    let reader = MessageMatch::any().txn(straddling_rot());
    Schedule::random(seed, 1, 10)
        .with(
            reader.clone().dst(ProcessId::Server(0)),
            Action::DeliverAt(ARRIVE_AT),
        )
        .with(reader.dst(ProcessId::Server(1)), Action::Hold(HOLD.into()))
        .release(HOLD, release)
}

fn world(protocol: &dyn Protocol) -> World {
    let mut w = World::with_placement(2, Placement::round_robin(2, 2));
    w.allow_clock = protocol.clock_access();
    w
}

/// Tick at which server 1 first shows the writer's Y.
fn y_visible_at(out: &RunOutput) -> Option<Tick> {
    let new_y = ValueId::written(WRITER, 3);
    out.visibility
        .iter()
        .find(|v| v.server == 1 && v.object == y() && v.value == new_y)
        .map(|v| v.tick)
}

/// Runs the scenario against `protocol` with message delays drawn from
/// `seed`. Restricted and generic bindings are both accepted because every
/// write here touches one object.
pub fn scenario_e12(protocol: &dyn Protocol, seed: u64) -> Result<ScenarioReport, AdversaryError> {
    let world = world(protocol);
    let config = RunConfig::until(HORIZON);
    let with = workload(true);
    for txn in with.transactions() {
        if !protocol.accepts(txn) {
            return Err(AdversaryError::ProtocolShapeMismatch {
                protocol: protocol.name().into(),
                scenario: SCENARIO.into(),
                reason: format!("transaction {} is not supported", txn.id),
            });
        }
    }

    let reference = run(
        protocol,
        &world,
        &with,
        &schedule(seed, REFERENCE_RELEASE),
        &config,
    )?;
    let tau_y = y_visible_at(&reference)
        .ok_or_else(|| AdversaryError::NeverVisible("the new value of Y".into()))?;
    let schedule = schedule(seed, tau_y + 1);

    let paired = paired_run(
        protocol,
        &world,
        &with,
        &workload(false),
        &schedule,
        &config,
        straddling_rot(),
    )?;
    let (class, _) = audit_visibility(&paired.diff);
    let visible = class == VisibilityClass::Visible;
    let out = &paired.with_probe;
    let h = &out.history;

    let fast = [straddling_rot(), late_rot()]
        .into_iter()
        .map(|t| audit_fastness(h, &out.log, t).map(|v| v.pass))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .all(|p| p);
    let causal = check_causal_serialization(h)?;
    let progress = match out.quiescence {
        Some(q) => Some(check_progress(h, q)?),
        None => None,
    };
    let class = E12Class::classify(fast, visible, causal.pass, protocol.clock_access());
    let witness = causal
        .witness
        .clone()
        .or_else(|| progress.as_ref().and_then(|p| p.witness.clone()));
    Ok(ScenarioReport {
        scenario: SCENARIO.into(),
        protocol: protocol.name().into(),
        fast,
        visible: Some(visible),
        consistent: causal.pass,
        progress: progress.map(|p| p.pass),
        classification: class.as_str().into(),
        witness,
        eimp: None,
        results: super::read_results(out, &[straddling_rot(), late_rot()])?,
    })
}
