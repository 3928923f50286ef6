//! Probing a two-object write transaction at every message that could make
//! it visible.
//!
//! A writer installs x on server 0 and y on server 1 in one transaction. A
//! reference run records the write's last client message to a server and
//! then every server-to-server message it triggers, in delivery order.
//! These are the boundaries. Probe `j` is a read of both objects whose
//! request reaches the receiver of boundary `j` one tick before it, and
//! reaches the other server one tick after it. A fast protocol has to
//! answer each side from local state alone, so at every boundary it either
//! mixes old and new values or keeps both old, and keeping both old just
//! moves the problem to the next boundary. After the last probe a final
//! read checks whether the write ever became visible.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{read_results, AdversaryError, ScenarioReport};
use crate::checkers::{audit_fastness, check_causal_serialization, check_progress, Witness};
use crate::history::{ObjectId, Tick, Transaction, TxnId, ValueId};
use crate::protocol::{Placement, ProcessId, Protocol, Shape};
use crate::simnet::{run, Action, MessageMatch, RunConfig, RunOutput, Schedule, Workload, World};

const SCENARIO: &str = "eimp";
const WRITER: u32 = 0;
const WRITE_AT: Tick = 20;
const DELAY_MAX: Tick = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeOutcome {
    /// One object old, the other new.
    Mixed,
    /// Neither new value returned.
    Stale,
    /// Both new values returned.
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EimpProbe {
    pub txn: TxnId,
    pub boundary: usize,
    /// Server whose request lands just before the boundary message.
    pub early_server: u32,
    pub early_at: Tick,
    pub late_server: u32,
    pub late_at: Tick,
    pub outcome: ProbeOutcome,
    /// Causal check of the write plus this probe alone.
    pub checker_pass: bool,
    pub fast: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EimpDetail {
    pub k: usize,
    /// Delivery ticks of the boundaries found by the reference run.
    pub boundaries: Vec<Tick>,
    pub probes: Vec<EimpProbe>,
    /// Server-to-server messages of the write delivered up to the last
    /// probe's boundary.
    pub inter_server_messages: usize,
    /// The scenario run saw the same boundaries as the reference run.
    pub prefix_preserved: bool,
    /// Tick at which the final progress read was issued.
    pub progress_read_at: Tick,
    pub schedule: Schedule,
}

impl EimpDetail {
    /// Every probe either broke causality or saw nothing new.
    pub fn pressure_holds(&self) -> bool {
        self.probes
            .iter()
            .all(|p| !p.checker_pass || p.outcome == ProbeOutcome::Stale)
    }
}

fn x() -> ObjectId {
    ObjectId::new("o0")
}

fn y() -> ObjectId {
    ObjectId::new("o1")
}

fn wot() -> Transaction {
    let id = TxnId::new(WRITER, 0);
    let writes = BTreeMap::from([
        (x(), ValueId::written(WRITER, 0)),
        (y(), ValueId::written(WRITER, 1)),
    ]);
    Transaction::new(id, WRITER, BTreeSet::new(), writes).expect("two writes")
}

fn read_both(id: TxnId) -> Transaction {
    Transaction::new(id, id.client(), BTreeSet::from([x(), y()]), BTreeMap::new())
        .expect("two reads")
}

struct Boundary {
    deliver_at: Tick,
    receiver: u32,
    /// Whether it travels between servers.
    inter_server: bool,
}

/// The write's last client-to-server delivery, then its server-to-server
/// messages in delivery order.
fn boundaries(out: &RunOutput, wot: TxnId) -> Vec<Boundary> {
    let mut own: Vec<_> = out
        .log
        .iter()
        .filter(|m| m.txn == Some(wot) && m.dst.is_server())
        .filter_map(|m| m.deliver_at.map(|d| (d, m.id, m)))
        .collect();
    own.sort_by_key(|(d, id, _)| (*d, *id));
    let server = |p: ProcessId| match p {
        ProcessId::Server(s) => s,
        ProcessId::Client(_) => unreachable!("filtered to servers"),
    };
    let mut out = Vec::new();
    if let Some((d, _, m)) = own.iter().rev().find(|(_, _, m)| !m.src.is_server()) {
        out.push(Boundary {
            deliver_at: *d,
            receiver: server(m.dst),
            inter_server: false,
        });
    }
    let first = out.first().map(|b| b.deliver_at);
    out.extend(
        own.iter()
            .filter(|(d, _, m)| m.src.is_server() && first.is_none_or(|f| *d >= f))
            .map(|(d, _, m)| Boundary {
                deliver_at: *d,
                receiver: server(m.dst),
                inter_server: true,
            }),
    );
    out
}

fn world(protocol: &dyn Protocol) -> World {
    let mut w = World::with_placement(2, Placement::round_robin(2, 2));
    w.allow_clock = protocol.clock_access();
    w
}

fn reference_horizon(k: usize) -> Tick {
    WRITE_AT + 4 * DELAY_MAX * (k as Tick + 4)
}

/// Builds and runs the probe schedule for `k` boundaries against a
/// protocol with generic transactions.
pub fn scenario_eimp(
    protocol: &dyn Protocol,
    k: usize,
    seed: u64,
) -> Result<ScenarioReport, AdversaryError> {
    if k == 0 {
        return Err(AdversaryError::BadRounds);
    }
    if protocol.shape() != Shape::Generic {
        return Err(AdversaryError::ProtocolShapeMismatch {
            protocol: protocol.name().into(),
            scenario: SCENARIO.into(),
            reason: "needs multi-object write transactions".into(),
        });
    }
    let world = world(protocol);
    let wot = wot();
    let wot_id = wot.id;
    let base = Schedule::random(seed, 1, DELAY_MAX);

    let mut reference_load = Workload::new();
    reference_load.push(wot.clone(), WRITE_AT, 0);
    let reference = run(
        protocol,
        &world,
        &reference_load,
        &base,
        &RunConfig::until(reference_horizon(k)),
    )?;
    let found = boundaries(&reference, wot_id);

    let mut load = Workload::new();
    load.push(wot.clone(), WRITE_AT, 0);
    let mut schedule = base.clone();
    let mut placed = Vec::new();
    for (j, b) in found.iter().take(k).enumerate() {
        let probe = TxnId::new(j as u32 + 1, 0);
        let early_at = b.deliver_at.saturating_sub(1).max(1);
        let late_at = b.deliver_at + 1;
        let other = 1 - b.receiver;
        load.push(read_both(probe), early_at.saturating_sub(2), 0);
        schedule = schedule
            .with(
                MessageMatch::any()
                    .txn(probe)
                    .dst(ProcessId::Server(b.receiver)),
                Action::DeliverAt(early_at),
            )
            .with(
                MessageMatch::any().txn(probe).dst(ProcessId::Server(other)),
                Action::DeliverAt(late_at),
            );
        placed.push((j, probe, b.receiver, early_at, other, late_at));
    }
    let last = found
        .get(k.min(found.len()).saturating_sub(1))
        .map_or(WRITE_AT, |b| b.deliver_at);
    let progress_at = last + 2 * DELAY_MAX;
    let progress_txn = TxnId::new(k as u32 + 1, 0);
    load.push(read_both(progress_txn), progress_at, 0);
    let config = RunConfig::until(progress_at + 8 * DELAY_MAX);
    let out = run(protocol, &world, &load, &schedule, &config)?;

    let seen = boundaries(&out, wot_id);
    let prefix_preserved = found
        .iter()
        .take(k)
        .zip(&seen)
        .all(|(a, b)| a.deliver_at == b.deliver_at && a.receiver == b.receiver)
        && seen.len() >= found.len().min(k);

    let h = &out.history;
    let new_x = ValueId::written(WRITER, 0);
    let new_y = ValueId::written(WRITER, 1);
    let results = read_results(&out, &placed.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let mut probes = Vec::new();
    let mut witness: Option<Witness> = None;
    for (j, probe, early_server, early_at, late_server, late_at) in placed {
        let Some(result) = results.iter().find(|r| r.txn == probe) else {
            continue;
        };
        let fresh = result
            .reads
            .iter()
            .filter(|(o, v)| (*o == x() && *v == new_x) || (*o == y() && *v == new_y))
            .count();
        let outcome = match fresh {
            0 => ProbeOutcome::Stale,
            n if n == result.reads.len() => ProbeOutcome::Fresh,
            _ => ProbeOutcome::Mixed,
        };
        let alone = h.restrict(&BTreeSet::from([wot_id, probe]));
        let verdict = check_causal_serialization(&alone)?;
        if witness.is_none() {
            witness = verdict.witness.clone();
        }
        probes.push(EimpProbe {
            txn: probe,
            boundary: j,
            early_server,
            early_at,
            late_server,
            late_at,
            outcome,
            checker_pass: verdict.pass,
            fast: audit_fastness(h, &out.log, probe)?.pass,
        });
    }

    let causal = check_causal_serialization(h)?;
    let progress = check_progress(h, progress_at)?;
    if witness.is_none() {
        witness = progress.witness.clone();
    }
    let fast = probes.iter().all(|p| p.fast);
    let inter_server_messages = found
        .iter()
        .take(probes.len())
        .filter(|b| b.inter_server)
        .count();
    let detail = EimpDetail {
        k,
        boundaries: found.iter().map(|b| b.deliver_at).collect(),
        probes,
        inter_server_messages,
        prefix_preserved,
        progress_read_at: progress_at,
        schedule,
    };
    let classification = if !fast {
        "escapes-by-slowness"
    } else if detail.probes.len() < k {
        "visible-before-budget"
    } else if detail.pressure_holds() {
        "pressure-holds"
    } else {
        "anomaly"
    };
    Ok(ScenarioReport {
        scenario: SCENARIO.into(),
        protocol: protocol.name().into(),
        fast,
        visible: None,
        consistent: causal.pass,
        progress: Some(progress.pass),
        classification: classification.into(),
        witness,
        eimp: Some(detail),
        results,
    })
}
