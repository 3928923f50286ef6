//! Runs the same world with and without a probe client and reports every
//! difference the probe caused outside of its own traffic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{run, RunConfig, RunOutput, Schedule, SimError, Workload, World};
use crate::history::{ClientId, Tick, TxnId};
use crate::protocol::{ProcessId, Protocol};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerDiff {
    pub tick: Tick,
    pub server: u32,
    pub with_probe: serde_json::Value,
    pub without_probe: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StateDiff {
    pub servers: Vec<ServerDiff>,
    /// Non-probe messages present in only one of the runs, rendered as text
    /// and prefixed with `+` (with probe) or `-` (without).
    pub messages: Vec<String>,
    pub visibility: Vec<String>,
}

impl StateDiff {
    pub fn is_empty(&self) -> bool {
        self.servers.is_empty() && self.messages.is_empty() && self.visibility.is_empty()
    }
}

pub struct PairedRun {
    pub with_probe: RunOutput,
    pub without_probe: RunOutput,
    pub probe_end: Tick,
    pub diff: StateDiff,
}

fn message_keys(out: &RunOutput, probe: ClientId) -> BTreeMap<String, usize> {
    let me = ProcessId::Client(probe);
    let mut keys = BTreeMap::new();
    for r in out.log.iter().filter(|r| r.src != me && r.dst != me) {
        let payload = serde_json::to_string(&r.payload).expect("payload serializes");
        let key = format!(
            "{}->{} sent {} deliver {:?} {}",
            r.src, r.dst, r.sent_at, r.deliver_at, payload
        );
        *keys.entry(key).or_insert(0) += 1;
    }
    keys
}

fn multiset_diff(a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>) -> Vec<String> {
    let mut out = Vec::new();
    for (k, &n) in a {
        for _ in b.get(k).copied().unwrap_or(0)..n {
            out.push(format!("+ {k}"));
        }
    }
    for (k, &n) in b {
        for _ in a.get(k).copied().unwrap_or(0)..n {
            out.push(format!("- {k}"));
        }
    }
    out
}

/// Runs `with` (which must contain `probe_txn`) and `without`, snapshotting
/// server state when the probe ends and at the end of both runs.
#[allow(clippy::too_many_arguments)]
pub fn paired_run(
    protocol: &dyn Protocol,
    world: &World,
    with: &Workload,
    without: &Workload,
    schedule: &Schedule,
    config: &RunConfig,
    probe_txn: TxnId,
) -> Result<PairedRun, SimError> {
    let first = run(protocol, world, with, schedule, config)?;
    let probe_end = first
        .end_of(probe_txn)
        .ok_or(SimError::ProbeIncomplete(probe_txn))?;
    let mut cfg = config.clone();
    cfg.snapshot_at.push(probe_end);
    let a = run(protocol, world, with, schedule, &cfg)?;
    let b = run(protocol, world, without, schedule, &cfg)?;

    let mut diff = StateDiff::default();
    let probe_snap = |o: &RunOutput| o.snapshot_at(probe_end).cloned();
    let pairs = [
        (probe_snap(&a), probe_snap(&b)),
        (Some(a.final_state().clone()), Some(b.final_state().clone())),
    ];
    for (sa, sb) in pairs {
        let (Some(sa), Some(sb)) = (sa, sb) else {
            continue;
        };
        for (i, (x, y)) in sa.servers.iter().zip(&sb.servers).enumerate() {
            if x != y {
                diff.servers.push(ServerDiff {
                    tick: sa.tick.max(sb.tick),
                    server: i as u32,
                    with_probe: x.clone(),
                    without_probe: y.clone(),
                });
            }
        }
    }
    let probe = probe_txn.client();
    diff.messages = multiset_diff(&message_keys(&a, probe), &message_keys(&b, probe));
    let vis = |o: &RunOutput| -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for v in &o.visibility {
            *m.entry(format!("{} {} {}={}", v.tick, v.server, v.object, v.value))
                .or_insert(0) += 1;
        }
        m
    };
    diff.visibility = multiset_diff(&vis(&a), &vis(&b));
    Ok(PairedRun {
        with_probe: a,
        without_probe: b,
        probe_end,
        diff,
    })
}
