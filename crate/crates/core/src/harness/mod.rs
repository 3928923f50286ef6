//! Runs random workloads against protocols, checks every run and collects
//! message and round metrics.

mod workload;

pub use workload::WorkloadSpec;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkers::{
    check_progress, check_sampled, fastness, one_version, CheckError, SampleOptions, Verdict,
};
use crate::history::{TxnId, TxnRecord};
use crate::protocol::{ProcessId, Protocol};
use crate::simnet::{run, MessageRecord, RunConfig, RunOutput, SimError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Check(#[from] CheckError),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rots: usize,
    pub writes: usize,
    /// Read-only transactions by the most messages sent to any one server.
    pub rot_rounds: BTreeMap<usize, usize>,
    pub mean_rot_rounds: f64,
    pub client_server_messages: usize,
    pub server_server_messages: usize,
    pub server_messages_per_write: f64,
    /// Mean ticks from a write's start until its value is visible.
    pub mean_visibility_lag: Option<f64>,
    pub fast_rots: usize,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub protocol: String,
    pub spec: WorkloadSpec,
    pub output: RunOutput,
    pub causal: Verdict,
    pub progress: Option<Verdict>,
    /// Read-only transactions failing the fastness audit.
    pub slow_rots: Vec<TxnId>,
    pub one_version: Verdict,
    pub metrics: Metrics,
}

impl RunReport {
    pub fn consistent(&self) -> bool {
        self.causal.pass
    }

    pub fn progress_ok(&self) -> bool {
        self.progress.as_ref().is_none_or(|v| v.pass)
    }
}

/// Rounds a transaction used: the most messages it sent to one server.
pub fn rounds(out: &RunOutput, txn: &TxnRecord) -> usize {
    let own: Vec<&MessageRecord> = out.log.iter().filter(|m| m.txn == Some(txn.id)).collect();
    rounds_of(txn, &own)
}

fn rounds_of(txn: &TxnRecord, own: &[&MessageRecord]) -> usize {
    let mut per_server: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for m in own {
        if m.src == ProcessId::Client(txn.client) {
            *per_server.entry(m.dst).or_default() += 1;
        }
    }
    per_server.values().copied().max().unwrap_or(0)
}

/// Simulates `spec` under `protocol` and runs every checker on the result.
pub fn run_spec(protocol: &dyn Protocol, spec: &WorkloadSpec) -> Result<RunReport, HarnessError> {
    let out = run(
        protocol,
        &spec.world(),
        &spec.workload(),
        &spec.schedule(),
        &RunConfig::until(spec.horizon),
    )?;
    evaluate(protocol, spec, out)
}

pub fn evaluate(
    protocol: &dyn Protocol,
    spec: &WorkloadSpec,
    out: RunOutput,
) -> Result<RunReport, HarnessError> {
    let h = &out.history;
    let txns = h.transactions().map_err(CheckError::from)?;
    let causal = check_sampled(h, SampleOptions::default())?;
    let progress = match out.quiescence {
        Some(q) if spec.probe => Some(check_progress(h, q)?),
        _ => None,
    };
    let placement = &spec.world().placement;
    let mut metrics = Metrics::default();
    let mut slow_rots = Vec::new();
    let mut one_version = Verdict::pass("one-version");
    let mut round_sum = 0;
    let mut by_txn: BTreeMap<TxnId, Vec<&MessageRecord>> = BTreeMap::new();
    for m in out.log.iter() {
        if let Some(t) = m.txn {
            by_txn.entry(t).or_default().push(m);
        }
    }
    let none = Vec::new();
    for t in &txns {
        let own = by_txn.get(&t.id).unwrap_or(&none);
        if t.is_read_only() {
            metrics.rots += 1;
            let r = rounds_of(t, own);
            round_sum += r;
            *metrics.rot_rounds.entry(r).or_default() += 1;
            if fastness::audit_record(t, own, &out.log).pass {
                metrics.fast_rots += 1;
            } else {
                slow_rots.push(t.id);
            }
        } else {
            metrics.writes += t.writes.len();
        }
        if !t.reads.is_empty() && one_version.pass {
            one_version = one_version::check_record(t, own, Some(placement));
        }
    }
    if metrics.rots > 0 {
        metrics.mean_rot_rounds = round_sum as f64 / metrics.rots as f64;
    }
    for m in out.log.iter() {
        if m.is_inter_server() {
            metrics.server_server_messages += 1;
        } else {
            metrics.client_server_messages += 1;
        }
    }
    if metrics.writes > 0 {
        metrics.server_messages_per_write =
            metrics.server_server_messages as f64 / metrics.writes as f64;
    }
    let lags: Vec<u64> = txns
        .iter()
        .flat_map(|t| t.writes.iter().map(move |(o, v)| (t.start, o, *v)))
        .filter_map(|(start, o, v)| out.visible_at(o, v).map(|at| at.saturating_sub(start)))
        .collect();
    if !lags.is_empty() {
        metrics.mean_visibility_lag = Some(lags.iter().sum::<u64>() as f64 / lags.len() as f64);
    }
    Ok(RunReport {
        protocol: protocol.name().to_string(),
        spec: spec.clone(),
        output: out,
        causal,
        progress,
        slow_rots,
        one_version,
        metrics,
    })
}

/// Runs many specs in parallel. Results come back in input order.
pub fn run_batch(
    protocol: &dyn Protocol,
    specs: &[WorkloadSpec],
) -> Vec<Result<RunReport, HarnessError>> {
    specs.par_iter().map(|s| run_spec(protocol, s)).collect()
}

/// One row of a protocol comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub protocol: String,
    pub seed: u64,
    pub write_ratio: f64,
    pub consistent: bool,
    pub progress: Option<bool>,
    pub mean_rot_rounds: f64,
    pub fast_rot_fraction: f64,
    pub client_server_messages: usize,
    pub server_server_messages: usize,
    pub server_messages_per_write: f64,
    pub mean_visibility_lag: Option<f64>,
}

impl CompareRow {
    pub fn csv_header() -> &'static str {
        "protocol,seed,write_ratio,consistent,progress,mean_rot_rounds,fast_rot_fraction,client_server_messages,server_server_messages,server_messages_per_write,mean_visibility_lag"
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.4},{:.4},{},{},{:.4},{}",
            self.protocol,
            self.seed,
            self.write_ratio,
            self.consistent,
            opt(self.progress.map(|p| p.to_string())),
            self.mean_rot_rounds,
            self.fast_rot_fraction,
            self.client_server_messages,
            self.server_server_messages,
            self.server_messages_per_write,
            opt(self.mean_visibility_lag.map(|l| format!("{l:.4}"))),
        )
    }
}

impl From<&RunReport> for CompareRow {
    fn from(r: &RunReport) -> Self {
        let m = &r.metrics;
        Self {
            protocol: r.protocol.clone(),
            seed: r.spec.seed,
            write_ratio: r.spec.write_ratio,
            consistent: r.causal.pass,
            progress: r.progress.as_ref().map(|v| v.pass),
            mean_rot_rounds: m.mean_rot_rounds,
            fast_rot_fraction: if m.rots == 0 {
                1.0
            } else {
                m.fast_rots as f64 / m.rots as f64
            },
            client_server_messages: m.client_server_messages,
            server_server_messages: m.server_server_messages,
            server_messages_per_write: m.server_messages_per_write,
            mean_visibility_lag: m.mean_visibility_lag,
        }
    }
}
