//! Scripted adversarial schedules that drive a protocol into the races the
//! impossibility arguments rely on, and report how the protocol escapes.
//!
//! Each scenario is a fixed world, a timed workload and a list of schedule
//! overrides. Where a placement depends on the protocol's own behavior (when
//! a value turns visible, when servers exchange messages) a reference run
//! detects it first and the scenario is then built around what was observed.

mod e12;
mod eimp;

pub use e12::{scenario_e12, E12Class};
pub use eimp::{scenario_eimp, EimpDetail, EimpProbe, ProbeOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkers::{CheckError, Witness};
use crate::history::{ObjectId, TxnId, ValueId};
use crate::simnet::{RunOutput, SimError};

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("protocol {protocol} cannot run scenario {scenario}: {reason}")]
    ProtocolShapeMismatch {
        protocol: String,
        scenario: String,
        reason: String,
    },
    #[error("scenario needs k >= 1")]
    BadRounds,
    #[error("reference run never made {0} visible")]
    NeverVisible(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Check(#[from] CheckError),
}

/// Outcome of one scenario against one protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub protocol: String,
    /// Every probed read-only transaction passed the fastness audit.
    pub fast: bool,
    /// Paired-run classification of the probe, when one was run.
    pub visible: Option<bool>,
    pub consistent: bool,
    pub progress: Option<bool>,
    pub classification: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eimp: Option<EimpDetail>,
    /// What the scenario's reading transactions returned.
    pub results: Vec<ReadResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadResult {
    pub txn: TxnId,
    pub reads: Vec<(ObjectId, ValueId)>,
}

fn read_results(out: &RunOutput, txns: &[TxnId]) -> Result<Vec<ReadResult>, AdversaryError> {
    let records = out.history.transactions().map_err(CheckError::from)?;
    Ok(txns
        .iter()
        .filter_map(|id| records.iter().find(|r| r.id == *id))
        .map(|r| ReadResult {
            txn: r.id,
            reads: r.reads.clone(),
        })
        .collect())
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
