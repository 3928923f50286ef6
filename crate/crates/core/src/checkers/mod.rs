//! Verdicts over recorded runs.
//!
//! Every checker returns a [`Verdict`]; failing verdicts carry a structured
//! witness that can be inspected or, for causal violations, replayed.

pub mod causal;
pub mod fastness;
pub mod one_version;
pub mod progress;
pub mod visibility;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{HistoryError, ObjectId, TxnId};

pub use causal::{
    check_causal_serialization, check_causal_with_budget, check_sampled, replay_witness,
    validate_serialization, CausalReport, CausalWitness, SampleOptions, DEFAULT_BUDGET,
};
pub use fastness::{audit_fastness, FastnessWitness};
pub use one_version::{check_one_version, OneVersionWitness};
pub use progress::{check_progress, ProgressWitness};
pub use visibility::{audit_visibility, VisibilityClass};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("{needed} transactions exceed the search budget of {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("written object {0} has no read after quiescence")]
    NoProbeReads(ObjectId),
    #[error("transaction {0} is not in the history")]
    UnknownTxn(TxnId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Witness {
    Causal(CausalWitness),
    Progress(ProgressWitness),
    Fastness(FastnessWitness),
    Visibility(crate::simnet::StateDiff),
    OneVersion(OneVersionWitness),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub checker: String,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

impl Verdict {
    pub fn pass(checker: &str) -> Self {
        Self {
            checker: checker.to_string(),
            pass: true,
            witness: None,
        }
    }

    pub fn fail(checker: &str, witness: Witness) -> Self {
        Self {
            checker: checker.to_string(),
            pass: false,
            witness: Some(witness),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdicts serialize")
    }
}
