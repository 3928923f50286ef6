//! Classifies a probe transaction from the diff between a run with it and
//! the same run without it.
//!
//! An empty diff witnesses invisibility for that one schedule only. A
//! non-empty diff is reported as visible for the schedule that was run.

use serde::{Deserialize, Serialize};

use super::{Verdict, Witness};
use crate::simnet::StateDiff;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VisibilityClass {
    Visible,
    InvisibleWitnessed,
}

pub fn audit_visibility(diff: &StateDiff) -> (VisibilityClass, Verdict) {
    if diff.is_empty() {
        (
            VisibilityClass::InvisibleWitnessed,
            Verdict::pass("visibility"),
        )
    } else {
        (
            VisibilityClass::Visible,
            Verdict {
                checker: "visibility".into(),
                pass: true,
                witness: Some(Witness::Visibility(diff.clone())),
            },
        )
    }
}
