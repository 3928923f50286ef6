//! Record of every message sent in a run.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::history::{HistoryError, ObjectId, Tick, TxnId, ValueId};
use crate::protocol::{Payload, ProcessId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub id: u64,
    pub src: ProcessId,
    pub dst: ProcessId,
    pub sent_at: Tick,
    /// `None` while the message is held with no release.
    pub deliver_at: Option<Tick>,
    pub payload_kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub txn: Option<TxnId>,
    /// Object values carried to a client by a read response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<(ObjectId, ValueId)>>,
    /// Message whose delivery triggered this send; `None` for sends made
    /// while handling a client request or a timer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<u64>,
    #[serde(skip)]
    pub payload: Option<Payload>,
}

impl MessageRecord {
    pub fn is_inter_server(&self) -> bool {
        self.src.is_server() && self.dst.is_server()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

impl MessageLog {
    pub fn iter(&self) -> impl Iterator<Item = &MessageRecord> {
        self.records.iter()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), HistoryError> {
        for r in &self.records {
            let line = serde_json::to_string(r).expect("records serialize");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, HistoryError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(&line).map_err(|e| HistoryError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }

    /// Messages delivered to `dst` strictly before `tick`.
    pub fn delivered_to_before(
        &self,
        dst: ProcessId,
        tick: Tick,
    ) -> impl Iterator<Item = &MessageRecord> {
        self.records
            .iter()
            .filter(move |r| r.dst == dst && r.deliver_at.is_some_and(|t| t < tick))
    }
}
