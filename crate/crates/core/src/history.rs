//! Objects, values, transactions and client-observable operation histories.
//!
//! A [`History`] is the interchange format between the simulator, the
//! checkers and the CLI. It is serialized as JSON Lines, one [`OpEvent`] per
//! line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::BitMatrix;

pub type ClientId = u32;

/// Simulated time in integer ticks.
pub type Tick = u64;

/// Largest history (in read/write operations) for which the causality
/// closure is computed.
pub const MAX_CLOSURE_OPS: usize = 2_000;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("transaction {0} has no start event")]
    MissingStart(TxnId),
    #[error("transaction {0} has no end event")]
    MissingEnd(TxnId),
    #[error("transaction {0} has more than one {1} event")]
    DuplicateBoundary(TxnId, &'static str),
    #[error("transaction {0} ends at or before it starts")]
    EmptyInterval(TxnId),
    #[error("event of transaction {0} at tick {1} lies outside the transaction")]
    EventOutsideTxn(TxnId, Tick),
    #[error("transaction {0} carries events from more than one client")]
    MixedClients(TxnId),
    #[error("transaction {0} has no reads and no writes")]
    EmptyTransaction(TxnId),
    #[error("client {0} runs transactions {1} and {2} concurrently")]
    ClientOverlap(ClientId, TxnId, TxnId),
    #[error("read of {object} in {txn} returned {value}, which no transaction wrote")]
    DanglingRead {
        txn: TxnId,
        object: ObjectId,
        value: ValueId,
    },
    #[error("value {value} of {object} is written more than once")]
    DuplicateWrite { object: ObjectId, value: ValueId },
    #[error("history has {ops} operations, above the closure limit of {limit}")]
    TooLarge { ops: usize, limit: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Name of a stored object. Never empty.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ObjectId(String);

impl ObjectId {
    pub fn new(name: impl Into<String>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "object names must be non-empty");
        Self(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ObjectId {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s.is_empty() {
            Err("empty object name".into())
        } else {
            Ok(Self(s))
        }
    }
}

impl From<ObjectId> for String {
    fn from(o: ObjectId) -> String {
        o.0
    }
}

impl From<&str> for ObjectId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A value stored in an object. Written values are identified by their
/// writer and a per-writer sequence number; `Bottom` is the initial value of
/// every object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "ValueRepr", into = "ValueRepr")]
pub enum ValueId {
    Bottom,
    Written { writer: ClientId, seq: u64 },
}

impl ValueId {
    pub fn written(writer: ClientId, seq: u64) -> Self {
        Self::Written { writer, seq }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, Self::Bottom)
    }
}

impl fmt::Display for ValueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bottom => f.write_str("⊥"),
            Self::Written { writer, seq } => write!(f, "c{writer}.{seq}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ValueRepr {
    #[serde(default)]
    writer: ClientId,
    #[serde(default)]
    seq: u64,
    #[serde(default)]
    bottom: bool,
}

impl From<ValueId> for ValueRepr {
    fn from(v: ValueId) -> Self {
        match v {
            ValueId::Bottom => Self {
                writer: 0,
                seq: 0,
                bottom: true,
            },
            ValueId::Written { writer, seq } => Self {
                writer,
                seq,
                bottom: false,
            },
        }
    }
}

impl TryFrom<ValueRepr> for ValueId {
    type Error = String;

    fn try_from(r: ValueRepr) -> Result<Self, Self::Error> {
        Ok(if r.bottom {
            ValueId::Bottom
        } else {
            ValueId::Written {
                writer: r.writer,
                seq: r.seq,
            }
        })
    }
}

/// Transaction identifier. The issuing client lives in the upper 32 bits so
/// identifiers of one client never depend on other clients' workloads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TxnId(pub u64);

impl TxnId {
    pub fn new(client: ClientId, seq: u32) -> Self {
        Self((u64::from(client) << 32) | u64::from(seq))
    }

    pub fn client(self) -> ClientId {
        (self.0 >> 32) as ClientId
    }

    pub fn seq(self) -> u32 {
        self.0 as u32
    }
}

impl fmt::Display for TxnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}.{}", self.client(), self.seq())
    }
}

/// Accepts the display form `T<client>.<seq>` or the raw number.
impl std::str::FromStr for TxnId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad transaction id {s:?}, expected T<client>.<seq>");
        if let Ok(raw) = s.parse::<u64>() {
            return Ok(Self(raw));
        }
        let rest = s.strip_prefix('T').ok_or_else(bad)?;
        let (c, q) = rest.split_once('.').ok_or_else(bad)?;
        Ok(Self::new(
            c.parse().map_err(|_| bad())?,
            q.parse().map_err(|_| bad())?,
        ))
    }
}

/// A transaction as requested by a client: a read set and a write set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: TxnId,
    pub client: ClientId,
    pub reads: BTreeSet<ObjectId>,
    pub writes: BTreeMap<ObjectId, ValueId>,
}

impl Transaction {
    pub fn new(
        id: TxnId,
        client: ClientId,
        reads: BTreeSet<ObjectId>,
        writes: BTreeMap<ObjectId, ValueId>,
    ) -> Result<Self, HistoryError> {
        if reads.is_empty() && writes.is_empty() {
            return Err(HistoryError::EmptyTransaction(id));
        }
        Ok(Self {
            id,
            client,
            reads,
            writes,
        })
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectId> {
        self.reads.iter().chain(self.writes.keys())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    TxnStart,
    TxnEnd,
    ReadReturn {
        object: ObjectId,
        value: ValueId,
    },
    /// Acknowledgment (`ok`) of a write. Carries the written value so that
    /// histories are self-contained for checking.
    WriteAck {
        object: ObjectId,
        value: ValueId,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "EventRepr", into = "EventRepr")]
pub struct OpEvent {
    pub time: Tick,
    pub client: ClientId,
    pub txn: TxnId,
    pub kind: EventKind,
}

#[derive(Serialize, Deserialize)]
struct EventRepr {
    time: Tick,
    client: ClientId,
    txn: TxnId,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    object: Option<ObjectId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<ValueId>,
}

impl From<OpEvent> for EventRepr {
    fn from(e: OpEvent) -> Self {
        let (kind, object, value) = match e.kind {
            EventKind::TxnStart => ("txn-start", None, None),
            EventKind::TxnEnd => ("txn-end", None, None),
            EventKind::ReadReturn { object, value } => ("read-return", Some(object), Some(value)),
            EventKind::WriteAck { object, value } => ("write-ack", Some(object), Some(value)),
        };
        Self {
            time: e.time,
            client: e.client,
            txn: e.txn,
            kind: kind.to_string(),
            object,
            value,
        }
    }
}

impl TryFrom<EventRepr> for OpEvent {
    type Error = String;

    fn try_from(r: EventRepr) -> Result<Self, Self::Error> {
        let need = |what: &str| format!("{} event without {what}", r.kind);
        let kind = match r.kind.as_str() {
            "txn-start" => EventKind::TxnStart,
            "txn-end" => EventKind::TxnEnd,
            "read-return" => EventKind::ReadReturn {
                object: r.object.clone().ok_or_else(|| need("object"))?,
                value: r.value.ok_or_else(|| need("value"))?,
            },
            "write-ack" => EventKind::WriteAck {
                object: r.object.clone().ok_or_else(|| need("object"))?,
                value: r.value.ok_or_else(|| need("value"))?,
            },
            other => return Err(format!("unknown event kind {other:?}")),
        };
        Ok(Self {
            time: r.time,
            client: r.client,
            txn: r.txn,
            kind,
        })
    }
}

/// One completed transaction as recovered from a history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TxnRecord {
    pub id: TxnId,
    pub client: ClientId,
    pub start: Tick,
    pub end: Tick,
    pub reads: Vec<(ObjectId, ValueId)>,
    pub writes: Vec<(ObjectId, ValueId)>,
}

impl TxnRecord {
    pub fn has_write(&self) -> bool {
        !self.writes.is_empty()
    }

    pub fn is_read_only(&self) -> bool {
        self.writes.is_empty()
    }

    pub fn read_of(&self, object: &ObjectId) -> Option<ValueId> {
        self.reads
            .iter()
            .find(|(o, _)| o == object)
            .map(|(_, v)| *v)
    }
}

/// Time-ordered client-observable events.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<OpEvent>,
}

impl History {
    /// Builds a history, stably sorting the events by time.
    pub fn from_events(mut events: Vec<OpEvent>) -> Self {
        events.sort_by_key(|e| e.time);
        Self { events }
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn clients(&self) -> BTreeSet<ClientId> {
        self.events.iter().map(|e| e.client).collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), HistoryError> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, HistoryError> {
        let mut events = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: OpEvent = serde_json::from_str(&line).map_err(|err| HistoryError::Parse {
                line: i + 1,
                message: err.to_string(),
            })?;
            events.push(e);
        }
        Ok(Self::from_events(events))
    }

    /// Groups events into transactions ordered by start time, checking the
    /// per-transaction and per-client invariants.
    pub fn transactions(&self) -> Result<Vec<TxnRecord>, HistoryError> {
        struct Partial {
            client: ClientId,
            start: Option<Tick>,
            end: Option<Tick>,
            inner: Vec<(Tick, EventKind)>,
        }
        let mut by_txn: BTreeMap<TxnId, Partial> = BTreeMap::new();
        for e in &self.events {
            let p = by_txn.entry(e.txn).or_insert_with(|| Partial {
                client: e.client,
                start: None,
                end: None,
                inner: Vec::new(),
            });
            if p.client != e.client {
                return Err(HistoryError::MixedClients(e.txn));
            }
            match &e.kind {
                EventKind::TxnStart => {
                    if p.start.replace(e.time).is_some() {
                        return Err(HistoryError::DuplicateBoundary(e.txn, "start"));
                    }
                }
                EventKind::TxnEnd => {
                    if p.end.replace(e.time).is_some() {
                        return Err(HistoryError::DuplicateBoundary(e.txn, "end"));
                    }
                }
                k => p.inner.push((e.time, k.clone())),
            }
        }

        let mut txns = Vec::with_capacity(by_txn.len());
        for (id, p) in by_txn {
            let start = p.start.ok_or(HistoryError::MissingStart(id))?;
            let end = p.end.ok_or(HistoryError::MissingEnd(id))?;
            if end <= start {
                return Err(HistoryError::EmptyInterval(id));
            }
            let mut reads = Vec::new();
            let mut writes = Vec::new();
            for (t, k) in p.inner {
                if t <= start || t >= end {
                    return Err(HistoryError::EventOutsideTxn(id, t));
                }
                match k {
                    EventKind::ReadReturn { object, value } => reads.push((object, value)),
                    EventKind::WriteAck { object, value } => writes.push((object, value)),
                    _ => unreachable!(),
                }
            }
            if reads.is_empty() && writes.is_empty() {
                return Err(HistoryError::EmptyTransaction(id));
            }
            txns.push(TxnRecord {
                id,
                client: p.client,
                start,
                end,
                reads,
                writes,
            });
        }
        txns.sort_by_key(|t| (t.start, t.id));

        let mut last: BTreeMap<ClientId, &TxnRecord> = BTreeMap::new();
        for t in &txns {
            if let Some(prev) = last.get(&t.client) {
                if t.start <= prev.end {
                    return Err(HistoryError::ClientOverlap(t.client, prev.id, t.id));
                }
            }
            last.insert(t.client, t);
        }
        Ok(txns)
    }

    /// Keeps only the events of the given transactions.
    pub fn restrict(&self, keep: &BTreeSet<TxnId>) -> History {
        History {
            events: self
                .events
                .iter()
                .filter(|e| keep.contains(&e.txn))
                .cloned()
                .collect(),
        }
    }

    /// Removes one transaction's events.
    pub fn without(&self, txn: TxnId) -> History {
        History {
            events: self
                .events
                .iter()
                .filter(|e| e.txn != txn)
                .cloned()
                .collect(),
        }
    }
}

/// Transactions of client `c`, in start-time order.
pub fn project_client(h: &History, c: ClientId) -> Result<Vec<Transaction>, HistoryError> {
    h.transactions()?
        .into_iter()
        .filter(|t| t.client == c)
        .map(|t| {
            Transaction::new(
                t.id,
                t.client,
                t.reads.into_iter().map(|(o, _)| o).collect(),
                t.writes.into_iter().collect(),
            )
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Write,
}

/// One read or write operation instance of a history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRef {
    pub txn: TxnId,
    pub client: ClientId,
    pub kind: OpKind,
    pub object: ObjectId,
    pub value: ValueId,
}

impl fmt::Display for OpRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            OpKind::Read => 'r',
            OpKind::Write => 'w',
        };
        write!(f, "{k}({}){}@{}", self.object, self.value, self.txn)
    }
}

/// Transitive closure of the causality relation over the operations of a
/// history: program order, read-from, and transitivity.
#[derive(Clone, Debug)]
pub struct CausalGraph {
    pub ops: Vec<OpRef>,
    reach: BitMatrix,
}

impl CausalGraph {
    pub fn precedes(&self, a: usize, b: usize) -> bool {
        self.reach.get(a, b)
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ops.len()).flat_map(move |a| self.reach.row(a).map(move |b| (a, b)))
    }

    pub fn edge_count(&self) -> usize {
        self.reach.count()
    }

    pub fn find(&self, kind: OpKind, object: &str, value: ValueId) -> Option<usize> {
        self.ops
            .iter()
            .position(|o| o.kind == kind && o.object.as_str() == object && o.value == value)
    }
}

/// Computes the causality closure of `h`.
///
/// Program order follows each client's event sequence (so operations inside
/// one transaction are ordered by their return events); read-from links a
/// write to every read returning its value.
pub fn causal_precedes(h: &History) -> Result<CausalGraph, HistoryError> {
    let txns = h.transactions()?;
    let mut ops = Vec::new();
    let mut writer_of: BTreeMap<(ObjectId, ValueId), usize> = BTreeMap::new();
    let mut per_client: BTreeMap<ClientId, Vec<usize>> = BTreeMap::new();

    let mut ordered: Vec<&OpEvent> = h
        .events
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EventKind::ReadReturn { .. } | EventKind::WriteAck { .. }
            )
        })
        .collect();
    ordered.sort_by_key(|e| e.time);
    for e in ordered {
        let (kind, object, value) = match &e.kind {
            EventKind::ReadReturn { object, value } => (OpKind::Read, object, *value),
            EventKind::WriteAck { object, value } => (OpKind::Write, object, *value),
            _ => unreachable!(),
        };
        let idx = ops.len();
        if kind == OpKind::Write && writer_of.insert((object.clone(), value), idx).is_some() {
            return Err(HistoryError::DuplicateWrite {
                object: object.clone(),
                value,
            });
        }
        per_client.entry(e.client).or_default().push(idx);
        ops.push(OpRef {
            txn: e.txn,
            client: e.client,
            kind,
            object: object.clone(),
            value,
        });
    }
    if ops.len() > MAX_CLOSURE_OPS {
        return Err(HistoryError::TooLarge {
            ops: ops.len(),
            limit: MAX_CLOSURE_OPS,
        });
    }
    debug_assert!(txns
        .iter()
        .all(|t| !t.reads.is_empty() || !t.writes.is_empty()));

    let mut reach = BitMatrix::new(ops.len());
    for seq in per_client.values() {
        for w in seq.windows(2) {
            reach.set(w[0], w[1]);
        }
    }
    for (i, op) in ops.iter().enumerate() {
        if op.kind != OpKind::Read || op.value.is_bottom() {
            continue;
        }
        match writer_of.get(&(op.object.clone(), op.value)) {
            Some(&w) => {
                if w != i {
                    reach.set(w, i);
                }
            }
            None => {
                return Err(HistoryError::DanglingRead {
                    txn: op.txn,
                    object: op.object.clone(),
                    value: op.value,
                })
            }
        }
    }
    reach.close();
    Ok(CausalGraph { ops, reach })
}

/// Convenience builder for hand-written histories. Transactions are laid out
/// back to back on a shared time line in the order they are committed.
#[derive(Debug, Default)]
pub struct HistoryBuilder {
    events: Vec<OpEvent>,
    cursor: Tick,
    next_seq: BTreeMap<ClientId, u32>,
}

pub struct TxnBuilder<'a> {
    parent: &'a mut HistoryBuilder,
    client: ClientId,
    ops: Vec<EventKind>,
}

impl HistoryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn txn(&mut self, client: ClientId) -> TxnBuilder<'_> {
        TxnBuilder {
            parent: self,
            client,
            ops: Vec::new(),
        }
    }

    pub fn build(self) -> History {
        History::from_events(self.events)
    }
}

impl TxnBuilder<'_> {
    pub fn read(mut self, object: &str, value: ValueId) -> Self {
        self.ops.push(EventKind::ReadReturn {
            object: object.into(),
            value,
        });
        self
    }

    pub fn write(mut self, object: &str, value: ValueId) -> Self {
        self.ops.push(EventKind::WriteAck {
            object: object.into(),
            value,
        });
        self
    }

    pub fn commit(self) -> TxnId {
        let p = self.parent;
        let seq = p.next_seq.entry(self.client).or_insert(0);
        let id = TxnId::new(self.client, *seq);
        *seq += 1;
        let client = self.client;
        let mut push = |time, kind| {
            p.events.push(OpEvent {
                time,
                client,
                txn: id,
                kind,
            })
        };
        let start = p.cursor + 1;
        push(start, EventKind::TxnStart);
        let mut t = start;
        for k in self.ops {
            t += 1;
            push(t, k);
        }
        push(t + 1, EventKind::TxnEnd);
        p.cursor = t + 1;
        id
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(w: ClientId, s: u64) -> ValueId {
        ValueId::written(w, s)
    }

    #[test]
    fn txn_id_round_trips_through_text() {
        let id = TxnId::new(3, 17);
        assert_eq!(id.to_string().parse::<TxnId>(), Ok(id));
        assert_eq!(id.0.to_string().parse::<TxnId>(), Ok(id));
        assert!("T3".parse::<TxnId>().is_err());
    }

    #[test]
    fn program_order_edge() {
        let mut b = HistoryBuilder::new();
        b.txn(1).write("x", v(1, 0)).commit();
        b.txn(1).read("y", ValueId::Bottom).commit();
        let g = causal_precedes(&b.build()).unwrap();
        let w = g.find(OpKind::Write, "x", v(1, 0)).unwrap();
        let r = g.find(OpKind::Read, "y", ValueId::Bottom).unwrap();
        assert!(g.precedes(w, r));
        assert!(!g.precedes(r, w));
    }

    #[test]
    fn read_from_edge() {
        let mut b = HistoryBuilder::new();
        b.txn(1).write("x", v(1, 0)).commit();
        b.txn(2).read("x", v(1, 0)).commit();
        let g = causal_precedes(&b.build()).unwrap();
        let w = g.find(OpKind::Write, "x", v(1, 0)).unwrap();
        let r = g.find(OpKind::Read, "x", v(1, 0)).unwrap();
        assert!(g.precedes(w, r));
    }

    #[test]
    fn transitive_edge_through_other_object() {
        // C1: w(X)x then w(Y)y; C2: r(Y)y then r(X)x*
        let (x_old, x, y) = (v(0, 0), v(1, 0), v(1, 1));
        let mut b = HistoryBuilder::new();
        b.txn(0).write("X", x_old).commit();
        b.txn(1).write("X", x).commit();
        b.txn(1).write("Y", y).commit();
        b.txn(2).read("Y", y).commit();
        b.txn(2).read("X", x_old).commit();
        let g = causal_precedes(&b.build()).unwrap();
        let wx = g.find(OpKind::Write, "X", x).unwrap();
        let rx = g.find(OpKind::Read, "X", x_old).unwrap();
        assert!(g.precedes(wx, rx));
    }

    #[test]
    fn dangling_read_is_rejected() {
        let mut b = HistoryBuilder::new();
        b.txn(2).read("x", v(9, 9)).commit();
        assert!(matches!(
            causal_precedes(&b.build()),
            Err(HistoryError::DanglingRead { .. })
        ));
    }

    #[test]
    fn overlap_is_rejected() {
        let t0 = TxnId::new(1, 0);
        let t1 = TxnId::new(1, 1);
        let ev = |time, txn, kind| OpEvent {
            time,
            client: 1,
            txn,
            kind,
        };
        let h = History::from_events(vec![
            ev(1, t0, EventKind::TxnStart),
            ev(2, t1, EventKind::TxnStart),
            ev(
                3,
                t0,
                EventKind::ReadReturn {
                    object: "x".into(),
                    value: ValueId::Bottom,
                },
            ),
            ev(
                3,
                t1,
                EventKind::ReadReturn {
                    object: "x".into(),
                    value: ValueId::Bottom,
                },
            ),
            ev(4, t0, EventKind::TxnEnd),
            ev(5, t1, EventKind::TxnEnd),
        ]);
        assert!(matches!(
            h.transactions(),
            Err(HistoryError::ClientOverlap(..))
        ));
    }

    #[test]
    fn project_empty_and_interleaved() {
        assert!(project_client(&History::default(), 1).unwrap().is_empty());
        let mut b = HistoryBuilder::new();
        let t1 = b.txn(1).write("x", v(1, 0)).commit();
        let t3 = b.txn(2).read("x", v(1, 0)).commit();
        let t2 = b.txn(1).read("x", v(1, 0)).commit();
        let h = b.build();
        let ids: Vec<_> = project_client(&h, 1)
            .unwrap()
            .iter()
            .map(|t| t.id)
            .collect();
        assert_eq!(ids, vec![t1, t2]);
        assert_eq!(project_client(&h, 2).unwrap()[0].id, t3);
    }

    #[test]
    fn jsonl_round_trip_and_shape() {
        let mut b = HistoryBuilder::new();
        b.txn(1)
            .write("x", v(1, 0))
            .read("y", ValueId::Bottom)
            .commit();
        let h = b.build();
        let text = h.to_jsonl();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["kind"], "txn-start");
        assert!(first.get("object").is_none());
        let read: serde_json::Value = serde_json::from_str(text.lines().nth(2).unwrap()).unwrap();
        assert_eq!(read["value"]["bottom"], true);
        let back = History::read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn empty_object_name_rejected_on_parse() {
        let line = r#"{"time":2,"client":0,"txn":0,"kind":"write-ack","object":"","value":{"writer":0,"seq":0,"bottom":false}}"#;
        assert!(History::read_jsonl(line.as_bytes()).is_err());
    }
}
