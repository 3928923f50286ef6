//! The contract between protocols and the simulator.
//!
//! Every protocol supplies client and server state machines. Handlers see
//! only their own state, the incoming message and a [`Ctx`] through which
//! they send messages, complete transactions and report visibility. Global
//! time is only readable by bindings that declare clock access.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::history::{ClientId, ObjectId, Tick, Transaction, TxnId, ValueId};
use crate::protocols::common::{DepContext, ReadVersion, Stamp};
use crate::protocols::fast_visible::OldTxTable;
use crate::protocols::timestamp::GlobalStamp;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ProcessId {
    Client(ClientId),
    Server(u32),
}

impl ProcessId {
    pub fn is_server(self) -> bool {
        matches!(self, Self::Server(_))
    }

    pub fn is_client(self) -> bool {
        matches!(self, Self::Client(_))
    }

    /// Dense encoding used to derive per-channel random streams.
    pub fn code(self) -> u64 {
        match self {
            Self::Client(c) => u64::from(c) << 1,
            Self::Server(s) => (u64::from(s) << 1) | 1,
        }
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Client(c) => write!(f, "c{c}"),
            Self::Server(s) => write!(f, "s{s}"),
        }
    }
}

impl FromStr for ProcessId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad process id {s:?}");
        let (role, idx) = s.split_at(s.char_indices().nth(1).map_or(s.len(), |(i, _)| i));
        let idx: u32 = idx.parse().map_err(|_| bad())?;
        match role {
            "c" => Ok(Self::Client(idx)),
            "s" => Ok(Self::Server(idx)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for ProcessId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProcessId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AckPhase {
    Prepared,
    Committed,
}

/// Every message exchanged by the shipped protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    RotReq {
        txn: TxnId,
        objects: Vec<ObjectId>,
        clock: u64,
    },
    RotResp {
        txn: TxnId,
        round: u8,
        versions: Vec<ReadVersion>,
    },
    RotReq2 {
        txn: TxnId,
        wants: Vec<(ObjectId, Stamp)>,
    },
    WritePrepare {
        txn: TxnId,
        writes: Vec<(ObjectId, ValueId)>,
        deps: DepContext,
        /// Objects written by the same transaction at any server.
        siblings: Vec<ObjectId>,
        participants: Vec<u32>,
        clock: u64,
    },
    WriteCommit {
        txn: TxnId,
        stamp: Stamp,
    },
    WriteAck {
        txn: TxnId,
        phase: AckPhase,
        stamp: Stamp,
    },
    Help {
        txn: TxnId,
        round: u32,
    },
    D1Write {
        txn: TxnId,
        object: ObjectId,
        value: ValueId,
        clock: u64,
        deps: DepContext,
    },
    D1Wack {
        txn: TxnId,
        object: ObjectId,
        stamp: Stamp,
    },
    D1RotReq {
        txn: TxnId,
        objects: Vec<ObjectId>,
        clock: u64,
        ctx: DepContext,
    },
    D1RotResp {
        txn: TxnId,
        versions: Vec<ReadVersion>,
        clock: u64,
    },
    VisReq {
        req: u64,
        wants: Vec<(ObjectId, Stamp)>,
        clock: u64,
    },
    VisResp {
        req: u64,
        oldtx: OldTxTable,
        clock: u64,
    },
    D2Read {
        txn: TxnId,
        stamp: GlobalStamp,
        objects: Vec<ObjectId>,
    },
    D2Write {
        txn: TxnId,
        stamp: GlobalStamp,
        writes: Vec<(ObjectId, ValueId)>,
    },
    D2Resp {
        txn: TxnId,
        reads: Vec<(ObjectId, ValueId)>,
        acked: Vec<ObjectId>,
    },
}

impl Payload {
    /// Stable kind name used in message logs.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::RotReq { .. } => "ROT_REQ",
            Self::RotResp { .. } => "ROT_RESP",
            Self::RotReq2 { .. } => "ROT_REQ2",
            Self::WritePrepare { .. } => "WRITE_PREPARE",
            Self::WriteCommit { .. } => "WRITE_COMMIT",
            Self::WriteAck { .. } => "WRITE_ACK",
            Self::Help { .. } => "HELP",
            Self::D1Write { .. } => "D1_WRITE",
            Self::D1Wack { .. } => "D1_WACK",
            Self::D1RotReq { .. } => "D1_ROT_REQ",
            Self::D1RotResp { .. } => "D1_ROT_RESP",
            Self::VisReq { .. } => "VIS_REQ",
            Self::VisResp { .. } => "VIS_RESP",
            Self::D2Read { .. } => "D2_READ",
            Self::D2Write { .. } => "D2_WRITE",
            Self::D2Resp { .. } => "D2_RESP",
        }
    }

    pub fn txn(&self) -> Option<TxnId> {
        match self {
            Self::RotReq { txn, .. }
            | Self::RotResp { txn, .. }
            | Self::RotReq2 { txn, .. }
            | Self::WritePrepare { txn, .. }
            | Self::WriteCommit { txn, .. }
            | Self::WriteAck { txn, .. }
            | Self::Help { txn, .. }
            | Self::D1Write { txn, .. }
            | Self::D1Wack { txn, .. }
            | Self::D1RotReq { txn, .. }
            | Self::D1RotResp { txn, .. }
            | Self::D2Read { txn, .. }
            | Self::D2Write { txn, .. }
            | Self::D2Resp { txn, .. } => Some(*txn),
            Self::VisReq { .. } | Self::VisResp { .. } => None,
        }
    }

    /// Object values a server reveals to a client in a read response.
    /// Dependency metadata travels as stamps only and is not counted.
    pub fn revealed_values(&self) -> Option<Vec<(ObjectId, ValueId)>> {
        match self {
            Self::RotResp { versions, .. } | Self::D1RotResp { versions, .. } => Some(
                versions
                    .iter()
                    .map(|v| (v.object.clone(), v.value))
                    .collect(),
            ),
            Self::D2Resp { reads, .. } if !reads.is_empty() => Some(reads.clone()),
            _ => None,
        }
    }
}

/// Objects-to-server map. Servers store disjoint object sets.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    map: BTreeMap<ObjectId, u32>,
}

impl Placement {
    pub fn new(map: BTreeMap<ObjectId, u32>) -> Self {
        Self { map }
    }

    /// `objects` objects named `o0, o1, ...` spread round-robin over `servers`.
    pub fn round_robin(objects: usize, servers: u32) -> Self {
        let map = (0..objects)
            .map(|i| (ObjectId::new(format!("o{i}")), (i as u32) % servers))
            .collect();
        Self { map }
    }

    pub fn server_of(&self, object: &ObjectId) -> Option<u32> {
        self.map.get(object).copied()
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectId> {
        self.map.keys()
    }

    pub fn objects_on(&self, server: u32) -> BTreeSet<ObjectId> {
        self.map
            .iter()
            .filter(|(_, s)| **s == server)
            .map(|(o, _)| o.clone())
            .collect()
    }

    pub fn servers(&self) -> BTreeSet<u32> {
        self.map.values().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Groups objects by the server that stores them.
    pub fn group<'a>(
        &self,
        objects: impl IntoIterator<Item = &'a ObjectId>,
    ) -> BTreeMap<u32, Vec<ObjectId>> {
        let mut out: BTreeMap<u32, Vec<ObjectId>> = BTreeMap::new();
        for o in objects {
            let s = self
                .server_of(o)
                .unwrap_or_else(|| panic!("object {o} is not placed"));
            out.entry(s).or_default().push(o.clone());
        }
        out
    }
}

/// Static configuration handed to every node when it is created.
#[derive(Clone, Debug)]
pub struct NodeEnv {
    pub placement: Arc<Placement>,
    /// Upper bound on message delay, used by the bounded-delay timestamp
    /// variant.
    pub delay_bound: Tick,
}

/// What a client hands back when a transaction returns: exactly one value
/// per read object and `ok` for each written object.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TxnOutcome {
    pub reads: BTreeMap<ObjectId, ValueId>,
    pub writes: BTreeSet<ObjectId>,
}

/// Side-effect collector passed to handlers.
#[derive(Debug)]
pub struct Ctx {
    me: ProcessId,
    now: Tick,
    clock_granted: bool,
    pub(crate) clock_denied: bool,
    pub(crate) outbox: Vec<(ProcessId, Payload)>,
    pub(crate) completed: Option<TxnOutcome>,
    pub(crate) visible: Vec<(ObjectId, ValueId)>,
    pub(crate) timers: Vec<(Tick, u64)>,
}

impl Ctx {
    pub(crate) fn new(me: ProcessId, now: Tick, clock_granted: bool) -> Self {
        Self {
            me,
            now,
            clock_granted,
            clock_denied: false,
            outbox: Vec::new(),
            completed: None,
            visible: Vec::new(),
            timers: Vec::new(),
        }
    }

    /// A context that is not attached to a simulator, for unit tests of
    /// handlers.
    pub fn detached(me: ProcessId, now: Tick) -> Self {
        Self::new(me, now, true)
    }

    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn send(&mut self, to: ProcessId, msg: Payload) {
        self.outbox.push((to, msg));
    }

    /// Reads the global clock. Only bindings declaring clock access may call
    /// this; any other call aborts the run with `ClockAccessDenied`.
    pub fn now(&mut self) -> Tick {
        if !self.clock_granted {
            self.clock_denied = true;
        }
        self.now
    }

    /// Schedules `on_timer(token)` at tick `at`. Requires clock access.
    pub fn set_timer(&mut self, at: Tick, token: u64) {
        if !self.clock_granted {
            self.clock_denied = true;
        }
        self.timers.push((at, token));
    }

    pub fn complete(&mut self, outcome: TxnOutcome) {
        assert!(self.completed.is_none(), "transaction completed twice");
        self.completed = Some(outcome);
    }

    /// Reports that `value` of `object` became visible at this server.
    pub fn mark_visible(&mut self, object: ObjectId, value: ValueId) {
        self.visible.push((object, value));
    }

    pub fn sent(&self) -> &[(ProcessId, Payload)] {
        &self.outbox
    }

    pub fn take_outcome(&mut self) -> Option<TxnOutcome> {
        self.completed.take()
    }
}

pub trait ClientNode: Send {
    fn on_request(&mut self, ctx: &mut Ctx, txn: &Transaction);
    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload);
    fn on_timer(&mut self, _ctx: &mut Ctx, _token: u64) {}
}

pub trait ServerNode: Send {
    fn on_message(&mut self, ctx: &mut Ctx, from: ProcessId, msg: Payload);
    fn on_timer(&mut self, _ctx: &mut Ctx, _token: u64) {}
    /// Deterministic rendering of the server state for state diffs.
    fn snapshot(&self) -> serde_json::Value;
}

/// Which transactions a protocol accepts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    /// Read-only transactions plus single-object writes outside transactions.
    Restricted,
    /// Arbitrary read/write transactions.
    Generic,
}

pub trait Protocol: Send + Sync {
    fn name(&self) -> &str;
    fn shape(&self) -> Shape;
    /// Whether read-only transactions are designed to finish in one round.
    fn fast_rots(&self) -> bool;
    fn clock_access(&self) -> bool {
        false
    }
    fn client(&self, id: ClientId, env: &NodeEnv) -> Box<dyn ClientNode>;
    fn server(&self, index: u32, env: &NodeEnv) -> Box<dyn ServerNode>;

    fn accepts(&self, txn: &Transaction) -> bool {
        match self.shape() {
            Shape::Generic => true,
            Shape::Restricted => {
                txn.writes.is_empty() || (txn.writes.len() == 1 && txn.reads.is_empty())
            }
        }
    }
}

pub type ProtocolHandle = Arc<dyn Protocol>;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("protocol {0:?} is already registered")]
    DuplicateName(String),
    #[error("unknown protocol {0:?}")]
    Unknown(String),
}

/// Protocols selectable by name.
#[derive(Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, ProtocolHandle>,
    aliases: BTreeMap<String, String>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// All shipped protocols.
    pub fn builtin() -> Self {
        use crate::protocols::*;
        let mut r = Self::new();
        let all: Vec<ProtocolHandle> = vec![
            Arc::new(slow::SlowTwoRound),
            Arc::new(naive::NaiveInvisible),
            Arc::new(fast_visible::FastVisible),
            Arc::new(timestamp::TsGlobal::plain()),
            Arc::new(timestamp::TsGlobal::bounded(None)),
            Arc::new(fast_generic::FastGeneric::new(
                fast_generic::HelpDepth::None,
            )),
            Arc::new(fast_generic::FastGeneric::new(
                fast_generic::HelpDepth::Unbounded,
            )),
        ];
        for p in all {
            let name = p.name().to_string();
            r.register(&name, p).expect("builtin names are unique");
        }
        r.aliases.insert("d1".into(), "fast-visible".into());
        r.aliases
            .insert("async-visible".into(), "fast-visible".into());
        r.aliases.insert("d2".into(), "ts-global".into());
        r.aliases.insert("d2-bounded".into(), "ts-global-2u".into());
        r.aliases.insert("slow2round".into(), "slow-2round".into());
        r
    }

    pub fn register(
        &mut self,
        name: &str,
        binding: ProtocolHandle,
    ) -> Result<ProtocolHandle, RegistryError> {
        if self.entries.contains_key(name) || self.aliases.contains_key(name) {
            return Err(RegistryError::DuplicateName(name.to_string()));
        }
        self.entries.insert(name.to_string(), binding.clone());
        Ok(binding)
    }

    pub fn get(&self, name: &str) -> Result<ProtocolHandle, RegistryError> {
        let key = self.aliases.get(name).map_or(name, String::as_str);
        self.entries
            .get(key)
            .cloned()
            .ok_or_else(|| RegistryError::Unknown(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn process_id_text_form() {
        for p in [ProcessId::Client(0), ProcessId::Server(12)] {
            assert_eq!(p.to_string().parse::<ProcessId>().unwrap(), p);
        }
        assert!("x1".parse::<ProcessId>().is_err());
        assert_eq!(
            serde_json::to_string(&ProcessId::Server(2)).unwrap(),
            "\"s2\""
        );
    }

    #[test]
    fn builtin_registry_contents() {
        let r = Registry::builtin();
        let names: BTreeSet<&str> = r.names().collect();
        for n in [
            "slow-2round",
            "fast-visible",
            "async-visible",
            "ts-global",
            "naive-invisible",
        ] {
            assert!(names.contains(n) || r.get(n).is_ok(), "missing {n}");
        }
        assert_eq!(r.get("d1").unwrap().name(), "fast-visible");
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut r = Registry::builtin();
        let p = r.get("slow-2round").unwrap();
        assert!(matches!(
            r.register("slow-2round", p.clone()),
            Err(RegistryError::DuplicateName(_))
        ));
        assert!(r.register("my-slow", p).is_ok());
        assert!(r.get("my-slow").is_ok());
    }

    #[test]
    fn restricted_shape_rejects_multi_writes() {
        let p = crate::protocols::naive::NaiveInvisible;
        let mut writes = BTreeMap::new();
        writes.insert(ObjectId::new("a"), ValueId::written(0, 0));
        let one = Transaction::new(TxnId::new(0, 0), 0, BTreeSet::new(), writes.clone()).unwrap();
        assert!(p.accepts(&one));
        writes.insert(ObjectId::new("b"), ValueId::written(0, 1));
        let two = Transaction::new(TxnId::new(0, 1), 0, BTreeSet::new(), writes).unwrap();
        assert!(!p.accepts(&two));
    }
}
