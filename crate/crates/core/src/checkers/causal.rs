//! Per-client transactional causal serialization.
//!
//! For each client the checker searches for a total order of every
//! write-containing transaction plus the client's own transactions in which
//! each of the client's reads returns the value of the last preceding write
//! to that object (or the initial value when there is none), and which
//! extends the causal order lifted to transactions.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CheckError, Verdict, Witness};
use crate::bits::BitMatrix;
use crate::history::{
    causal_precedes, ClientId, History, ObjectId, OpEvent, TxnId, TxnRecord, ValueId,
};

/// Largest `write transactions + client transactions` searched exhaustively.
pub const DEFAULT_BUDGET: usize = 12;

const CHECKER: &str = "causal";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum CausalWitness {
    /// Two transactions that causally precede each other.
    Cycle { first: TxnId, second: TxnId },
    /// A minimal set of transactions, with the causal order they inherit
    /// from the full history, for which `client` has no serialization.
    Unserializable {
        client: ClientId,
        events: Vec<OpEvent>,
        inherited_order: Vec<(TxnId, TxnId)>,
        reads: Vec<(TxnId, ObjectId, ValueId)>,
    },
}

#[derive(Clone, Debug, Default)]
pub struct CausalReport {
    pub pass: bool,
    /// One serialization per client, present when `pass` holds.
    pub serializations: BTreeMap<ClientId, Vec<TxnId>>,
    pub witness: Option<CausalWitness>,
}

impl CausalReport {
    pub fn verdict(&self) -> Verdict {
        match &self.witness {
            None => Verdict::pass(CHECKER),
            Some(w) => Verdict::fail(CHECKER, Witness::Causal(w.clone())),
        }
    }
}

/// Transactions plus the causal order between them.
#[derive(Clone)]
struct Problem {
    txns: Vec<TxnRecord>,
    before: BitMatrix,
}

impl Problem {
    fn build(h: &History) -> Result<Self, CheckError> {
        let txns = h.transactions()?;
        let graph = causal_precedes(h)?;
        let index: HashMap<TxnId, usize> =
            txns.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
        let owner: Vec<usize> = graph.ops.iter().map(|o| index[&o.txn]).collect();
        let mut before = BitMatrix::new(txns.len());
        for (a, b) in graph.edges() {
            if owner[a] != owner[b] {
                before.set(owner[a], owner[b]);
            }
        }
        before.close();
        Ok(Self { txns, before })
    }

    fn restrict(&self, keep: &[usize]) -> Self {
        let txns = keep.iter().map(|&i| self.txns[i].clone()).collect();
        let mut before = BitMatrix::new(keep.len());
        for (a, &i) in keep.iter().enumerate() {
            for (b, &j) in keep.iter().enumerate() {
                if self.before.get(i, j) {
                    before.set(a, b);
                }
            }
        }
        Self { txns, before }
    }

    fn cycle(&self) -> Option<(usize, usize)> {
        (0..self.txns.len()).find_map(|i| {
            (i + 1..self.txns.len())
                .find(|&j| self.before.get(i, j) && self.before.get(j, i))
                .map(|j| (i, j))
        })
    }

    fn members(&self, client: ClientId) -> Vec<usize> {
        (0..self.txns.len())
            .filter(|&i| self.txns[i].has_write() || self.txns[i].client == client)
            .collect()
    }

    fn clients(&self) -> BTreeSet<ClientId> {
        self.txns.iter().map(|t| t.client).collect()
    }

    fn client_load(&self, client: ClientId) -> usize {
        self.members(client).len()
    }
}

/// Exhaustive search over linear extensions, memoizing dead states by the
/// set of placed transactions and the last writer of every object.
struct Search<'a> {
    p: &'a Problem,
    members: Vec<usize>,
    preds: Vec<u64>,
    writes: Vec<Vec<usize>>,
    /// For the client's own transactions: (object, required last writer).
    needs: Vec<Vec<(usize, Option<u8>)>>,
    objects: usize,
    dead: HashSet<(u64, Vec<u8>)>,
}

const NONE: u8 = u8::MAX;

impl<'a> Search<'a> {
    fn new(p: &'a Problem, client: ClientId) -> Option<Self> {
        let members = p.members(client);
        assert!(members.len() < 64, "search is bounded by the budget");
        let mut obj_index: BTreeMap<&ObjectId, usize> = BTreeMap::new();
        for &m in &members {
            let t = &p.txns[m];
            for (o, _) in t.reads.iter().chain(&t.writes) {
                let n = obj_index.len();
                obj_index.entry(o).or_insert(n);
            }
        }
        let mut writer: HashMap<(&ObjectId, ValueId), u8> = HashMap::new();
        for (local, &m) in members.iter().enumerate() {
            for (o, v) in &p.txns[m].writes {
                writer.insert((o, *v), local as u8);
            }
        }
        let mut preds = vec![0u64; members.len()];
        let mut writes = Vec::with_capacity(members.len());
        let mut needs = Vec::with_capacity(members.len());
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                if p.before.get(j, i) {
                    preds[a] |= 1 << b;
                }
            }
            let t = &p.txns[i];
            writes.push(t.writes.iter().map(|(o, _)| obj_index[o]).collect());
            let mut need = Vec::new();
            if t.client == client {
                for (o, v) in &t.reads {
                    let req = match v {
                        ValueId::Bottom => None,
                        _ => match writer.get(&(o, *v)) {
                            Some(&w) if w as usize != a => Some(w),
                            // The value's writer is absent or is the reader
                            // itself, so no order can satisfy this read.
                            _ => return None,
                        },
                    };
                    need.push((obj_index[o], req));
                }
            }
            needs.push(need);
        }
        Some(Self {
            p,
            members,
            preds,
            writes,
            needs,
            objects: obj_index.len(),
            dead: HashSet::new(),
        })
    }

    fn run(&mut self) -> Option<Vec<TxnId>> {
        let mut last = vec![NONE; self.objects];
        let mut order = Vec::with_capacity(self.members.len());
        if self.dfs(0, &mut last, &mut order) {
            Some(
                order
                    .into_iter()
                    .map(|a: usize| self.p.txns[self.members[a]].id)
                    .collect(),
            )
        } else {
            None
        }
    }

    fn dfs(&mut self, placed: u64, last: &mut Vec<u8>, order: &mut Vec<usize>) -> bool {
        let n = self.members.len();
        if order.len() == n {
            return true;
        }
        if self.dead.contains(&(placed, last.clone())) {
            return false;
        }
        for a in 0..n {
            if placed & (1 << a) != 0 || self.preds[a] & !placed != 0 {
                continue;
            }
            let ok = self.needs[a].iter().all(|&(o, req)| match req {
                None => last[o] == NONE,
                Some(w) => last[o] == w,
            });
            if !ok {
                continue;
            }
            let saved: Vec<(usize, u8)> = self.writes[a].iter().map(|&o| (o, last[o])).collect();
            for &o in &self.writes[a] {
                last[o] = a as u8;
            }
            order.push(a);
            if self.dfs(placed | (1 << a), last, order) {
                return true;
            }
            order.pop();
            for (o, v) in saved {
                last[o] = v;
            }
        }
        self.dead.insert((placed, last.clone()));
        false
    }
}

fn serialize(p: &Problem, client: ClientId) -> Option<Vec<TxnId>> {
    Search::new(p, client)?.run()
}

fn check_problem(p: &Problem, budget: usize) -> Result<CausalReport, CheckError> {
    if let Some((i, j)) = p.cycle() {
        return Ok(CausalReport {
            pass: false,
            serializations: BTreeMap::new(),
            witness: Some(CausalWitness::Cycle {
                first: p.txns[i].id,
                second: p.txns[j].id,
            }),
        });
    }
    let clients = p.clients();
    let needed = clients.iter().map(|&c| p.client_load(c)).max().unwrap_or(0);
    if needed > budget {
        return Err(CheckError::BudgetExceeded { needed, budget });
    }
    let mut serializations = BTreeMap::new();
    for c in clients {
        match serialize(p, c) {
            Some(order) => {
                serializations.insert(c, order);
            }
            None => {
                return Ok(CausalReport {
                    pass: false,
                    serializations: BTreeMap::new(),
                    witness: Some(minimize(p, c)),
                })
            }
        }
    }
    Ok(CausalReport {
        pass: true,
        serializations,
        witness: None,
    })
}

/// Drops transactions one at a time while the client stays unserializable,
/// never dropping a write some kept transaction reads from.
fn minimize(p: &Problem, client: ClientId) -> CausalWitness {
    let mut keep: Vec<usize> = p.members(client);
    let mut i = keep.len();
    while i > 0 {
        i -= 1;
        let cand = keep[i];
        let t = &p.txns[cand];
        let rest: Vec<usize> = keep.iter().copied().filter(|&k| k != cand).collect();
        if !rest.iter().any(|&k| p.txns[k].client == client) {
            continue;
        }
        let read_from = rest.iter().any(|&k| {
            p.txns[k]
                .reads
                .iter()
                .any(|r| t.writes.iter().any(|w| w == r && !w.1.is_bottom()))
        });
        if read_from {
            continue;
        }
        if serialize(&p.restrict(&rest), client).is_none() {
            keep = rest;
        }
    }
    let sub = p.restrict(&keep);
    let mut inherited_order = Vec::new();
    for a in 0..sub.txns.len() {
        for b in 0..sub.txns.len() {
            if sub.before.get(a, b) {
                inherited_order.push((sub.txns[a].id, sub.txns[b].id));
            }
        }
    }
    let reads = sub
        .txns
        .iter()
        .filter(|t| t.client == client)
        .flat_map(|t| t.reads.iter().map(|(o, v)| (t.id, o.clone(), *v)))
        .collect();
    CausalWitness::Unserializable {
        client,
        events: events_of(&sub.txns),
        inherited_order,
        reads,
    }
}

fn events_of(txns: &[TxnRecord]) -> Vec<OpEvent> {
    use crate::history::EventKind;
    let mut out = Vec::new();
    for t in txns {
        let ev = |time, kind| OpEvent {
            time,
            client: t.client,
            txn: t.id,
            kind,
        };
        out.push(ev(t.start, EventKind::TxnStart));
        // Valid transactions span at least two ticks.
        let mid = t.start + 1;
        for (o, v) in &t.reads {
            out.push(ev(
                mid,
                EventKind::ReadReturn {
                    object: o.clone(),
                    value: *v,
                },
            ));
        }
        for (o, v) in &t.writes {
            out.push(ev(
                mid,
                EventKind::WriteAck {
                    object: o.clone(),
                    value: *v,
                },
            ));
        }
        out.push(ev(t.end, EventKind::TxnEnd));
    }
    out.sort_by_key(|e| e.time);
    out
}

/// Checks `h` exhaustively with the default budget.
pub fn check_causal_serialization(h: &History) -> Result<Verdict, CheckError> {
    Ok(check_causal_with_budget(h, DEFAULT_BUDGET)?.verdict())
}

pub fn check_causal_with_budget(h: &History, budget: usize) -> Result<CausalReport, CheckError> {
    check_problem(&Problem::build(h)?, budget)
}

/// Re-runs a witness on its own: rebuilds the sub-history, adds the
/// inherited order, and reports whether the client is still
/// unserializable.
pub fn replay_witness(w: &CausalWitness) -> Result<bool, CheckError> {
    match w {
        CausalWitness::Cycle { .. } => Ok(true),
        CausalWitness::Unserializable {
            client,
            events,
            inherited_order,
            ..
        } => {
            let h = History::from_events(events.clone());
            let txns = h.transactions()?;
            let index: HashMap<TxnId, usize> =
                txns.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
            let mut before = BitMatrix::new(txns.len());
            for (a, b) in inherited_order {
                let (Some(&i), Some(&j)) = (index.get(a), index.get(b)) else {
                    return Err(CheckError::UnknownTxn(*a));
                };
                before.set(i, j);
            }
            before.close();
            let p = Problem { txns, before };
            if p.cycle().is_some() {
                return Ok(true);
            }
            Ok(serialize(&p, *client).is_none())
        }
    }
}

/// Validates one client's serialization clause by clause.
pub fn validate_serialization(
    h: &History,
    client: ClientId,
    order: &[TxnId],
) -> Result<(), String> {
    let p = Problem::build(h).map_err(|e| e.to_string())?;
    let expected: BTreeSet<TxnId> = p.members(client).iter().map(|&i| p.txns[i].id).collect();
    let given: BTreeSet<TxnId> = order.iter().copied().collect();
    if expected != given || given.len() != order.len() {
        return Err(
            "order must list every write transaction and the client's own exactly once".into(),
        );
    }
    let index: HashMap<TxnId, usize> = p.txns.iter().enumerate().map(|(i, t)| (t.id, i)).collect();
    let pos: HashMap<TxnId, usize> = order.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    for a in order {
        for b in order {
            if p.before.get(index[a], index[b]) && pos[a] > pos[b] {
                return Err(format!("{a} causally precedes {b} but is ordered after it"));
            }
        }
    }
    let mut last: HashMap<&ObjectId, ValueId> = HashMap::new();
    for id in order {
        let t = &p.txns[index[id]];
        if t.client == client {
            for (o, v) in &t.reads {
                let seen = last.get(o).copied().unwrap_or(ValueId::Bottom);
                if seen != *v {
                    return Err(format!(
                        "{id} reads {o}={v} but the last preceding write gives {seen}"
                    ));
                }
            }
        }
        for (o, v) in &t.writes {
            last.insert(o, *v);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SampleOptions {
    /// Consecutive transactions of one client checked together.
    pub window: usize,
    pub budget: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            window: 4,
            budget: DEFAULT_BUDGET,
        }
    }
}

/// Checks windows of each client's transactions against the writes they
/// can observe, keeping the causal order of the full history. Every client
/// transaction falls in some window. A pass is a necessary condition for
/// the full history to pass; a failure is a genuine violation.
pub fn check_sampled(h: &History, opts: SampleOptions) -> Result<Verdict, CheckError> {
    let p = Problem::build(h)?;
    if let Some((i, j)) = p.cycle() {
        return Ok(Verdict::fail(
            CHECKER,
            Witness::Causal(CausalWitness::Cycle {
                first: p.txns[i].id,
                second: p.txns[j].id,
            }),
        ));
    }
    let mut writer: HashMap<(&ObjectId, ValueId), usize> = HashMap::new();
    for (i, t) in p.txns.iter().enumerate() {
        for (o, v) in &t.writes {
            writer.insert((o, *v), i);
        }
    }
    for c in p.clients() {
        let own: Vec<usize> = (0..p.txns.len())
            .filter(|&i| p.txns[i].client == c)
            .collect();
        let mut start = 0;
        while start < own.len() {
            let mut len = opts.window.max(1).min(own.len() - start);
            loop {
                let window = &own[start..start + len];
                let keep = sample_members(&p, &writer, window, opts.budget);
                let sub = p.restrict(&keep);
                if keep.len() <= opts.budget || len == 1 {
                    if sub.client_load(c) > opts.budget {
                        return Err(CheckError::BudgetExceeded {
                            needed: sub.client_load(c),
                            budget: opts.budget,
                        });
                    }
                    if serialize(&sub, c).is_none() {
                        return Ok(Verdict::fail(CHECKER, Witness::Causal(minimize(&sub, c))));
                    }
                    break;
                }
                len -= 1;
            }
            start += len;
        }
    }
    Ok(Verdict::pass(CHECKER))
}

/// Window transactions, the writes they read (transitively through other
/// kept writes), then as many other writes to the window's read objects as
/// fit, newest causal predecessors first.
fn sample_members(
    p: &Problem,
    writer: &HashMap<(&ObjectId, ValueId), usize>,
    window: &[usize],
    budget: usize,
) -> Vec<usize> {
    let mut keep: BTreeSet<usize> = window.iter().copied().collect();
    let mut stack: Vec<usize> = window.to_vec();
    while let Some(i) = stack.pop() {
        for (o, v) in &p.txns[i].reads {
            if let Some(&w) = writer.get(&(o, *v)) {
                if keep.insert(w) {
                    stack.push(w);
                }
            }
        }
    }
    let read_objects: BTreeSet<&ObjectId> = window
        .iter()
        .flat_map(|&i| p.txns[i].reads.iter().map(|(o, _)| o))
        .collect();
    let mut extra: Vec<usize> = (0..p.txns.len())
        .filter(|i| !keep.contains(i))
        .filter(|&i| {
            p.txns[i]
                .writes
                .iter()
                .any(|(o, _)| read_objects.contains(o))
                && window.iter().any(|&w| p.before.get(i, w))
        })
        .collect();
    extra.reverse();
    for i in extra {
        if keep.len() >= budget {
            break;
        }
        let closed = p.txns[i]
            .reads
            .iter()
            .all(|(o, v)| writer.get(&(o, *v)).is_none_or(|w| keep.contains(w)));
        if closed {
            keep.insert(i);
        }
    }
    keep.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::HistoryBuilder;

    fn v(c: u32, s: u64) -> ValueId {
        ValueId::written(c, s)
    }

    #[test]
    fn empty_history_passes() {
        let h = History::default();
        assert!(check_causal_serialization(&h).unwrap().pass);
    }

    #[test]
    fn read_your_write_passes_and_validates() {
        let mut b = HistoryBuilder::new();
        b.txn(0).write("x", v(0, 1)).commit();
        b.txn(0).read("x", v(0, 1)).commit();
        let h = b.build();
        let r = check_causal_with_budget(&h, DEFAULT_BUDGET).unwrap();
        assert!(r.pass);
        for (c, order) in &r.serializations {
            validate_serialization(&h, *c, order).unwrap();
        }
    }

    #[test]
    fn stale_read_after_own_write_fails() {
        let mut b = HistoryBuilder::new();
        b.txn(0).write("x", v(0, 1)).commit();
        b.txn(0).read("x", ValueId::Bottom).commit();
        let r = check_causal_with_budget(&b.build(), DEFAULT_BUDGET).unwrap();
        assert!(!r.pass);
        assert!(replay_witness(r.witness.as_ref().unwrap()).unwrap());
    }

    #[test]
    fn mixed_pair_after_fresh_pair_fails() {
        let mut b = HistoryBuilder::new();
        b.txn(0).write("x", v(0, 1)).write("y", v(0, 2)).commit();
        b.txn(1)
            .read("x", ValueId::Bottom)
            .read("y", v(0, 2))
            .commit();
        let r = check_causal_with_budget(&b.build(), DEFAULT_BUDGET).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn budget_is_enforced() {
        let mut b = HistoryBuilder::new();
        for i in 0..13 {
            b.txn(0).write("x", v(0, i)).commit();
        }
        assert!(matches!(
            check_causal_serialization(&b.build()),
            Err(CheckError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn sampled_accepts_long_valid_history() {
        let mut b = HistoryBuilder::new();
        for i in 0..30 {
            b.txn(0).write("x", v(0, i)).commit();
            b.txn(1).read("x", v(0, i)).commit();
        }
        let h = b.build();
        assert!(check_sampled(&h, SampleOptions::default()).unwrap().pass);
    }

    #[test]
    fn sampled_finds_regression() {
        let mut b = HistoryBuilder::new();
        for i in 0..10 {
            b.txn(0).write("x", v(0, i)).commit();
        }
        b.txn(1).read("x", v(0, 9)).commit();
        b.txn(1).read("x", v(0, 3)).commit();
        let h = b.build();
        assert!(!check_sampled(&h, SampleOptions::default()).unwrap().pass);
    }
}
