//! Brute-force reference for causal serializability, written without any
//! of the checker's data structures: op-level causality by Floyd-Warshall
//! over a boolean matrix, then every permutation of every client's
//! transaction set.

#![allow(clippy::needless_range_loop)]

use std::collections::BTreeMap;

use causalsim::history::{ClientId, EventKind, History, ObjectId, TxnId, ValueId};

#[derive(Clone)]
struct Op {
    txn: TxnId,
    client: ClientId,
    write: bool,
    object: ObjectId,
    value: ValueId,
}

#[derive(Clone, Default)]
struct Txn {
    client: ClientId,
    reads: Vec<(ObjectId, ValueId)>,
    writes: Vec<(ObjectId, ValueId)>,
}

fn ops_of(h: &History) -> Vec<Op> {
    let mut indexed: Vec<(usize, &causalsim::history::OpEvent)> =
        h.events.iter().enumerate().collect();
    indexed.sort_by_key(|(i, e)| (e.time, *i));
    indexed
        .into_iter()
        .filter_map(|(_, e)| match &e.kind {
            EventKind::ReadReturn { object, value } => Some(Op {
                txn: e.txn,
                client: e.client,
                write: false,
                object: object.clone(),
                value: *value,
            }),
            EventKind::WriteAck { object, value } => Some(Op {
                txn: e.txn,
                client: e.client,
                write: true,
                object: object.clone(),
                value: *value,
            }),
            _ => None,
        })
        .collect()
}

/// Transaction-level causal order: `before[a][b]` when some op of `a`
/// reaches some op of `b`, closed transitively.
fn txn_order(ops: &[Op], ids: &[TxnId]) -> Vec<Vec<bool>> {
    let n = ops.len();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            if ops[i].client == ops[j].client {
                reach[i][j] = true;
            }
        }
        for j in 0..n {
            if ops[i].write
                && !ops[j].write
                && ops[i].object == ops[j].object
                && ops[i].value == ops[j].value
                && !ops[j].value.is_bottom()
            {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let pos = |t: TxnId| ids.iter().position(|x| *x == t).expect("known txn");
    let m = ids.len();
    let mut before = vec![vec![false; m]; m];
    for i in 0..n {
        for j in 0..n {
            if reach[i][j] && ops[i].txn != ops[j].txn {
                before[pos(ops[i].txn)][pos(ops[j].txn)] = true;
            }
        }
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if before[i][k] && before[k][j] {
                    before[i][j] = true;
                }
            }
        }
    }
    before
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &x) in items.iter().enumerate() {
        let mut rest = items.to_vec();
        rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, x);
            out.push(p);
        }
    }
    out
}

/// Whether every client has a serialization of all writing transactions
/// plus its own that respects causality and explains its reads.
pub fn consistent(h: &History) -> bool {
    let ops = ops_of(h);
    let mut txns: BTreeMap<TxnId, Txn> = BTreeMap::new();
    for e in &h.events {
        let t = txns.entry(e.txn).or_default();
        t.client = e.client;
    }
    for op in &ops {
        let t = txns.get_mut(&op.txn).expect("op of a known txn");
        let entry = (op.object.clone(), op.value);
        if op.write {
            t.writes.push(entry);
        } else {
            t.reads.push(entry);
        }
    }
    let ids: Vec<TxnId> = txns.keys().copied().collect();
    let all: Vec<&Txn> = txns.values().collect();
    let before = txn_order(&ops, &ids);
    for i in 0..ids.len() {
        for j in 0..ids.len() {
            if i != j && before[i][j] && before[j][i] {
                return false;
            }
        }
    }
    let clients: Vec<ClientId> = {
        let mut c: Vec<ClientId> = all.iter().map(|t| t.client).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    clients.into_iter().all(|c| {
        let members: Vec<usize> = (0..ids.len())
            .filter(|&i| !all[i].writes.is_empty() || all[i].client == c)
            .collect();
        permutations(&members).into_iter().any(|order| {
            let respects = order
                .iter()
                .enumerate()
                .all(|(a, &x)| order[a + 1..].iter().all(|&y| !before[y][x]));
            if !respects {
                return false;
            }
            let mut store: BTreeMap<ObjectId, ValueId> = BTreeMap::new();
            for &x in &order {
                let t = all[x];
                if t.client == c {
                    for (o, v) in &t.reads {
                        if store.get(o).copied().unwrap_or(ValueId::Bottom) != *v {
                            return false;
                        }
                    }
                }
                for (o, v) in &t.writes {
                    store.insert(o.clone(), *v);
                }
            }
            true
        })
    })
}
