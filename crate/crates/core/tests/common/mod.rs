#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;

use causalsim::history::{ClientId, History, HistoryBuilder, ValueId};
use rand::seq::SliceRandom;
use rand::Rng;

const OBJECTS: [&str; 3] = ["x", "y", "z"];

struct Plan {
    client: ClientId,
    reads: Vec<&'static str>,
    writes: Vec<(&'static str, ValueId)>,
}

/// Random history of at most `max_txns` transactions over three objects.
///
/// Reads mostly return the value a serial execution would give, and
/// otherwise any value of the object written anywhere in the history
/// (including later), so the output mixes consistent histories with stale
/// reads, causal cycles and torn transactions.
pub fn random_history<R: Rng>(rng: &mut R, max_txns: usize, honest: f64) -> History {
    let n = rng.gen_range(1..=max_txns);
    let mut seq: BTreeMap<ClientId, u64> = BTreeMap::new();
    let plans: Vec<Plan> = (0..n)
        .map(|_| {
            let client = rng.gen_range(0..3);
            let mut objs = OBJECTS.to_vec();
            objs.shuffle(rng);
            let touched = rng.gen_range(1..=objs.len());
            let split = rng.gen_range(0..=touched);
            let reads = objs[..split].to_vec();
            let writes = objs[split..touched]
                .iter()
                .map(|o| {
                    let s = seq.entry(client).or_default();
                    *s += 1;
                    (*o, ValueId::written(client, *s))
                })
                .collect();
            Plan {
                client,
                reads,
                writes,
            }
        })
        .collect();
    let mut all: BTreeMap<&str, Vec<ValueId>> = BTreeMap::new();
    for p in &plans {
        for (o, v) in &p.writes {
            all.entry(o).or_default().push(*v);
        }
    }
    let mut store: BTreeMap<&str, ValueId> = BTreeMap::new();
    let mut b = HistoryBuilder::new();
    for p in &plans {
        let mut t = b.txn(p.client);
        for o in &p.reads {
            let serial = store.get(o).copied().unwrap_or(ValueId::Bottom);
            let v = if rng.gen_bool(honest) {
                serial
            } else {
                let mut choices = vec![ValueId::Bottom];
                choices.extend(all.get(o).into_iter().flatten().copied());
                let own: Vec<ValueId> = p.writes.iter().map(|(_, v)| *v).collect();
                choices.retain(|v| !own.contains(v));
                *choices.choose(rng).expect("bottom is always there")
            };
            t = t.read(o, v);
        }
        for (o, v) in &p.writes {
            t = t.write(o, *v);
            store.insert(o, *v);
        }
        t.commit();
    }
    b.build()
}
