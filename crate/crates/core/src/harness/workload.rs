//! Seeded random closed-loop workloads.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::history::{ClientId, ObjectId, Tick, Transaction, TxnId, ValueId};
use crate::simnet::{Schedule, Workload, World};

fn default_objects() -> usize {
    6
}
fn default_rot_size() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_think() -> Tick {
    3
}
fn default_delay_min() -> Tick {
    1
}
fn default_delay_max() -> Tick {
    10
}
fn default_horizon() -> Tick {
    1_000_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub clients: u32,
    pub servers: u32,
    #[serde(default = "default_objects")]
    pub objects: usize,
    pub ops_per_client: usize,
    pub write_ratio: f64,
    #[serde(default = "default_rot_size")]
    pub rot_size: usize,
    /// Objects per write transaction.
    #[serde(default = "default_one")]
    pub wot_size: usize,
    pub seed: u64,
    #[serde(default = "default_think")]
    pub think_max: Tick,
    #[serde(default = "default_delay_min")]
    pub delay_min: Tick,
    #[serde(default = "default_delay_max")]
    pub delay_max: Tick,
    #[serde(default = "default_horizon")]
    pub horizon: Tick,
    /// Issue one read of every object after quiescence.
    #[serde(default = "default_true")]
    pub probe: bool,
}

fn default_true() -> bool {
    true
}

impl WorkloadSpec {
    pub fn new(
        clients: u32,
        servers: u32,
        ops_per_client: usize,
        write_ratio: f64,
        seed: u64,
    ) -> Self {
        Self {
            clients,
            servers,
            objects: default_objects(),
            ops_per_client,
            write_ratio,
            rot_size: default_rot_size(),
            wot_size: 1,
            seed,
            think_max: default_think(),
            delay_min: default_delay_min(),
            delay_max: default_delay_max(),
            horizon: default_horizon(),
            probe: true,
        }
    }

    pub fn world(&self) -> World {
        World::new(self.servers, self.objects)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule::random(self.seed, self.delay_min, self.delay_max)
    }

    /// Client id used by the post-quiescence probe.
    pub fn probe_client(&self) -> ClientId {
        self.clients
    }

    pub fn objects(&self) -> Vec<ObjectId> {
        (0..self.objects)
            .map(|i| ObjectId::new(format!("o{i}")))
            .collect()
    }

    /// The workload with and without one extra read of every object issued
    /// at `at` by a client of its own, for paired visibility runs.
    pub fn visibility_pair(&self, at: Tick) -> (Workload, Workload, TxnId) {
        let without = self.workload();
        let mut with = without.clone();
        let c = self.clients + 1;
        let id = TxnId::new(c, 0);
        let txn = Transaction::new(id, c, self.objects().into_iter().collect(), BTreeMap::new())
            .expect("non-empty");
        with.push(txn, at, 0);
        (with, without, id)
    }

    pub fn workload(&self) -> Workload {
        let objects = self.objects();
        let mut w = Workload::new();
        for c in 0..self.clients {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (u64::from(c) << 40) ^ 0x5eed);
            for i in 0..self.ops_per_client {
                let id = TxnId::new(c, i as u32);
                let is_write = rng.gen_bool(self.write_ratio.clamp(0.0, 1.0));
                let size = if is_write {
                    self.wot_size
                } else {
                    self.rot_size
                };
                let pick: Vec<ObjectId> =
                    sample(&mut rng, objects.len(), size.clamp(1, objects.len()))
                        .into_iter()
                        .map(|k| objects[k].clone())
                        .collect();
                let (reads, writes) = if is_write {
                    let writes: BTreeMap<ObjectId, ValueId> = pick
                        .into_iter()
                        .enumerate()
                        .map(|(k, o)| (o, ValueId::written(c, (i * 64 + k) as u64)))
                        .collect();
                    (BTreeSet::new(), writes)
                } else {
                    (pick.into_iter().collect(), BTreeMap::new())
                };
                let think = rng.gen_range(0..=self.think_max);
                let txn = Transaction::new(id, c, reads, writes).expect("non-empty");
                w.push(txn, 0, think);
            }
        }
        if self.probe {
            let c = self.probe_client();
            let txn = Transaction::new(
                TxnId::new(c, 0),
                c,
                objects.into_iter().collect(),
                BTreeMap::new(),
            )
            .expect("non-empty");
            w.probe(txn);
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn workload_is_seeded() {
        let s = WorkloadSpec::new(3, 2, 20, 0.3, 9);
        assert_eq!(s.workload(), s.workload());
        let other = WorkloadSpec {
            seed: 10,
            ..s.clone()
        };
        assert_ne!(s.workload(), other.workload());
    }

    #[test]
    fn shapes_follow_spec() {
        let s = WorkloadSpec::new(2, 2, 50, 0.5, 1);
        let w = s.workload();
        for t in w.transactions() {
            if t.is_read_only() {
                assert!(t.reads.len() == 3 || t.client == s.probe_client());
            } else {
                assert_eq!(t.writes.len(), 1);
                assert!(t.reads.is_empty());
            }
        }
        assert_eq!(w.after_quiescence.len(), 1);
    }
}
