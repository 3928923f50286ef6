//! Building blocks shared by the shipped protocols.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::history::{ClientId, ObjectId, ValueId};

/// Exact versions a second-round read is waiting for, per object.
pub type Wants = Vec<(ObjectId, Stamp)>;

/// Lamport stamp with the writing client as tie-breaker, so distinct writes
/// never share a stamp.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct Stamp {
    pub time: u64,
    pub writer: ClientId,
}

impl Stamp {
    pub const ZERO: Stamp = Stamp { time: 0, writer: 0 };

    pub fn new(time: u64, writer: ClientId) -> Self {
        Self { time, writer }
    }
}

/// Causal dependencies as the newest known stamp per object.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepContext(pub BTreeMap<ObjectId, Stamp>);

impl DepContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, o: &ObjectId) -> Stamp {
        self.0.get(o).copied().unwrap_or(Stamp::ZERO)
    }

    /// Raises the entry for `o` to at least `s`.
    pub fn bump(&mut self, o: &ObjectId, s: Stamp) {
        let e = self.0.entry(o.clone()).or_insert(Stamp::ZERO);
        if s > *e {
            *e = s;
        }
    }

    pub fn merge(&mut self, other: &DepContext) {
        for (o, s) in &other.0 {
            self.bump(o, *s);
        }
    }

    pub fn max_time(&self) -> u64 {
        self.0.values().map(|s| s.time).max().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ObjectId, &Stamp)> {
        self.0.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A version as returned to a reader: the value itself, its stamp, and the
/// stamps it depends on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadVersion {
    pub object: ObjectId,
    pub value: ValueId,
    pub stamp: Stamp,
    pub deps: DepContext,
}

/// One stored version of an object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionRecord {
    pub value: ValueId,
    pub stamp: Stamp,
    pub deps: DepContext,
    pub visible: bool,
}

impl VersionRecord {
    pub fn initial() -> Self {
        Self {
            value: ValueId::Bottom,
            stamp: Stamp::ZERO,
            deps: DepContext::new(),
            visible: true,
        }
    }

    pub fn to_read(&self, object: &ObjectId) -> ReadVersion {
        ReadVersion {
            object: object.clone(),
            value: self.value,
            stamp: self.stamp,
            deps: self.deps.clone(),
        }
    }
}

/// Multi-version store of one server, versions kept sorted by stamp.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionStore {
    pub objects: BTreeMap<ObjectId, Vec<VersionRecord>>,
}

impl VersionStore {
    pub fn versions(&mut self, o: &ObjectId) -> &mut Vec<VersionRecord> {
        self.objects
            .entry(o.clone())
            .or_insert_with(|| vec![VersionRecord::initial()])
    }

    pub fn insert(&mut self, o: &ObjectId, rec: VersionRecord) -> usize {
        let vs = self.versions(o);
        let pos = vs.partition_point(|v| v.stamp < rec.stamp);
        vs.insert(pos, rec);
        pos
    }

    /// Newest visible version.
    pub fn latest_visible(&mut self, o: &ObjectId) -> VersionRecord {
        self.versions(o)
            .iter()
            .rev()
            .find(|v| v.visible)
            .cloned()
            .expect("the initial version is always visible")
    }

    pub fn latest_visible_stamp(&self, o: &ObjectId) -> Stamp {
        self.objects
            .get(o)
            .and_then(|vs| vs.iter().rev().find(|v| v.visible))
            .map_or(Stamp::ZERO, |v| v.stamp)
    }

    pub fn find(&mut self, o: &ObjectId, stamp: Stamp) -> Option<&mut VersionRecord> {
        self.versions(o).iter_mut().find(|v| v.stamp == stamp)
    }

    /// Newest version with stamp at most `bound`, visible or not.
    pub fn at_most(&mut self, o: &ObjectId, bound: Stamp) -> VersionRecord {
        self.versions(o)
            .iter()
            .rev()
            .find(|v| v.stamp <= bound)
            .cloned()
            .expect("the initial version has the smallest stamp")
    }

    pub fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("store serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stamps_order_by_time_then_writer() {
        assert!(Stamp::new(1, 5) < Stamp::new(2, 0));
        assert!(Stamp::new(2, 0) < Stamp::new(2, 1));
    }

    #[test]
    fn dep_context_keeps_newest() {
        let x = ObjectId::new("x");
        let mut d = DepContext::new();
        d.bump(&x, Stamp::new(3, 0));
        d.bump(&x, Stamp::new(2, 9));
        assert_eq!(d.get(&x), Stamp::new(3, 0));
        assert_eq!(d.get(&ObjectId::new("y")), Stamp::ZERO);
    }

    #[test]
    fn store_orders_versions() {
        let x = ObjectId::new("x");
        let mut s = VersionStore::default();
        for t in [5, 2, 9] {
            s.insert(
                &x,
                VersionRecord {
                    value: ValueId::written(0, t),
                    stamp: Stamp::new(t, 0),
                    deps: DepContext::new(),
                    visible: t != 9,
                },
            );
        }
        assert_eq!(s.latest_visible(&x).stamp.time, 5);
        assert_eq!(s.at_most(&x, Stamp::new(4, 0)).stamp.time, 2);
        assert_eq!(s.at_most(&x, Stamp::new(0, 0)).value, ValueId::Bottom);
    }
}
