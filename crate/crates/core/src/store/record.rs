use std::collections::HashMap;
use std::fmt;

use crate::consistency::DataContext;
use crate::topology::NodeIx;

/// Total order on writes: counter first, then the writing coordinator.
///
/// Node indices follow node-id order, so the tiebreak is the writer's id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Version {
    pub counter: u64,
    pub writer: NodeIx,
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.counter, self.writer)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VersionedRecord {
    pub key: String,
    /// `None` marks a tombstone.
    pub value: Option<Vec<u8>>,
    pub version: Version,
    pub data_ctx: DataContext,
}

impl VersionedRecord {
    pub fn is_tombstone(&self) -> bool {
        self.value.is_none()
    }
}

/// One node's durable replica contents. Keeps the highest version seen per
/// key.
#[derive(Debug, Clone, Default)]
pub struct ReplicaStore {
    records: HashMap<String, VersionedRecord>,
}

impl ReplicaStore {
    /// Stores `record` unless an equal or newer version is already present.
    /// Returns whether the stored record changed.
    pub fn apply(&mut self, record: VersionedRecord) -> bool {
        match self.records.get(&record.key) {
            Some(current) if current.version >= record.version => false,
            _ => {
                self.records.insert(record.key.clone(), record);
                true
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&VersionedRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(counter: u64, writer: NodeIx, value: &str) -> VersionedRecord {
        VersionedRecord {
            key: "k".into(),
            value: Some(value.as_bytes().to_vec()),
            version: Version { counter, writer },
            data_ctx: DataContext::default(),
        }
    }

    #[test]
    fn newer_wins_older_ignored() {
        let mut store = ReplicaStore::default();
        assert!(store.apply(rec(2, 0, "b")));
        assert!(!store.apply(rec(1, 5, "a")));
        assert!(!store.apply(rec(2, 0, "b")));
        assert!(store.apply(rec(2, 1, "c")));
        assert_eq!(store.get("k").unwrap().value.as_deref(), Some(&b"c"[..]));
    }

    #[test]
    fn tombstone_dominates_by_version() {
        let mut store = ReplicaStore::default();
        store.apply(rec(1, 0, "a"));
        let mut tomb = rec(2, 0, "");
        tomb.value = None;
        store.apply(tomb);
        assert!(store.get("k").unwrap().is_tombstone());
        store.apply(rec(1, 3, "late"));
        assert!(store.get("k").unwrap().is_tombstone());
    }

    proptest! {
        // Any delivery order of the same set of writes converges to the
        // maximum version, and the stored version never decreases.
        #[test]
        fn order_independent_and_monotone(
            (writes, shuffled) in prop::collection::vec((0u64..20, 0usize..4), 1..30)
                .prop_flat_map(|w| (Just(w.clone()), Just(w).prop_shuffle())),
        ) {
            let mut a = ReplicaStore::default();
            let mut b = ReplicaStore::default();
            let mut last = None;
            for &(c, w) in &writes {
                a.apply(rec(c, w, &format!("{c}/{w}")));
                let now = a.get("k").unwrap().version;
                prop_assert!(last.is_none_or(|l| now >= l));
                last = Some(now);
            }
            for &(c, w) in &shuffled {
                b.apply(rec(c, w, &format!("{c}/{w}")));
            }
            let max = writes.iter().map(|&(counter, writer)| Version { counter, writer }).max().unwrap();
            prop_assert_eq!(a.get("k"), b.get("k"));
            prop_assert_eq!(a.get("k").unwrap().version, max);
        }
    }
}
