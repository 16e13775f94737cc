//! Temporal knowledge graph primitives: ids, quadruples, vocabularies and a
//! time-indexed adjacency.

mod graph;
mod io;
mod vocab;

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use graph::{HistoryWindow, Neighbor, TemporalKG};
pub use io::{
    load_events, parse_quadruple_line, read_quads, write_quads, ParseMode, TimeFormat,
};
pub use vocab::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

/// Integer tick in the dataset's time granularity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timestamp(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One timestamped event `(subject, relation, object, time)`.
///
/// Ordering is by `(time, subject, relation, object)`, the canonical order
/// used for every sorted list of quadruples in this crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Quadruple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
    pub time: Timestamp,
}

impl Quadruple {
    pub fn new(subject: u32, relation: u32, object: u32, time: u32) -> Self {
        Quadruple {
            subject: EntityId(subject),
            relation: RelationId(relation),
            object: EntityId(object),
            time: Timestamp(time),
        }
    }

    fn key(&self) -> (Timestamp, EntityId, RelationId, EntityId) {
        (self.time, self.subject, self.relation, self.object)
    }
}

impl Ord for Quadruple {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Quadruple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KgError {
    #[error("malformed line: expected 4 tab-separated fields, found {0}")]
    MalformedLine(usize),
    #[error("unknown {kind} symbol {name:?}")]
    UnknownSymbol { kind: &'static str, name: String },
    #[error("time field {0:?} is not a non-negative integer")]
    NonNumericTime(String),
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<KgError>,
    },
    #[error("duplicate {kind} name {name:?} in vocabulary")]
    DuplicateName { kind: &'static str, name: String },
    #[error("{0}")]
    Io(String),
    #[error("invalid vocabulary file: {0}")]
    BadVocab(String),
}

impl From<std::io::Error> for KgError {
    fn from(e: std::io::Error) -> Self {
        KgError::Io(e.to_string())
    }
}

/// Sorted, duplicate-free copy of `quads`.
pub fn deduplicate(quads: &[Quadruple]) -> Vec<Quadruple> {
    let mut out = quads.to_vec();
    out.sort_unstable();
    out.dedup();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use std::collections::HashSet;

    #[test]
    fn dedup_keeps_one_copy_in_sorted_order() {
        let q = Quadruple::new(1, 0, 2, 5);
        let q2 = Quadruple::new(0, 0, 2, 3);
        assert_eq!(deduplicate(&[q, q, q2]), vec![q2, q]);
        assert!(deduplicate(&[]).is_empty());
    }

    #[test]
    fn dedup_matches_hash_set_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut quads: Vec<Quadruple> = (0..900)
            .map(|_| Quadruple::new(rng.gen_range(0..30), rng.gen_range(0..6), rng.gen_range(0..30), rng.gen_range(0..40)))
            .collect();
        for i in 0..100 {
            let dup = quads[(i * 7) % 900];
            quads.push(dup);
        }
        let distinct: HashSet<_> = quads.iter().copied().collect();
        let out = deduplicate(&quads);
        assert_eq!(out.len(), distinct.len());
        assert!(out.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn dedup_is_idempotent(raw in proptest::collection::vec((0u32..5, 0u32..3, 0u32..5, 0u32..4), 0..60)) {
            let quads: Vec<_> = raw.into_iter().map(|(s, r, o, t)| Quadruple::new(s, r, o, t)).collect();
            let once = deduplicate(&quads);
            prop_assert_eq!(deduplicate(&once), once);
        }
    }
}
