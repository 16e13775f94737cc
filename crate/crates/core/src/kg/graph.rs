use fnv::FnvHashMap;
use serde::{Deserialize, Serialize};

use super::{EntityId, Quadruple, RelationId, Timestamp};

/// One adjacency entry `(relation, neighbor)`.
pub type Neighbor = (RelationId, EntityId);

/// The `ℓ` snapshots preceding a query time `t`, oldest first: snapshot `k`
/// holds the neighbors at `τ = t − ℓ + k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub time: Timestamp,
    pub snapshots: Vec<Vec<Neighbor>>,
}

impl HistoryWindow {
    pub fn empty(time: Timestamp, ell: usize) -> Self {
        HistoryWindow {
            time,
            snapshots: vec![Vec::new(); ell],
        }
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn num_pairs(&self) -> usize {
        self.snapshots.iter().map(Vec::len).sum()
    }
}

/// Immutable temporal graph with a `(entity, time) → neighbors` index.
///
/// Every quadruple `(s, r, o, t)` contributes `(r, o)` to `s` at `t` and
/// `(r⁻¹, s)` to `o` at `t`, where `r⁻¹ = r + num_relations`.
#[derive(Clone, Debug)]
pub struct TemporalKG {
    quads: Vec<Quadruple>,
    num_entities: usize,
    num_relations: usize,
    by_entity_time: FnvHashMap<(EntityId, Timestamp), Vec<Neighbor>>,
}

impl TemporalKG {
    /// `num_relations` is the base relation count; inverse ids occupy
    /// `num_relations..2 * num_relations`.
    pub fn new(mut quads: Vec<Quadruple>, num_entities: usize, num_relations: usize) -> Self {
        quads.sort();
        let mut by_entity_time: FnvHashMap<(EntityId, Timestamp), Vec<Neighbor>> = FnvHashMap::default();
        for q in &quads {
            by_entity_time
                .entry((q.subject, q.time))
                .or_default()
                .push((q.relation, q.object));
            by_entity_time
                .entry((q.object, q.time))
                .or_default()
                .push((RelationId(q.relation.0 + num_relations as u32), q.subject));
        }
        for list in by_entity_time.values_mut() {
            list.sort_unstable();
        }
        TemporalKG {
            quads,
            num_entities,
            num_relations,
            by_entity_time,
        }
    }

    pub fn quads(&self) -> &[Quadruple] {
        &self.quads
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Relation ids including inverses.
    pub fn num_relations_with_inverse(&self) -> usize {
        2 * self.num_relations
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        RelationId(r.0 + self.num_relations as u32)
    }

    /// Total number of adjacency entries (twice the quadruple count).
    pub fn adjacency_len(&self) -> usize {
        self.by_entity_time.values().map(Vec::len).sum()
    }

    /// Neighbors of `e` at exactly `time`, sorted by `(relation, entity)`.
    pub fn neighbors_at(&self, e: EntityId, time: Timestamp) -> &[Neighbor] {
        self.by_entity_time
            .get(&(e, time))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Snapshots at `t − ℓ, …, t − 1`, each truncated to its first `n_max`
    /// neighbors in sorted order. Positions before time zero are empty.
    pub fn temporal_neighborhood(&self, e: EntityId, t: Timestamp, ell: usize, n_max: usize) -> HistoryWindow {
        let snapshots = (0..ell)
            .map(|k| {
                let tau = t.0 as i64 - ell as i64 + k as i64;
                if tau < 0 {
                    return Vec::new();
                }
                let all = self.neighbors_at(e, Timestamp(tau as u32));
                all[..all.len().min(n_max)].to_vec()
            })
            .collect();
        HistoryWindow { time: t, snapshots }
    }
}
