//! Benchmark construction: frequency split into background and task
//! relations, non-overlapping time windows for meta-train/val/test, relation
//! partitioning, and precomputed neighborhood histories.

mod artifacts;
mod history;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KgError, Quadruple, RelationId, TemporalKG, Timestamp};

pub use artifacts::{write_dataset, Benchmark, FEWSHOT_FILE, HIST_FILE, PRETRAIN_FILE, SPLIT_FILE, VOCAB_FILE};
pub use history::{build_history_cache, HistoryCache, HIST_MAGIC};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid thresholds: need 0 < low < high, got low={low} high={high}")]
    InvalidThresholds { low: usize, high: usize },
    #[error("no relation falls in the sparse frequency band [{low}, {high}]")]
    EmptySparseSet { low: usize, high: usize },
    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),
    #[error("time span {span} is too short for episode length {w} (need span > 2w)")]
    SpanTooShort { span: u64, w: u32 },
    #[error("relation name {0:?} collides with a reserved split.json key")]
    ReservedName(String),
    #[error("malformed dataset file {file}: {reason}")]
    Format { file: String, reason: String },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e.to_string())
    }
}

/// Relations with `low ≤ count ≤ high` become tasks, `count > high` background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyThresholds {
    pub low: usize,
    pub high: usize,
}

impl FrequencyThresholds {
    pub fn new(low: usize, high: usize) -> Result<Self, DatasetError> {
        if low == 0 || low >= high {
            return Err(DatasetError::InvalidThresholds { low, high });
        }
        Ok(FrequencyThresholds { low, high })
    }
}

impl Default for FrequencyThresholds {
    fn default() -> Self {
        FrequencyThresholds { low: 50, high: 500 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrequencySplit {
    pub background: Vec<Quadruple>,
    pub sparse: Vec<Quadruple>,
    pub dropped: Vec<Quadruple>,
    pub counts: BTreeMap<RelationId, usize>,
}

impl FrequencySplit {
    pub fn sparse_relations(&self, th: FrequencyThresholds) -> Vec<RelationId> {
        self.counts
            .iter()
            .filter(|(_, &c)| c >= th.low && c <= th.high)
            .map(|(&r, _)| r)
            .collect()
    }
}

/// Routes each quadruple by the total count of its relation.
pub fn split_by_frequency(quads: &[Quadruple], th: FrequencyThresholds) -> Result<FrequencySplit, DatasetError> {
    FrequencyThresholds::new(th.low, th.high)?;
    let mut counts: BTreeMap<RelationId, usize> = BTreeMap::new();
    for q in quads {
        *counts.entry(q.relation).or_default() += 1;
    }
    let mut split = FrequencySplit {
        counts,
        ..Default::default()
    };
    for q in quads {
        let c = split.counts[&q.relation];
        if c > th.high {
            split.background.push(*q);
        } else if c >= th.low {
            split.sparse.push(*q);
        } else {
            split.dropped.push(*q);
        }
    }
    if split.sparse.is_empty() {
        return Err(DatasetError::EmptySparseSet {
            low: th.low,
            high: th.high,
        });
    }
    Ok(split)
}

/// Boundaries of the three meta windows: train `[.., train_end)`, val
/// `[train_end, val_end)`, test `[val_end, dataset_end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindows {
    pub train_end: Timestamp,
    pub val_end: Timestamp,
    pub dataset_end: Timestamp,
    pub w: u32,
}

impl TimeWindows {
    pub fn partition_range(&self, p: Partition) -> (Timestamp, Timestamp) {
        match p {
            Partition::MetaTrain => (Timestamp(0), self.train_end),
            Partition::MetaVal => (self.train_end, self.val_end),
            Partition::MetaTest => (self.val_end, self.dataset_end),
        }
    }

    pub fn contains(&self, p: Partition, t: Timestamp) -> bool {
        let (lo, hi) = self.partition_range(p);
        lo <= t && t < hi
    }
}

pub fn cut_time_windows(quads: &[Quadruple], w: u32) -> Result<TimeWindows, DatasetError> {
    let (min, max) = quads
        .iter()
        .fold((u32::MAX, 0u32), |(lo, hi), q| (lo.min(q.time.0), hi.max(q.time.0)));
    if quads.is_empty() {
        return Err(DatasetError::SpanTooShort { span: 0, w });
    }
    let dataset_end = max as u64 + 1;
    let span = dataset_end - min as u64;
    if w == 0 || span <= 2 * w as u64 {
        return Err(DatasetError::SpanTooShort { span, w });
    }
    let val_end = dataset_end - w as u64;
    let train_end = val_end - w as u64;
    Ok(TimeWindows {
        train_end: Timestamp(train_end as u32),
        val_end: Timestamp(val_end as u32),
        dataset_end: Timestamp(dataset_end as u32),
        w,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    MetaTrain,
    MetaVal,
    MetaTest,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::MetaTrain => "meta_train",
            Partition::MetaVal => "meta_val",
            Partition::MetaTest => "meta_test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "meta_train" => Some(Partition::MetaTrain),
            "meta_val" => Some(Partition::MetaVal),
            "meta_test" => Some(Partition::MetaTest),
            _ => None,
        }
    }
}

/// Number of task relations routed to meta-val and meta-test; the rest
/// become meta-train.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSizes {
    pub val: usize,
    pub test: usize,
}

/// Seeded shuffle of the task relations into partitions. A val/test relation
/// without any quadruple inside its window is swapped with the lowest-id
/// meta-train relation that has one.
pub fn assign_meta_partitions(
    task_quads: &BTreeMap<RelationId, Vec<Quadruple>>,
    sizes: PartitionSizes,
    windows: &TimeWindows,
    seed: u64,
) -> Result<BTreeMap<RelationId, Partition>, DatasetError> {
    let mut rels: Vec<RelationId> = task_quads.keys().copied().collect();
    if sizes.val + sizes.test > rels.len() {
        return Err(DatasetError::InfeasiblePartition(format!(
            "requested {} val + {} test relations but only {} task relations exist",
            sizes.val,
            sizes.test,
            rels.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rels.shuffle(&mut rng);
    let mut partition: BTreeMap<RelationId, Partition> = BTreeMap::new();
    for (i, r) in rels.iter().enumerate() {
        let p = if i < sizes.val {
            Partition::MetaVal
        } else if i < sizes.val + sizes.test {
            Partition::MetaTest
        } else {
            Partition::MetaTrain
        };
        partition.insert(*r, p);
    }
    let feasible = |r: RelationId, p: Partition| task_quads[&r].iter().any(|q| windows.contains(p, q.time));
    for target in [Partition::MetaVal, Partition::MetaTest] {
        let members: Vec<RelationId> = partition
            .iter()
            .filter(|(_, &p)| p == target)
            .map(|(&r, _)| r)
            .collect();
        for r in members {
            if feasible(r, target) {
                continue;
            }
            let swap = partition
                .iter()
                .find(|(&cand, &p)| p == Partition::MetaTrain && feasible(cand, target))
                .map(|(&cand, _)| cand);
            match swap {
                Some(cand) => {
                    partition.insert(cand, target);
                    partition.insert(r, Partition::MetaTrain);
                }
                None => {
                    return Err(DatasetError::InfeasiblePartition(format!(
                        "no task relation has quadruples in the {} window",
                        target.as_str()
                    )))
                }
            }
        }
    }
    Ok(partition)
}

/// A built benchmark split.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaSplit {
    /// Quadruples of frequent relations.
    pub background: Vec<Quadruple>,
    /// Per task relation, its quadruples inside its partition's window.
    pub task_quads: BTreeMap<RelationId, Vec<Quadruple>>,
    pub partition: BTreeMap<RelationId, Partition>,
    pub windows: TimeWindows,
    /// For val/test relations: the latest quadruple before `train_end`, used
    /// when evaluation draws its support from the training period.
    pub training_support: BTreeMap<RelationId, Quadruple>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub thresholds: FrequencyThresholds,
    pub w: u32,
    pub sizes: PartitionSizes,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            thresholds: FrequencyThresholds::default(),
            w: 120,
            sizes: PartitionSizes { val: 5, test: 15 },
            seed: 0,
        }
    }
}

/// Runs frequency split, windowing and partitioning over deduplicated quads.
/// Task quadruples outside their partition's window are discarded.
pub fn build_meta_split(quads: &[Quadruple], cfg: &BuildConfig) -> Result<MetaSplit, DatasetError> {
    let freq = split_by_frequency(quads, cfg.thresholds)?;
    let windows = cut_time_windows(quads, cfg.w)?;
    let mut all_task: BTreeMap<RelationId, Vec<Quadruple>> = BTreeMap::new();
    for q in &freq.sparse {
        all_task.entry(q.relation).or_default().push(*q);
    }
    for list in all_task.values_mut() {
        list.sort();
    }
    let partition = assign_meta_partitions(&all_task, cfg.sizes, &windows, cfg.seed)?;
    let mut task_quads = BTreeMap::new();
    let mut training_support = BTreeMap::new();
    for (r, list) in &all_task {
        let p = partition[r];
        let kept: Vec<Quadruple> = list.iter().copied().filter(|q| windows.contains(p, q.time)).collect();
        if p != Partition::MetaTrain {
            if let Some(q) = list.iter().rev().find(|q| q.time < windows.train_end) {
                training_support.insert(*r, *q);
            }
        }
        task_quads.insert(*r, kept);
    }
    let mut background = freq.background;
    background.sort();
    Ok(MetaSplit {
        background,
        task_quads,
        partition,
        windows,
        training_support,
    })
}

impl MetaSplit {
    pub fn relations_in(&self, p: Partition) -> Vec<RelationId> {
        self.partition
            .iter()
            .filter(|(_, &q)| q == p)
            .map(|(&r, _)| r)
            .collect()
    }

    /// All kept task quadruples in canonical order; line `i` of the few-shot
    /// file.
    pub fn meta_quads(&self) -> Vec<Quadruple> {
        let mut all: Vec<Quadruple> = self.task_quads.values().flatten().copied().collect();
        all.sort();
        all
    }

    pub fn quads_of(&self, p: Partition) -> Vec<Quadruple> {
        let mut out: Vec<Quadruple> = self
            .task_quads
            .iter()
            .filter(|(r, _)| self.partition[r] == p)
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        out.sort();
        out
    }

    /// Graph whose edges may appear in histories: background plus meta-train.
    pub fn history_graph(&self, num_entities: usize, num_relations: usize) -> TemporalKG {
        let mut edges = self.background.clone();
        edges.extend(self.quads_of(Partition::MetaTrain));
        TemporalKG::new(edges, num_entities, num_relations)
    }
}
