//! Ranking evaluation: every entity is a candidate object for each query.

use std::collections::BTreeMap;
use std::io::Write;

use fnv::FnvHashMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Benchmark, Partition};
use crate::kg::{EntityId, HistoryWindow, Quadruple, TemporalKG, Timestamp};
use crate::model::{encode_batch, pair_rep_batch, transform_var, ModelError, ModelParams};
use crate::tensor::{Real, Tape, Tensor};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("rank list is empty")]
    EmptyRankList,
    #[error("query at {query} precedes its support at {support}")]
    NegativeGap { query: Timestamp, support: Timestamp },
    #[error("bucket width must be at least 1")]
    ZeroBucketWidth,
    #[error("partition {0} has no relations")]
    EmptyPartition(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Io(String),
}

/// How candidates scoring exactly like the true object are counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// Only strictly higher scores push the true object down.
    #[default]
    Optimistic,
    /// Ties count against the true object as well.
    Pessimistic,
}

/// Where the single support example of an evaluation relation comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupportRule {
    /// Earliest quadruple inside the evaluation window.
    #[default]
    WindowEarliest,
    /// Latest quadruple before the meta-train boundary.
    TrainingPeriod,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EvalConfig {
    pub tie_rule: TieRule,
    pub support: SupportRule,
    pub bucket_width: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tie_rule: TieRule::Optimistic,
            support: SupportRule::WindowEarliest,
            bucket_width: 7,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RankResult {
    pub query: Quadruple,
    pub rank: usize,
    pub support_time: Timestamp,
}

/// 1-based rank of `scores[truth]` among all scores.
pub fn rank_from_scores(scores: &[f64], truth: usize, tie: TieRule) -> usize {
    let target = scores[truth];
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(i, &s)| {
            i != truth
                && match tie {
                    TieRule::Optimistic => s > target,
                    TieRule::Pessimistic => s >= target,
                }
        })
        .count();
    1 + above
}

pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRankList);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn hit_at(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyRankList);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Metrics {
    pub mrr: f64,
    pub hit1: f64,
    pub hit5: f64,
    pub hit10: f64,
    pub count: usize,
}

impl Metrics {
    /// Aggregates `ranks`; all zeros for an empty list.
    pub fn from_ranks(ranks: &[usize]) -> Self {
        if ranks.is_empty() {
            return Metrics::default();
        }
        Metrics {
            mrr: mrr(ranks).unwrap(),
            hit1: hit_at(ranks, 1).unwrap(),
            hit5: hit_at(ranks, 5).unwrap(),
            hit10: hit_at(ranks, 10).unwrap(),
            count: ranks.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub bucket: u32,
    /// Gap range `[start, end)` covered by the bucket.
    pub start: u32,
    pub end: u32,
    pub count: usize,
    pub mrr: f64,
    pub hit10: f64,
}

/// Groups results by `floor((query time − support time) / width)`. Only
/// non-empty buckets are returned, in increasing order.
pub fn over_time(results: &[RankResult], width: u32) -> Result<Vec<Bucket>, EvalError> {
    if width == 0 {
        return Err(EvalError::ZeroBucketWidth);
    }
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for r in results {
        if r.query.time < r.support_time {
            return Err(EvalError::NegativeGap {
                query: r.query.time,
                support: r.support_time,
            });
        }
        let gap = r.query.time.0 - r.support_time.0;
        groups.entry(gap / width).or_default().push(r.rank);
    }
    Ok(groups
        .into_iter()
        .map(|(b, ranks)| Bucket {
            bucket: b,
            start: b * width,
            end: (b + 1) * width,
            count: ranks.len(),
            mrr: mrr(&ranks).unwrap(),
            hit10: hit_at(&ranks, 10).unwrap(),
        })
        .collect())
}

pub fn write_buckets_csv<W: Write>(mut w: W, buckets: &[Bucket]) -> std::io::Result<()> {
    writeln!(w, "bucket,start,end,count,mrr,hit10")?;
    for b in buckets {
        writeln!(w, "{},{},{},{},{},{}", b.bucket, b.start, b.end, b.count, b.mrr, b.hit10)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub partition: String,
    pub mrr: f64,
    pub hit1: f64,
    pub hit5: f64,
    pub hit10: f64,
    pub count: usize,
    pub per_relation: BTreeMap<String, Metrics>,
    pub over_time: Vec<Bucket>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    pub fn overall(&self) -> Metrics {
        Metrics {
            mrr: self.mrr,
            hit1: self.hit1,
            hit5: self.hit5,
            hit10: self.hit10,
            count: self.count,
        }
    }
}

/// One query to rank: its true quadruple and the relation's support.
#[derive(Clone, Copy, Debug)]
struct Job {
    query: Quadruple,
    support: Quadruple,
}

/// Scores every entity as the object of each job's query. Jobs sharing a
/// query time share one batched encoding of all entities at that time.
fn score_all<T: Real>(model: &ModelParams<T>, graph: &TemporalKG, jobs: &[Job]) -> Result<Vec<Vec<f64>>, ModelError> {
    let cfg = &model.cfg;
    let n = model.num_entities();
    let mut by_time: BTreeMap<Timestamp, Vec<usize>> = BTreeMap::new();
    for (i, j) in jobs.iter().enumerate() {
        by_time.entry(j.query.time).or_default().push(i);
    }
    let groups: Vec<(Timestamp, Vec<usize>)> = by_time.into_iter().collect();
    let scored: Vec<Vec<(usize, Vec<f64>)>> = groups
        .par_iter()
        .map(|(t, idxs)| -> Result<_, ModelError> {
            let mut tape = Tape::with_params(&model.store);
            // rows 0..n: all entities at t; then each distinct support entity at its own time
            let mut windows: Vec<HistoryWindow> =
                (0..n).map(|e| graph.temporal_neighborhood(EntityId(e as u32), *t, cfg.ell, cfg.n_max)).collect();
            let mut keys: Vec<EntityId> = (0..n as u32).map(EntityId).collect();
            let mut row_of: FnvHashMap<(EntityId, Timestamp), usize> = FnvHashMap::default();
            for e in 0..n {
                row_of.insert((EntityId(e as u32), *t), e);
            }
            for &i in idxs {
                let s = jobs[i].support;
                for e in [s.subject, s.object] {
                    row_of.entry((e, s.time)).or_insert_with(|| {
                        windows.push(graph.temporal_neighborhood(e, s.time, cfg.ell, cfg.n_max));
                        keys.push(e);
                        keys.len() - 1
                    });
                }
            }
            let items: Vec<(EntityId, &HistoryWindow)> = keys.iter().copied().zip(windows.iter()).collect();
            let enc = encode_batch(&mut tape, model, &items)?;
            let mut out = Vec::with_capacity(idxs.len());
            for &i in idxs {
                let Job { query, support } = jobs[i];
                let mut pairs = vec![(
                    row_of[&(support.subject, support.time)],
                    support.subject,
                    row_of[&(support.object, support.time)],
                    support.object,
                )];
                let hs = row_of[&(query.subject, *t)];
                pairs.extend((0..n).map(|e| (hs, query.subject, e, EntityId(e as u32))));
                let reps = pair_rep_batch(&mut tape, model, enc.h, &pairs)?;
                let m = transform_var(&mut tape, model, reps)?;
                let mv = tape.value(m);
                let sup = mv.row(0);
                let scores = (1..=n)
                    .map(|r| mv.row(r).iter().zip(sup).map(|(a, b)| a.as_f64() * b.as_f64()).sum())
                    .collect();
                out.push((i, scores));
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut result = vec![Vec::new(); jobs.len()];
    for (i, s) in scored.into_iter().flatten() {
        result[i] = s;
    }
    Ok(result)
}

/// Ranks the true object of `q` among all entities, scored against `support`.
pub fn rank_query<T: Real>(
    model: &ModelParams<T>,
    graph: &TemporalKG,
    q: Quadruple,
    support: Quadruple,
    tie: TieRule,
) -> Result<RankResult, EvalError> {
    let scores = score_all(model, graph, &[Job { query: q, support }])?.pop().unwrap();
    Ok(RankResult {
        query: q,
        rank: rank_from_scores(&scores, q.object.index(), tie),
        support_time: support.time,
    })
}

/// Candidate scores for one query; exposed for inspection and tests.
pub fn candidate_scores<T: Real>(
    model: &ModelParams<T>,
    graph: &TemporalKG,
    q: Quadruple,
    support: Quadruple,
) -> Result<Tensor<f64>, EvalError> {
    let scores = score_all(model, graph, &[Job { query: q, support }])?.pop().unwrap();
    Ok(Tensor::from_vec(scores))
}

/// Support and queries of every relation in `partition`.
fn plan(bench: &Benchmark, partition: Partition, rule: SupportRule, warnings: &mut Vec<String>) -> Vec<Job> {
    let split = &bench.split;
    let mut jobs = Vec::new();
    for r in split.relations_in(partition) {
        let quads = &split.task_quads[&r];
        let name = bench.vocab.relation_name(r).unwrap_or("?").to_string();
        let support = match rule {
            SupportRule::TrainingPeriod => match split.training_support.get(&r) {
                Some(q) => Some(*q),
                None => {
                    warnings.push(format!("relation {name} has no training-period quadruple; using window support"));
                    quads.first().copied()
                }
            },
            SupportRule::WindowEarliest => quads.first().copied(),
        };
        let Some(support) = support else {
            warnings.push(format!("relation {name} has no quadruples in its window"));
            continue;
        };
        let before = jobs.len();
        jobs.extend(quads.iter().filter(|q| **q != support).map(|&query| Job { query, support }));
        if jobs.len() == before {
            warnings.push(format!("relation {name} has no rankable queries"));
        }
    }
    jobs
}

/// Ranks every query of a meta-val or meta-test partition.
pub fn rank_split<T: Real>(
    bench: &Benchmark,
    partition: Partition,
    model: &ModelParams<T>,
    cfg: &EvalConfig,
) -> Result<(Vec<RankResult>, Vec<String>), EvalError> {
    if bench.split.relations_in(partition).is_empty() {
        return Err(EvalError::EmptyPartition(partition.as_str()));
    }
    let mut warnings = Vec::new();
    let jobs = plan(bench, partition, cfg.support, &mut warnings);
    let scores = score_all(model, &bench.graph, &jobs)?;
    let results = jobs
        .iter()
        .zip(scores)
        .map(|(j, s)| RankResult {
            query: j.query,
            rank: rank_from_scores(&s, j.query.object.index(), cfg.tie_rule),
            support_time: j.support.time,
        })
        .collect();
    Ok((results, warnings))
}

/// Builds the report for already-ranked results.
pub fn summarize(
    bench: &Benchmark,
    partition: Partition,
    results: &[RankResult],
    mut warnings: Vec<String>,
    bucket_width: u32,
) -> Result<MetricsReport, EvalError> {
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    let overall = Metrics::from_ranks(&ranks);
    if ranks.is_empty() {
        warnings.push(format!("partition {} has no rankable queries", partition.as_str()));
    }
    let mut per: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for r in results {
        let name = bench.vocab.relation_name(r.query.relation).unwrap_or("?").to_string();
        per.entry(name).or_default().push(r.rank);
    }
    Ok(MetricsReport {
        partition: partition.as_str().to_string(),
        mrr: overall.mrr,
        hit1: overall.hit1,
        hit5: overall.hit5,
        hit10: overall.hit10,
        count: overall.count,
        per_relation: per.into_iter().map(|(k, v)| (k, Metrics::from_ranks(&v))).collect(),
        over_time: over_time(results, bucket_width)?,
        warnings,
    })
}

pub fn evaluate_split<T: Real>(
    bench: &Benchmark,
    partition: Partition,
    model: &ModelParams<T>,
    cfg: &EvalConfig,
) -> Result<MetricsReport, EvalError> {
    let (results, warnings) = rank_split(bench, partition, model, cfg)?;
    summarize(bench, partition, &results, warnings, cfg.bucket_width)
}
