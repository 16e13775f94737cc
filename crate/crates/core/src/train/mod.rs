//! Episodic training with one-shot support sets and a margin ranking loss.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHashMap;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Benchmark, Partition};
use crate::eval::{evaluate_split, EvalConfig, EvalError};
use crate::kg::{EntityId, HistoryWindow, Quadruple, RelationId, TemporalKG, Timestamp};
use crate::model::{encode_batch, pair_rep_batch, transform_var, EncoderConfig, ModelError, ModelParams};
use crate::tensor::{write_archive, AdamState, ArchiveError, Real, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no meta-train relation admits a support and a query")]
    NoFeasibleTask,
    #[error("non-finite loss at episode {0}")]
    NonFiniteLoss(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("{0}")]
    Io(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Positives lie in `[t₀, t₀ + w]` after the support time `t₀`.
    #[default]
    TimeDependent,
    /// Positives are drawn from all quadruples of the relation.
    Random,
}

/// Flat training configuration; encoder and evaluation fields sit at the
/// same JSON level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub episodes: usize,
    pub m_queries: usize,
    pub neg_per_pos: usize,
    pub query_mode: QueryMode,
    pub w: u32,
    pub seed: u64,
    /// Corrupt the subject half of the time instead of always the object.
    pub corrupt_both: bool,
    /// Meta-val evaluation interval in episodes; 0 disables it.
    pub eval_every: usize,
    /// Checkpoint interval in episodes; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    #[serde(flatten)]
    pub encoder: EncoderConfig,
    #[serde(flatten)]
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 10.0,
            learning_rate: 0.001,
            episodes: 1000,
            m_queries: 32,
            neg_per_pos: 1,
            query_mode: QueryMode::TimeDependent,
            w: 120,
            seed: 0,
            corrupt_both: false,
            eval_every: 250,
            checkpoint_every: 0,
            encoder: EncoderConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.margin > 0.0) {
            return Err(TrainError::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Config("learningRate must be positive".into()));
        }
        if self.m_queries == 0 || self.neg_per_pos == 0 || self.w == 0 {
            return Err(TrainError::Config("mQueries, negPerPos and w must be at least 1".into()));
        }
        self.encoder.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub relation: RelationId,
    pub support: Quadruple,
    pub positives: Vec<Quadruple>,
    /// `neg_per_pos` corruptions per positive, grouped by positive.
    pub negatives: Vec<Quadruple>,
}

/// Precomputed support feasibility for the meta-train relations.
pub struct TaskSampler {
    relations: Vec<RelationId>,
    /// Per relation: its quads sorted by time and the indices usable as support.
    quads: Vec<Vec<Quadruple>>,
    supports: Vec<Vec<usize>>,
    mode: QueryMode,
    w: u32,
}

impl TaskSampler {
    pub fn new(task_quads: &BTreeMap<RelationId, Vec<Quadruple>>, relations: &[RelationId], mode: QueryMode, w: u32) -> Self {
        let mut sampler = TaskSampler {
            relations: Vec::new(),
            quads: Vec::new(),
            supports: Vec::new(),
            mode,
            w,
        };
        for r in relations {
            let mut qs = task_quads.get(r).cloned().unwrap_or_default();
            qs.sort();
            let feasible: Vec<usize> = (0..qs.len()).filter(|&i| !sampler.window(&qs, i).is_empty()).collect();
            if !feasible.is_empty() {
                sampler.relations.push(*r);
                sampler.quads.push(qs);
                sampler.supports.push(feasible);
            }
        }
        sampler
    }

    /// Indices of query candidates for support `i`.
    fn window(&self, qs: &[Quadruple], i: usize) -> Vec<usize> {
        match self.mode {
            QueryMode::Random => (0..qs.len()).filter(|&j| j != i).collect(),
            QueryMode::TimeDependent => {
                let t0 = qs[i].time.0 as u64;
                let lo = qs.partition_point(|q| (q.time.0 as u64) < t0);
                let hi = qs.partition_point(|q| (q.time.0 as u64) <= t0 + self.w as u64);
                (lo..hi).filter(|&j| j != i).collect()
            }
        }
    }

    pub fn feasible_relations(&self) -> &[RelationId] {
        &self.relations
    }

    /// Draws a relation uniformly, a support uniformly among its feasible
    /// quads, and up to `m` positives without replacement.
    pub fn sample(&self, m: usize, rng: &mut impl Rng) -> Result<(RelationId, Quadruple, Vec<Quadruple>), TrainError> {
        if self.relations.is_empty() {
            return Err(TrainError::NoFeasibleTask);
        }
        let k = rng.gen_range(0..self.relations.len());
        let qs = &self.quads[k];
        let i = self.supports[k][rng.gen_range(0..self.supports[k].len())];
        let cands = self.window(qs, i);
        let picked = sample(rng, cands.len(), m.min(cands.len()));
        let positives = picked.iter().map(|p| qs[cands[p]]).collect();
        Ok((self.relations[k], qs[i], positives))
    }
}

/// Uniform entity other than `avoid`.
fn other_entity(avoid: EntityId, num_entities: usize, rng: &mut impl Rng) -> EntityId {
    let x = rng.gen_range(0..num_entities as u32 - 1);
    EntityId(if x >= avoid.0 { x + 1 } else { x })
}

/// Replaces the object with a uniformly drawn different entity. With `both`,
/// the subject is replaced instead half of the time.
pub fn corrupt(pos: &Quadruple, num_entities: usize, both: bool, rng: &mut impl Rng) -> Quadruple {
    assert!(num_entities >= 2, "corruption needs at least two entities");
    let mut neg = *pos;
    if both && rng.gen_bool(0.5) {
        neg.subject = other_entity(pos.subject, num_entities, rng);
    } else {
        neg.object = other_entity(pos.object, num_entities, rng);
    }
    neg
}

pub fn hinge_loss(score_pos: f64, score_neg: f64, margin: f64) -> f64 {
    (score_neg - score_pos + margin).max(0.0)
}

pub fn sample_episode(
    sampler: &TaskSampler,
    num_entities: usize,
    cfg: &TrainConfig,
    rng: &mut impl Rng,
) -> Result<Episode, TrainError> {
    let (relation, support, positives) = sampler.sample(cfg.m_queries, rng)?;
    let negatives = positives
        .iter()
        .flat_map(|p| (0..cfg.neg_per_pos).map(move |_| p))
        .map(|p| corrupt(p, num_entities, cfg.corrupt_both, rng))
        .collect();
    Ok(Episode {
        relation,
        support,
        positives,
        negatives,
    })
}

/// Records the episode loss on `tape`: mean over positive/negative pairs of
/// `max(score⁻ − score⁺ + margin, 0)`.
pub fn episode_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &ModelParams<T>,
    graph: &TemporalKG,
    ep: &Episode,
    margin: f64,
) -> Result<Var, TrainError> {
    let cfg = &model.cfg;
    let mut rows: FnvHashMap<(EntityId, Timestamp), usize> = FnvHashMap::default();
    let mut items: Vec<(EntityId, HistoryWindow)> = Vec::new();
    let mut row = |e: EntityId, t: Timestamp| {
        *rows.entry((e, t)).or_insert_with(|| {
            items.push((e, graph.temporal_neighborhood(e, t, cfg.ell, cfg.n_max)));
            items.len() - 1
        })
    };
    let mut pairs = Vec::with_capacity(1 + ep.positives.len() + ep.negatives.len());
    for q in std::iter::once(&ep.support).chain(&ep.positives).chain(&ep.negatives) {
        pairs.push((row(q.subject, q.time), q.subject, row(q.object, q.time), q.object));
    }
    let refs: Vec<(EntityId, &HistoryWindow)> = items.iter().map(|(e, h)| (*e, h)).collect();
    let enc = encode_batch(tape, model, &refs)?;
    let reps = pair_rep_batch(tape, model, enc.h, &pairs)?;
    let m = transform_var(tape, model, reps)?;
    let sup = tape.gather_rows(m, &[0])?;
    let sup_t = tape.transpose(sup)?;
    let scores = tape.matmul(m, sup_t)?;
    let np = ep.positives.len();
    let k = ep.negatives.len() / np.max(1);
    let pos_idx: Vec<usize> = (0..ep.negatives.len()).map(|j| 1 + j / k.max(1)).collect();
    let neg_idx: Vec<usize> = (0..ep.negatives.len()).map(|j| 1 + np + j).collect();
    let pos = tape.gather_rows(scores, &pos_idx)?;
    let neg = tape.gather_rows(scores, &neg_idx)?;
    let diff = tape.sub(neg, pos)?;
    let shifted = tape.add_scalar(diff, margin)?;
    let hinge = tape.max_with_zero(shifted)?;
    Ok(tape.mean_all(hinge)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeRecord {
    pub episode: usize,
    pub relation: String,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mrr: Option<f64>,
}

pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    /// Parameters with the best meta-val MRR and the episode count at which
    /// they were taken, when validation ran.
    pub best: Option<(usize, f64, ModelParams<f32>)>,
    pub log: Vec<EpisodeRecord>,
}

pub const FINAL_CHECKPOINT: &str = "final.tkgt";
pub const BEST_CHECKPOINT: &str = "best.tkgt";
pub const TRAIN_LOG: &str = "train.jsonl";

fn save(params: &ModelParams<f32>, path: &Path) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_archive(&params.store, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Trains on the meta-train relations of `bench`. When `out_dir` is given,
/// writes the JSON-lines log, periodic checkpoints, `best.tkgt` and
/// `final.tkgt` there.
pub fn train(bench: &Benchmark, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let ne = bench.num_entities();
    if ne < 2 {
        return Err(TrainError::Config("need at least two entities".into()));
    }
    let mut params = ModelParams::<f32>::init(cfg.encoder, ne, bench.num_relations(), cfg.seed)?;
    let train_rels = bench.split.relations_in(Partition::MetaTrain);
    let sampler = TaskSampler::new(&bench.split.task_quads, &train_rels, cfg.query_mode, cfg.w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_ba5e);
    let mut adam = AdamState::new(&params.store, cfg.learning_rate);
    let has_val = !bench.split.relations_in(Partition::MetaVal).is_empty();

    let mut log_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(BufWriter::new(File::create(dir.join(TRAIN_LOG))?))
        }
        None => None,
    };
    let ckpt = |name: String| -> Option<PathBuf> { out_dir.map(|d| d.join(name)) };

    let mut log = Vec::with_capacity(cfg.episodes);
    let mut best: Option<(usize, f64, ModelParams<f32>)> = None;
    for episode in 1..=cfg.episodes {
        let ep = sample_episode(&sampler, ne, cfg, &mut rng)?;
        let grads = {
            let mut tape = Tape::with_params(&params.store);
            let loss = episode_loss(&mut tape, &params, &bench.graph, &ep, cfg.margin)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss(episode));
            }
            let grads = tape.backward(loss)?.into_param_grads(params.store.len());
            log.push(EpisodeRecord {
                episode,
                relation: bench.vocab.relation_name(ep.relation).unwrap_or("?").to_string(),
                loss: value,
                val_mrr: None,
            });
            grads
        };
        adam.step(&mut params.store, &grads)?;
        if !params.store.is_finite() {
            return Err(TrainError::NonFiniteLoss(episode));
        }

        if has_val && cfg.eval_every > 0 && (episode % cfg.eval_every == 0 || episode == cfg.episodes) {
            let report = evaluate_split(bench, Partition::MetaVal, &params, &cfg.eval)?;
            log.last_mut().unwrap().val_mrr = Some(report.mrr);
            if best.as_ref().map_or(true, |(_, m, _)| report.mrr > *m) {
                best = Some((episode, report.mrr, params.clone()));
                if let Some(p) = ckpt(BEST_CHECKPOINT.into()) {
                    save(&params, &p)?;
                }
            }
        }
        if cfg.checkpoint_every > 0 && episode % cfg.checkpoint_every == 0 {
            if let Some(p) = ckpt(format!("checkpoint-{episode:06}.tkgt")) {
                save(&params, &p)?;
            }
        }
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, log.last().unwrap()).map_err(|e| TrainError::Io(e.to_string()))?;
            f.write_all(b"\n")?;
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    if let Some(p) = ckpt(FINAL_CHECKPOINT.into()) {
        save(&params, &p)?;
    }
    Ok(TrainOutcome { params, best, log })
}

/// Mean loss of the first and last `n` episodes of a log.
pub fn loss_trend(log: &[EpisodeRecord], n: usize) -> Option<(f64, f64)> {
    if n == 0 || log.len() < n {
        return None;
    }
    let mean = |s: &[EpisodeRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len() as f64;
    Some((mean(&log[..n]), mean(&log[log.len() - n..])))
}
