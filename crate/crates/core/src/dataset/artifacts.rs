//! On-disk benchmark layout and its loader.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use fnv::FnvHashMap;
use serde_json::{json, Map, Value};

use super::history::{build_history_cache, HistoryCache};
use super::{DatasetError, MetaSplit, Partition, TimeWindows};
use crate::kg::{read_quads, write_quads, EntityId, HistoryWindow, Quadruple, TemporalKG, Timestamp, Vocab};

pub const PRETRAIN_FILE: &str = "pretrain.tsv";
pub const FEWSHOT_FILE: &str = "fewshot.tsv";
pub const VOCAB_FILE: &str = "vocab.json";
pub const SPLIT_FILE: &str = "split.json";
pub const HIST_FILE: &str = "hist.bin";

const RESERVED: [&str; 4] = ["trainEnd", "valEnd", "datasetEnd", "w"];

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, DatasetError> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>, DatasetError> {
    File::open(dir.join(name))
        .map(BufReader::new)
        .map_err(|e| DatasetError::Io(format!("{}: {e}", dir.join(name).display())))
}

fn split_json(split: &MetaSplit, vocab: &Vocab, meta: &[Quadruple]) -> Result<Value, DatasetError> {
    let mut lines: BTreeMap<_, Vec<usize>> = BTreeMap::new();
    for (i, q) in meta.iter().enumerate() {
        lines.entry(q.relation).or_default().push(i);
    }
    let mut obj = Map::new();
    for (r, p) in &split.partition {
        let name = vocab
            .relation_name(*r)
            .ok_or_else(|| DatasetError::Format { file: SPLIT_FILE.into(), reason: format!("relation id {} has no name", r.0) })?;
        if RESERVED.contains(&name) {
            return Err(DatasetError::ReservedName(name.to_string()));
        }
        let mut entry = Map::new();
        entry.insert("partition".into(), json!(p.as_str()));
        entry.insert("lines".into(), json!(lines.get(r).cloned().unwrap_or_default()));
        if let Some(q) = split.training_support.get(r) {
            entry.insert(
                "trainingSupport".into(),
                json!([
                    vocab.entity_name(q.subject),
                    vocab.relation_name(q.relation),
                    vocab.entity_name(q.object),
                    vocab.time_label(q.time)
                ]),
            );
        }
        obj.insert(name.to_string(), Value::Object(entry));
    }
    obj.insert("trainEnd".into(), json!(split.windows.train_end.0));
    obj.insert("valEnd".into(), json!(split.windows.val_end.0));
    obj.insert("datasetEnd".into(), json!(split.windows.dataset_end.0));
    obj.insert("w".into(), json!(split.windows.w));
    Ok(Value::Object(obj))
}

/// Writes every benchmark artifact into `dir` (created if missing) and
/// returns the history cache it wrote.
pub fn write_dataset(
    dir: &Path,
    split: &MetaSplit,
    vocab: &Vocab,
    ell: usize,
    n_max: usize,
) -> Result<HistoryCache, DatasetError> {
    std::fs::create_dir_all(dir)?;
    let meta = split.meta_quads();

    let mut w = create(dir, PRETRAIN_FILE)?;
    write_quads(&mut w, &split.background, vocab)?;
    w.flush()?;

    let mut w = create(dir, FEWSHOT_FILE)?;
    write_quads(&mut w, &meta, vocab)?;
    w.flush()?;

    let mut w = create(dir, VOCAB_FILE)?;
    vocab.write_json(&mut w)?;
    w.flush()?;

    let value = split_json(split, vocab, &meta)?;
    let mut w = create(dir, SPLIT_FILE)?;
    serde_json::to_writer_pretty(&mut w, &value).map_err(|e| DatasetError::Io(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;

    let graph = split.history_graph(vocab.num_entities(), vocab.num_relations());
    let cache = build_history_cache(&graph, &meta, ell, n_max);
    let mut w = create(dir, HIST_FILE)?;
    cache.write_to(&mut w)?;
    w.flush()?;
    Ok(cache)
}

/// A benchmark directory loaded back into memory.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub vocab: Vocab,
    pub split: MetaSplit,
    /// Background plus meta-train edges; the graph all histories are drawn from.
    pub graph: TemporalKG,
    pub cache: HistoryCache,
    meta: Vec<Quadruple>,
    record_of: FnvHashMap<Quadruple, usize>,
}

fn format_err(reason: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        file: SPLIT_FILE.into(),
        reason: reason.into(),
    }
}

fn field_u32(obj: &Map<String, Value>, key: &str) -> Result<u32, DatasetError> {
    obj.get(key)
        .and_then(Value::as_u64)
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| format_err(format!("missing or invalid {key:?}")))
}

fn parse_quad_names(v: &Value, vocab: &Vocab) -> Result<Quadruple, DatasetError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 4)
        .ok_or_else(|| format_err("trainingSupport must be a 4-element array"))?;
    let s: Vec<&str> = arr
        .iter()
        .map(|x| x.as_str().ok_or_else(|| format_err("trainingSupport entries must be strings")))
        .collect::<Result<_, _>>()?;
    let unknown = |what: &str, n: &str| format_err(format!("unknown {what} {n:?} in trainingSupport"));
    Ok(Quadruple {
        subject: vocab.entity_id(s[0]).ok_or_else(|| unknown("entity", s[0]))?,
        relation: vocab.relation_id(s[1]).ok_or_else(|| unknown("relation", s[1]))?,
        object: vocab.entity_id(s[2]).ok_or_else(|| unknown("entity", s[2]))?,
        time: vocab.time_id(s[3]).ok_or_else(|| unknown("time", s[3]))?,
    })
}

impl Benchmark {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let vocab = Vocab::read_json(open(dir, VOCAB_FILE)?)?;
        let background = read_quads(open(dir, PRETRAIN_FILE)?, &vocab)?;
        let meta = read_quads(open(dir, FEWSHOT_FILE)?, &vocab)?;
        let value: Value =
            serde_json::from_reader(open(dir, SPLIT_FILE)?).map_err(|e| format_err(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| format_err("top level must be an object"))?;
        let windows = TimeWindows {
            train_end: Timestamp(field_u32(obj, "trainEnd")?),
            val_end: Timestamp(field_u32(obj, "valEnd")?),
            dataset_end: Timestamp(field_u32(obj, "datasetEnd")?),
            w: field_u32(obj, "w")?,
        };

        let mut partition = BTreeMap::new();
        let mut task_quads = BTreeMap::new();
        let mut training_support = BTreeMap::new();
        for (name, entry) in obj.iter().filter(|(k, _)| !RESERVED.contains(&k.as_str())) {
            let r = vocab
                .relation_id(name)
                .ok_or_else(|| format_err(format!("unknown relation {name:?}")))?;
            let p = entry
                .get("partition")
                .and_then(Value::as_str)
                .and_then(Partition::parse)
                .ok_or_else(|| format_err(format!("relation {name:?} has no valid partition")))?;
            let lines = entry
                .get("lines")
                .and_then(Value::as_array)
                .ok_or_else(|| format_err(format!("relation {name:?} has no lines")))?;
            let mut quads = Vec::with_capacity(lines.len());
            for l in lines {
                let i = l
                    .as_u64()
                    .map(|i| i as usize)
                    .filter(|&i| i < meta.len())
                    .ok_or_else(|| format_err(format!("bad line index {l} for {name:?}")))?;
                if meta[i].relation != r {
                    return Err(format_err(format!("line {i} does not belong to {name:?}")));
                }
                quads.push(meta[i]);
            }
            if let Some(ts) = entry.get("trainingSupport") {
                training_support.insert(r, parse_quad_names(ts, &vocab)?);
            }
            partition.insert(r, p);
            task_quads.insert(r, quads);
        }

        let split = MetaSplit {
            background,
            task_quads,
            partition,
            windows,
            training_support,
        };
        let graph = split.history_graph(vocab.num_entities(), vocab.num_relations());
        let cache = HistoryCache::read_from(open(dir, HIST_FILE)?, &meta)?;
        let record_of = meta.iter().enumerate().map(|(i, q)| (*q, i)).collect();
        Ok(Benchmark {
            vocab,
            split,
            graph,
            cache,
            meta,
            record_of,
        })
    }

    /// Assembles a benchmark in memory without touching disk.
    pub fn from_split(split: MetaSplit, vocab: Vocab, ell: usize, n_max: usize) -> Self {
        let meta = split.meta_quads();
        let graph = split.history_graph(vocab.num_entities(), vocab.num_relations());
        let cache = build_history_cache(&graph, &meta, ell, n_max);
        let record_of = meta.iter().enumerate().map(|(i, q)| (*q, i)).collect();
        Benchmark {
            vocab,
            split,
            graph,
            cache,
            meta,
            record_of,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Few-shot quadruples in file order.
    pub fn meta_quads(&self) -> &[Quadruple] {
        &self.meta
    }

    /// History of `e` before `t` on the history graph. Needed for candidate
    /// objects, which have no cached record.
    pub fn history(&self, e: EntityId, t: Timestamp, ell: usize, n_max: usize) -> HistoryWindow {
        self.graph.temporal_neighborhood(e, t, ell, n_max)
    }

    /// Cached `(subject, object)` histories of a few-shot line.
    pub fn cached(&self, q: &Quadruple) -> Option<&(HistoryWindow, HistoryWindow)> {
        self.record_of.get(q).map(|&i| &self.cache.records[i])
    }
}
