//! The ICEWS-format fixture and counts taken straight from the raw file,
//! without the library.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use tkg_oneshot::cli::{cmd_build, BuildArgs, TimeFormatArg};

pub const LOW: usize = 30;
pub const HIGH: usize = 300;
pub const W: u32 = 60;
pub const VAL: usize = 3;
pub const TEST: usize = 5;

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/icews_sample.tsv")
}

pub fn args(out: &Path, seed: u64) -> BuildArgs {
    BuildArgs {
        events: fixture(),
        out: out.to_path_buf(),
        low: LOW,
        high: HIGH,
        w: W,
        ell: 5,
        nmax: 10,
        val: VAL,
        test: TEST,
        seed,
        time_format: TimeFormatArg::Label,
    }
}

type Row = (String, String, String, String);

pub fn rows(text: &str) -> Vec<Row> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 4, "{l}");
            (f[0].into(), f[1].into(), f[2].into(), f[3].into())
        })
        .collect()
}

pub struct Oracle {
    unique: BTreeSet<Row>,
    counts: BTreeMap<String, usize>,
    tick: BTreeMap<String, u32>,
    train_end: u32,
    val_end: u32,
    dataset_end: u32,
}

impl Oracle {
    pub fn new() -> Self {
        let raw = fs::read_to_string(fixture()).unwrap();
        let all = rows(&raw);
        assert_eq!(all.len(), 5000);
        let unique: BTreeSet<Row> = all.into_iter().collect();
        let mut counts = BTreeMap::new();
        for r in &unique {
            *counts.entry(r.1.clone()).or_insert(0) += 1;
        }
        let labels: BTreeSet<&String> = unique.iter().map(|r| &r.3).collect();
        let tick: BTreeMap<String, u32> = labels.iter().enumerate().map(|(i, l)| ((*l).clone(), i as u32)).collect();
        let dataset_end = tick.len() as u32;
        Oracle {
            unique,
            counts,
            tick,
            train_end: dataset_end - 2 * W,
            val_end: dataset_end - W,
            dataset_end,
        }
    }

    pub fn window(&self, partition: &str) -> (u32, u32) {
        match partition {
            "meta_train" => (0, self.train_end),
            "meta_val" => (self.train_end, self.val_end),
            "meta_test" => (self.val_end, self.dataset_end),
            p => panic!("unknown partition {p}"),
        }
    }
}

/// Builds the fixture into `dir` and asserts every artifact against the oracle.
pub fn check_fixture_build(dir: &Path) {
    let o = Oracle::new();
    let summary = cmd_build(&args(dir, 0), &mut std::io::sink()).unwrap();

    let frequent: BTreeSet<&String> = o.counts.iter().filter(|(_, &c)| c > HIGH).map(|(r, _)| r).collect();
    let sparse: BTreeSet<&String> = o.counts.iter().filter(|(_, &c)| (LOW..=HIGH).contains(&c)).map(|(r, _)| r).collect();
    assert!(!frequent.is_empty() && sparse.len() > VAL + TEST);

    // background: every frequent-relation event, nothing else
    let pre = rows(&fs::read_to_string(dir.join("pretrain.tsv")).unwrap());
    let mut pre_counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in &pre {
        *pre_counts.entry(r.1.clone()).or_insert(0) += 1;
        assert!(o.unique.contains(r));
    }
    assert_eq!(pre_counts.keys().collect::<BTreeSet<_>>(), frequent);
    for (r, c) in &pre_counts {
        assert_eq!(*c, o.counts[r], "{r}");
    }

    // windows
    let split: Value = serde_json::from_str(&fs::read_to_string(dir.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["trainEnd"], o.train_end);
    assert_eq!(split["valEnd"], o.val_end);
    assert_eq!(split["datasetEnd"], o.dataset_end);
    assert_eq!(split["w"], W);
    assert_eq!((summary.train_end, summary.val_end, summary.dataset_end), (o.train_end, o.val_end, o.dataset_end));

    // partitions and per-relation task counts
    let few = rows(&fs::read_to_string(dir.join("fewshot.tsv")).unwrap());
    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    let mut seen_lines = HashSet::new();
    let mut task_rels = BTreeSet::new();
    for (name, entry) in split.as_object().unwrap() {
        if ["trainEnd", "valEnd", "datasetEnd", "w"].contains(&name.as_str()) {
            continue;
        }
        task_rels.insert(name);
        let p = entry["partition"].as_str().unwrap();
        *sizes.entry(p.to_string()).or_insert(0) += 1;
        let (lo, hi) = o.window(p);
        let expected = o
            .unique
            .iter()
            .filter(|r| &r.1 == name && (lo..hi).contains(&o.tick[&r.3]))
            .count();
        let lines = entry["lines"].as_array().unwrap();
        assert_eq!(lines.len(), expected, "{name} in {p}");
        for l in lines {
            let i = l.as_u64().unwrap() as usize;
            assert!(seen_lines.insert(i));
            assert_eq!(&few[i].1, name);
            assert!((lo..hi).contains(&o.tick[&few[i].3]));
        }
    }
    assert_eq!(seen_lines.len(), few.len());
    assert_eq!(task_rels, sparse);
    assert_eq!(sizes["meta_val"], VAL);
    assert_eq!(sizes["meta_test"], TEST);
    assert_eq!(sizes["meta_train"], sparse.len() - VAL - TEST);
    assert_eq!((summary.meta_val, summary.meta_test), (VAL, TEST));

    // vocabulary
    let vocab: Value = serde_json::from_str(&fs::read_to_string(dir.join("vocab.json")).unwrap()).unwrap();
    let ents: BTreeSet<&String> = o.unique.iter().flat_map(|r| [&r.0, &r.2]).collect();
    assert_eq!(vocab["entities"].as_array().unwrap().len(), ents.len());
    assert_eq!(vocab["relations"].as_array().unwrap().len(), o.counts.len());
}

/// Two builds with one seed are identical; a third with another seed differs.
pub fn check_fixture_rebuilds() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    cmd_build(&args(a.path(), 4), &mut std::io::sink()).unwrap();
    cmd_build(&args(b.path(), 4), &mut std::io::sink()).unwrap();
    cmd_build(&args(c.path(), 5), &mut std::io::sink()).unwrap();
    for f in ["pretrain.tsv", "fewshot.tsv", "vocab.json", "split.json", "hist.bin"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.path().join("split.json")).unwrap(), fs::read(c.path().join("split.json")).unwrap());
}
