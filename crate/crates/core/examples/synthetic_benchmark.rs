//! Generates a synthetic event log, builds a benchmark split from it and
//! writes the artifacts to a directory (first argument, default a temp dir).

use std::path::PathBuf;

use tkg_oneshot::dataset::{build_meta_split, write_dataset, Benchmark, BuildConfig, Partition, PartitionSizes};
use tkg_oneshot::synth::{generate, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("tkg-synthetic"));

    let spec = SynthSpec::default();
    let data = generate(&spec)?;
    println!("{} events, {} planted rules, {} noise events", data.quads.len(), data.truth.rules.len(), data.truth.noise_events);

    let cfg = BuildConfig {
        thresholds: spec.suggested_thresholds(),
        w: 60,
        sizes: PartitionSizes { val: 3, test: 5 },
        seed: spec.seed,
    };
    let split = build_meta_split(&data.quads, &cfg)?;
    write_dataset(&out, &split, &data.vocab, spec.ell, 10)?;

    let bench = Benchmark::load(&out)?;
    for p in [Partition::MetaTrain, Partition::MetaVal, Partition::MetaTest] {
        let rels = bench.split.relations_in(p);
        let quads: usize = rels.iter().map(|r| bench.split.task_quads[r].len()).sum();
        println!("{:>10}: {:2} relations, {:4} quads", p.as_str(), rels.len(), quads);
    }
    let w = bench.split.windows;
    println!("windows: trainEnd {} valEnd {} datasetEnd {}", w.train_end.0, w.val_end.0, w.dataset_end.0);
    println!("artifacts in {}", out.display());
    Ok(())
}
