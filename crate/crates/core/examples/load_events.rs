//! Parses a tab-separated event log (first argument) and reports relation
//! frequencies against the sparse-task thresholds.
//!
//! Usage: `load_events EVENTS.tsv [low] [high]`

use std::fs::File;
use std::io::BufReader;

use tkg_oneshot::dataset::{split_by_frequency, FrequencyThresholds};
use tkg_oneshot::kg::{deduplicate, load_events, TimeFormat};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let Some(path) = args.get(1) else {
        eprintln!("usage: load_events EVENTS.tsv [low] [high]");
        std::process::exit(2);
    };
    let low = args.get(2).map_or(Ok(50), |s| s.parse())?;
    let high = args.get(3).map_or(Ok(500), |s| s.parse())?;

    let (vocab, quads) = load_events(BufReader::new(File::open(path)?), TimeFormat::Label)?;
    let unique = deduplicate(&quads);
    println!(
        "{} lines, {} unique events, {} entities, {} relations, {} time labels",
        quads.len(),
        unique.len(),
        vocab.num_entities(),
        vocab.num_relations(),
        vocab.num_times()
    );
    let th = FrequencyThresholds::new(low, high)?;
    let split = split_by_frequency(&unique, th)?;
    let sparse = split.sparse_relations(th);
    println!("{} background quads, {} task relations in [{low}, {high}]", split.background.len(), sparse.len());
    for r in sparse.iter().take(10) {
        println!("  {} ({} events)", vocab.relation_name(*r).unwrap_or("?"), split.counts[r]);
    }
    Ok(())
}
