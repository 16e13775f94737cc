//! Ranks a handful of hand-written score vectors and summarizes them.

use tkg_oneshot::eval::{hit_at, mrr, over_time, rank_from_scores, write_buckets_csv, RankResult, TieRule};
use tkg_oneshot::kg::{Quadruple, Timestamp};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cases: [(&[f64], usize, u32); 4] = [
        (&[0.9, 0.1, 0.3], 0, 0),
        (&[0.2, 0.5, 0.5, 0.1], 2, 3),
        (&[0.7, 0.6, 0.5, 0.4, 0.3], 4, 8),
        (&[1.0, 1.0], 1, 15),
    ];
    let mut results = Vec::new();
    for (scores, truth, gap) in cases {
        let opt = rank_from_scores(scores, truth, TieRule::Optimistic);
        let pes = rank_from_scores(scores, truth, TieRule::Pessimistic);
        println!("scores {scores:?} truth {truth}: rank {opt} (pessimistic {pes})");
        results.push(RankResult {
            query: Quadruple::new(0, 0, truth as u32, 100 + gap),
            rank: opt,
            support_time: Timestamp(100),
        });
    }
    let ranks: Vec<usize> = results.iter().map(|r| r.rank).collect();
    println!("MRR {:.4}  Hit@1 {:.2}  Hit@3 {:.2}", mrr(&ranks)?, hit_at(&ranks, 1)?, hit_at(&ranks, 3)?);
    write_buckets_csv(std::io::stdout().lock(), &over_time(&results, 7)?)?;
    Ok(())
}
