//! The acceptance gate. Each criterion runs in isolation and prints one
//! `PASS` or `FAIL` line; the test fails if any criterion does.
//!
//! Run with `cargo test --test acceptance -- --nocapture`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::fixture::{check_fixture_build, check_fixture_rebuilds};
use common::*;
use tkg_oneshot::cli::{cmd_build, BuildArgs, TimeFormatArg};
use tkg_oneshot::dataset::{build_meta_split, write_dataset, BuildConfig, Partition, PartitionSizes};
use tkg_oneshot::eval::{
    candidate_scores, evaluate_split, hit_at, mrr, over_time, rank_from_scores, rank_query, EvalConfig, Metrics,
    RankResult, TieRule,
};
use tkg_oneshot::kg::{EntityId, HistoryWindow, Quadruple, RelationId, TemporalKG, Timestamp};
use tkg_oneshot::model::{
    encode, encode_with_attention, pair_rep, positional_encoding, scaled_dot_attention, score, EncoderConfig,
    EncoderMode, ModelParams,
};
use tkg_oneshot::synth::{generate, SynthSpec};
use tkg_oneshot::tensor::{Tape, Tensor};
use tkg_oneshot::train::{episode_loss, hinge_loss, loss_trend, train, TrainConfig};

const SEEDS: u64 = 10;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = 0f64;
    for (name, shapes, op) in op_cases() {
        for seed in 0..SEEDS {
            let st = check_op(&shapes, op, seed);
            ensure(st.max_rel < 1e-4, || format!("{name} seed {seed}: rel err {:.2e}", st.max_rel))?;
            worst = worst.max(st.max_rel);
        }
    }
    for mode in [EncoderMode::Attention, EncoderMode::Flat] {
        let mut total = FdStats::default();
        for seed in 0..SEEDS {
            let st = check_composite(mode, seed);
            ensure(st.max_rel < 1e-4, || format!("{mode:?} seed {seed}: rel err {:.2e}", st.max_rel))?;
            total = total.merge(st);
        }
        // kinks must stay rare, otherwise the check is vacuous
        ensure(total.skipped * 20 < total.checked, || {
            format!("{mode:?}: {} of {} coordinates skipped", total.skipped, total.checked)
        })?;
        worst = worst.max(total.max_rel);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("max rel err {worst:.2e}, {secs:.1} s"))
}

fn random_history(rng: &mut ChaCha8Rng, ell: usize, ne: u32, nr: u32) -> HistoryWindow {
    HistoryWindow {
        time: Timestamp(ell as u32),
        snapshots: (0..ell)
            .map(|_| {
                let mut s: Vec<_> = (0..rng.gen_range(1..5))
                    .map(|_| (RelationId(rng.gen_range(0..nr)), EntityId(rng.gen_range(0..ne))))
                    .collect();
                s.sort();
                s.dedup();
                s
            })
            .collect(),
    }
}

fn encoder(d: usize, ell: usize, heads: usize, layers: usize, mode: EncoderMode) -> EncoderConfig {
    EncoderConfig {
        d,
        ell,
        n_max: 4,
        n_heads: heads,
        n_layers: layers,
        d_inner: 16,
        d_out: None,
        mode,
    }
}

fn c2_attention() -> Outcome {
    let mut rows = 0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ell, heads, layers) = (rng.gen_range(1..9), [1, 2, 4][seed as usize % 3], 1 + seed as usize % 2);
        let m = ModelParams::<f64>::init(encoder(8, ell, heads, layers, EncoderMode::Attention), 12, 4, seed).unwrap();
        let h = random_history(&mut rng, ell, 12, 4);
        let (_, weights) = encode_with_attention(&m, &h, EntityId(3)).unwrap();
        ensure(weights.len() == heads * layers, || format!("{} weight matrices", weights.len()))?;
        for w in &weights {
            for i in 0..ell {
                let s: f64 = w.row(i).iter().sum();
                ensure((s - 1.0).abs() <= 1e-6, || format!("seed {seed}: row sums to {s}"))?;
                rows += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..50 {
        let (n, dk, dv) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
        let q = Tensor::<f64>::from_fn(&[n, dk], |_| rng.gen_range(-5.0..5.0));
        let k = Tensor::<f64>::from_fn(&[1, dk], |_| rng.gen_range(-5.0..5.0));
        let v = Tensor::<f64>::from_fn(&[1, dv], |_| rng.gen_range(-5.0..5.0));
        let (out, _) = scaled_dot_attention(&q, &k, &v).unwrap();
        for i in 0..n {
            ensure(out.row(i) == v.row(0), || format!("single key gave {:?}, expected {:?}", out.row(i), v.row(0)))?;
        }
    }

    let mut worst = 0f64;
    for ell in [1, 2, 5, 20, 64, 100, 128] {
        for d_model in [2, 4, 8, 32, 50, 100, 128] {
            let pe = positional_encoding::<f64>(ell, d_model);
            for pos in 0..ell {
                for i in 0..d_model / 2 {
                    let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
                    worst = worst.max((pe.at(pos, 2 * i) - angle.sin()).abs());
                    worst = worst.max((pe.at(pos, 2 * i + 1) - angle.cos()).abs());
                }
            }
        }
    }
    ensure(worst <= 1e-6, || format!("positional table off by {worst:.2e}"))?;
    Ok(format!("{rows} attention rows, positional table within {worst:.1e}"))
}

fn c3_snapshot_order() -> Outcome {
    let mut min_att = f64::INFINITY;
    let mut max_flat = 0f64;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let ell = rng.gen_range(2..7);
        let h = random_history(&mut rng, ell, 12, 4);
        let mut perm = h.clone();
        while perm.snapshots == h.snapshots {
            perm.snapshots.shuffle(&mut rng);
        }
        let diff = |mode| {
            let m = ModelParams::<f64>::init(encoder(8, ell, 2, 1, mode), 12, 4, seed).unwrap();
            let a = encode(&m, &h, EntityId(5)).unwrap();
            let b = encode(&m, &perm, EntityId(5)).unwrap();
            a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let att = diff(EncoderMode::Attention);
        let flat = diff(EncoderMode::Flat);
        ensure(att > 1e-6, || format!("seed {seed}: attention output moved only {att:.2e}"))?;
        ensure(flat <= 1e-6, || format!("seed {seed}: flat output moved {flat:.2e}"))?;
        min_att = min_att.min(att);
        max_flat = max_flat.max(flat);
    }
    Ok(format!("attention diff ≥ {min_att:.2e}, flat diff ≤ {max_flat:.1e}"))
}

fn check_split_windows(quads: &[Quadruple], cfg: &BuildConfig) -> Result<(), String> {
    let split = build_meta_split(quads, cfg).map_err(|e| e.to_string())?;
    let end = quads.iter().map(|q| q.time.0).max().unwrap() + 1;
    let windows = [
        (Partition::MetaTrain, 0, end - 2 * cfg.w),
        (Partition::MetaVal, end - 2 * cfg.w, end - cfg.w),
        (Partition::MetaTest, end - cfg.w, end),
    ];
    let mut seen = BTreeSet::new();
    for (p, lo, hi) in windows {
        for q in split.quads_of(p) {
            ensure((lo..hi).contains(&q.time.0), || format!("{q:?} outside {p:?} [{lo}, {hi})"))?;
            ensure(split.partition[&q.relation] == p, || format!("{q:?} filed under {p:?}"))?;
            ensure(seen.insert(q), || format!("{q:?} in two partitions"))?;
        }
    }
    for q in &split.background {
        ensure(!split.partition.contains_key(&q.relation), || format!("task relation in background: {q:?}"))?;
    }
    let sizes = |p| split.relations_in(p).len();
    ensure(sizes(Partition::MetaVal) == cfg.sizes.val && sizes(Partition::MetaTest) == cfg.sizes.test, || {
        "wrong partition sizes".into()
    })
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn c4_split_soundness() -> Outcome {
    let mut checked = 0;
    for seed in 0..5 {
        let spec = SynthSpec {
            seed,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        for (w, val, test) in [(60, 3, 5), (30, 2, 2), (100, 1, 6)] {
            let cfg = BuildConfig {
                thresholds: spec.suggested_thresholds(),
                w,
                sizes: PartitionSizes { val, test },
                seed,
            };
            check_split_windows(&data.quads, &cfg).map_err(|e| format!("synthetic seed {seed} w {w}: {e}"))?;
            checked += 1;
        }
        let cfg = BuildConfig {
            thresholds: spec.suggested_thresholds(),
            w: 60,
            sizes: PartitionSizes { val: 3, test: 5 },
            seed,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let split = build_meta_split(&data.quads, &cfg).unwrap();
            write_dataset(d.path(), &split, &data.vocab, spec.ell, 10).unwrap();
        }
        ensure(dir_bytes(a.path()) == dir_bytes(b.path()), || format!("synthetic seed {seed}: rebuild differs"))?;
    }
    let dir = tempfile::tempdir().unwrap();
    check_fixture_build(dir.path());
    check_fixture_rebuilds();
    Ok(format!("{checked} synthetic splits and the fixture"))
}

/// Rank by sorting: position of the first (optimistic) or last
/// (pessimistic) score equal to the target in descending order.
fn sorted_rank(scores: &[f64], truth: usize, tie: TieRule) -> usize {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let target = scores[truth];
    let pos = match tie {
        TieRule::Optimistic => s.iter().position(|&x| x == target),
        TieRule::Pessimistic => s.iter().rposition(|&x| x == target),
    };
    pos.unwrap() + 1
}

fn ranking_model() -> (ModelParams<f64>, TemporalKG) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ne, nr) = (100u32, 4u32);
    let quads: Vec<Quadruple> = (0..800)
        .map(|_| {
            let s = rng.gen_range(0..ne);
            Quadruple::new(s, rng.gen_range(0..nr), (s + rng.gen_range(1..ne)) % ne, rng.gen_range(0..20))
        })
        .collect();
    let graph = TemporalKG::new(quads, ne as usize, nr as usize);
    let cfg = EncoderConfig {
        d: 8,
        ell: 3,
        n_max: 5,
        n_heads: 2,
        n_layers: 1,
        d_inner: 16,
        d_out: None,
        mode: EncoderMode::Attention,
    };
    (ModelParams::init(cfg, ne as usize, nr as usize, 5).unwrap(), graph)
}

fn c5_ranking() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut ties = 0;
    for _ in 0..1000 {
        // coarse quantisation makes ties common
        let levels = rng.gen_range(3..40);
        let scores: Vec<f64> = (0..100).map(|_| rng.gen_range(0..levels) as f64 / levels as f64).collect();
        let truth = rng.gen_range(0..100);
        ties += scores.iter().filter(|&&s| s == scores[truth]).count() - 1;
        for tie in [TieRule::Optimistic, TieRule::Pessimistic] {
            let (got, want) = (rank_from_scores(&scores, truth, tie), sorted_rank(&scores, truth, tie));
            ensure(got == want, || format!("{tie:?}: rank {got}, sort oracle {want}"))?;
        }
    }
    ensure(ties > 0, || "no ties generated".into())?;

    let (model, graph) = ranking_model();
    let mut queries = 0;
    for _ in 0..20 {
        let support = Quadruple::new(rng.gen_range(0..100), 1, rng.gen_range(0..100), rng.gen_range(0..10));
        let q = Quadruple::new(rng.gen_range(0..100), 1, rng.gen_range(0..100), rng.gen_range(10..20));
        let batched = candidate_scores(&model, &graph, q, support).unwrap();
        let sup = pair_rep(&model, &graph, support.subject, support.object, support.time).unwrap();
        let direct: Vec<f64> = (0..100u32)
            .map(|e| {
                let rep = pair_rep(&model, &graph, q.subject, EntityId(e), q.time).unwrap();
                score(&model, &sup, &rep).unwrap()
            })
            .collect();
        for (a, b) in batched.data().iter().zip(&direct) {
            ensure((a - b).abs() <= 1e-9 * b.abs().max(1.0), || format!("batched score {a} vs direct {b}"))?;
        }
        for tie in [TieRule::Optimistic, TieRule::Pessimistic] {
            let got = rank_query(&model, &graph, q, support, tie).unwrap();
            let want = sorted_rank(batched.data(), q.object.index(), tie);
            ensure(got.rank == want, || format!("rank_query {} vs oracle {want}", got.rank))?;
            ensure(got.support_time == support.time, || "support time lost".into())?;
        }
        queries += 1;
    }

    let mut worst = 0f64;
    for _ in 0..200 {
        let ranks: Vec<usize> = (0..rng.gen_range(1..300)).map(|_| rng.gen_range(1..=100)).collect();
        let n = ranks.len() as f64;
        let direct_mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let direct_hit = |k| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
        let m = Metrics::from_ranks(&ranks);
        for (got, want) in [
            (mrr(&ranks).unwrap(), direct_mrr),
            (m.mrr, direct_mrr),
            (m.hit1, direct_hit(1)),
            (m.hit5, direct_hit(5)),
            (m.hit10, direct_hit(10)),
            (hit_at(&ranks, 3).unwrap(), direct_hit(3)),
        ] {
            worst = worst.max((got - want).abs());
        }
        ensure(m.count == ranks.len(), || "count mismatch".into())?;
    }
    ensure(worst <= 1e-12, || format!("metric drift {worst:.2e}"))?;
    ensure((mrr(&[1, 4, 10]).unwrap() - 0.45).abs() <= 1e-12, || "mrr [1,4,10] != 0.45".into())?;
    Ok(format!("1000 vectors ({ties} ties), {queries} model queries, metrics within {worst:.1e}"))
}

fn c6_random_baseline() -> Outcome {
    let bench = baseline_bench(0);
    ensure(bench.num_entities() == 50, || format!("{} entities", bench.num_entities()))?;
    let model =
        ModelParams::<f32>::init(learning_encoder(EncoderMode::Attention), 50, bench.num_relations(), 0).unwrap();
    let report = evaluate_split(&bench, Partition::MetaTest, &model, &EvalConfig::default()).unwrap();
    let (expect, var) = uniform_reciprocal_rank(50);
    let sigma = (var / report.count as f64).sqrt();
    let msg = format!("MRR {:.4} vs {expect:.4} ± 3·{sigma:.4} over {} queries", report.mrr, report.count);
    ensure(report.count >= 500, || msg.clone())?;
    ensure((report.mrr - expect).abs() < 3.0 * sigma, || msg.clone())?;
    Ok(msg)
}

struct LearningRun {
    mode: EncoderMode,
    seed: u64,
    mrr: f64,
    first: f64,
    last: f64,
}

fn learning_runs() -> (Vec<LearningRun>, f64) {
    let start = Instant::now();
    let jobs: Vec<(EncoderMode, u64)> = [EncoderMode::Attention, EncoderMode::Flat]
        .into_iter()
        .flat_map(|m| (0..3).map(move |s| (m, s)))
        .collect();
    let runs = jobs
        .into_par_iter()
        .map(|(mode, seed)| {
            let bench = learning_bench(seed);
            let cfg = TrainConfig {
                episodes: 2000,
                w: 60,
                seed,
                eval_every: 0,
                encoder: learning_encoder(mode),
                ..Default::default()
            };
            let out = train(&bench, &cfg, None).unwrap();
            let report = evaluate_split(&bench, Partition::MetaTest, &out.params, &cfg.eval).unwrap();
            let (first, last) = loss_trend(&out.log, 100).unwrap();
            LearningRun {
                mode,
                seed,
                mrr: report.mrr,
                first,
                last,
            }
        })
        .collect();
    (runs, start.elapsed().as_secs_f64())
}

fn mean_mrr(runs: &[LearningRun], mode: EncoderMode) -> f64 {
    let v: Vec<f64> = runs.iter().filter(|r| r.mode == mode).map(|r| r.mrr).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn per_seed(runs: &[LearningRun], mode: EncoderMode) -> String {
    runs.iter()
        .filter(|r| r.mode == mode)
        .map(|r| format!("{:.3}", r.mrr))
        .collect::<Vec<_>>()
        .join("/")
}

fn c7_learning(runs: &[LearningRun], secs: f64) -> Outcome {
    let (baseline, _) = uniform_reciprocal_rank(50);
    let mean = mean_mrr(runs, EncoderMode::Attention);
    for r in runs.iter().filter(|r| r.mode == EncoderMode::Attention) {
        ensure(r.last < r.first, || format!("seed {}: loss {:.3} -> {:.3}", r.seed, r.first, r.last))?;
    }
    let msg = format!(
        "mean MRR {mean:.4} (seeds {}) vs 3×{baseline:.4}, {secs:.0} s",
        per_seed(runs, EncoderMode::Attention)
    );
    ensure(mean >= 3.0 * baseline, || msg.clone())?;
    ensure(secs < 900.0, || msg.clone())?;
    Ok(msg)
}

fn c8_ablation(runs: &[LearningRun]) -> Outcome {
    let (att, flat) = (mean_mrr(runs, EncoderMode::Attention), mean_mrr(runs, EncoderMode::Flat));
    let msg = format!(
        "attention {att:.4} ({}) vs flat {flat:.4} ({})",
        per_seed(runs, EncoderMode::Attention),
        per_seed(runs, EncoderMode::Flat)
    );
    ensure(att >= flat, || msg.clone())?;
    Ok(msg)
}

fn c9_real_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    check_fixture_build(dir.path());
    let Ok(events) = std::env::var("TKG_ICEWS_EVENTS") else {
        return Ok("fixture matches counting oracle; full ICEWS check skipped (TKG_ICEWS_EVENTS unset)".into());
    };
    let out = tempfile::tempdir().unwrap();
    let args = BuildArgs {
        events: events.into(),
        out: out.path().to_path_buf(),
        low: 50,
        high: 500,
        w: 120,
        ell: 20,
        nmax: 50,
        val: 5,
        test: 14,
        seed: 0,
        time_format: TimeFormatArg::Label,
    };
    let s = cmd_build(&args, &mut std::io::sink()).map_err(|e| e.to_string())?;
    let few = fs::read_to_string(out.path().join("fewshot.tsv")).unwrap().lines().count();
    // relations inside either frequency band; rarer ones are not counted
    let background: BTreeSet<String> = fs::read_to_string(out.path().join("pretrain.tsv"))
        .unwrap()
        .lines()
        .map(|l| l.split('\t').nth(1).unwrap().to_string())
        .collect();
    let relations = background.len() + s.meta_train + s.meta_val + s.meta_test;
    let got = (s.entities, relations, s.meta_train, s.meta_val, s.meta_test, few);
    ensure(got == (2419, 153, 66, 5, 14, 7535), || format!("ICEWS statistics {got:?}"))?;
    Ok("fixture matches counting oracle; ICEWS statistics match".into())
}

fn c10_formulas() -> Outcome {
    ensure(hinge_loss(0.7, 0.7, 10.0) == 10.0, || "equal scores".into())?;
    ensure(hinge_loss(3.5, -6.5, 10.0) == 0.0, || "margin met".into())?;
    ensure((hinge_loss(1.0, 0.2, 10.0) - 9.2).abs() < 1e-12, || "1.0/0.2".into())?;

    // zero parameters give every pair the same score, so the loss is the margin
    let (graph, ep) = tiny_problem(0);
    let model = ModelParams::<f64>::init(tiny_config(EncoderMode::Attention), 6, 3, 0).unwrap().zeroed();
    for margin in [1.0, 10.0] {
        let mut tape = Tape::with_params(&model.store);
        let loss = episode_loss(&mut tape, &model, &graph, &ep, margin).unwrap();
        let v = tape.value(loss).item();
        ensure(v == margin, || format!("zero-parameter loss {v} with margin {margin}"))?;
    }

    let result = |gap: u32, rank: usize| RankResult {
        query: Quadruple::new(0, 0, 1, 100 + gap),
        rank,
        support_time: Timestamp(100),
    };
    for (gap, bucket) in [(0, 0), (6, 0), (7, 1), (13, 1), (14, 2)] {
        let b = over_time(&[result(gap, 1)], 7).unwrap();
        ensure(b.len() == 1 && b[0].bucket == bucket, || format!("gap {gap} went to {:?}", b[0].bucket))?;
        ensure(b[0].start == 7 * bucket && b[0].end == 7 * (bucket + 1), || "bucket bounds".into())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let results: Vec<RankResult> = (0..30).map(|_| result(rng.gen_range(0..60), rng.gen_range(1..=50))).collect();
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for r in &results {
        groups.entry((r.query.time.0 - 100) / 7).or_default().push(r.rank as f64);
    }
    let buckets = over_time(&results, 7).unwrap();
    ensure(buckets.len() == groups.len(), || "bucket count".into())?;
    for (b, (k, ranks)) in buckets.iter().zip(&groups) {
        let n = ranks.len() as f64;
        let want_mrr = ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n;
        let want_hit = ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n;
        ensure(b.bucket == *k && b.count == ranks.len(), || format!("bucket {k}"))?;
        ensure((b.mrr - want_mrr).abs() <= 1e-12 && (b.hit10 - want_hit).abs() <= 1e-12, || {
            format!("bucket {k} metrics")
        })?;
    }
    Ok(format!("hinge, zero-model loss and {} over-time buckets exact", buckets.len()))
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match &outcome {
        Ok(detail) => println!("criterion {n:>2} {name}: PASS ({detail})"),
        Err(why) => println!("criterion {n:>2} {name}: FAIL ({why})"),
    }
    outcome.is_ok()
}

#[test]
fn acceptance() {
    let (runs, secs) = learning_runs();
    let outcomes = [
        run(1, "gradient correctness", c1_gradients),
        run(2, "attention invariants", c2_attention),
        run(3, "snapshot order", c3_snapshot_order),
        run(4, "split soundness", c4_split_soundness),
        run(5, "ranking oracle", c5_ranking),
        run(6, "random baseline", c6_random_baseline),
        run(7, "synthetic learning", || c7_learning(&runs, secs)),
        run(8, "flat ablation", || c8_ablation(&runs)),
        run(9, "real pipeline", c9_real_pipeline),
        run(10, "exact formulas", c10_formulas),
    ];
    let failed: Vec<usize> = (1..=10).filter(|&n| !outcomes[n - 1]).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
