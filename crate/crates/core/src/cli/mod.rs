//! Command-line pipeline: benchmark construction, training, evaluation, the
//! encoder/query-mode ablation grid and the margin sweep.
//!
//! Every command maps its failures onto a fixed exit-code contract (see
//! [`CliError::exit_code`]) and reports them as one `ERR` line on stderr.

mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    build_meta_split, write_dataset, Benchmark, BuildConfig, DatasetError, FrequencyThresholds, Partition,
    PartitionSizes, FEWSHOT_FILE, HIST_FILE, PRETRAIN_FILE, SPLIT_FILE, VOCAB_FILE,
};
use crate::eval::{evaluate_split, write_buckets_csv, EvalConfig, EvalError, MetricsReport, SupportRule, TieRule};
use crate::kg::{deduplicate, load_events, KgError, TimeFormat};
use crate::model::{EncoderMode, ModelError, ModelParams};
use crate::synth::{generate, SynthError, SynthSpec};
use crate::tensor::{read_archive, ArchiveError};
use crate::train::{loss_trend, train, QueryMode, TrainConfig, TrainError, TrainOutcome};

pub use manifest::{file_digest, fnv1a64, RunManifest, MANIFEST_FILE};

pub const REPORT_FILE: &str = "report.json";
pub const BUCKETS_FILE: &str = "over_time.csv";
pub const TEST_REPORT_FILE: &str = "test_report.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const MARGINS_FILE: &str = "margins.csv";
pub const EVENTS_FILE: &str = "events.tsv";
pub const TRUTH_FILE: &str = "truth.json";

/// Benchmark artifacts hashed into manifests.
const DATA_FILES: [&str; 5] = [PRETRAIN_FILE, FEWSHOT_FILE, VOCAB_FILE, SPLIT_FILE, HIST_FILE];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Format(_) => 4,
            CliError::Numeric(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Input(_) => "input",
            CliError::Infeasible(_) => "infeasible",
            CliError::Format(_) => "format",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// The single stderr line for this failure.
    pub fn err_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("ERR {} {}", self.kind(), msg)
    }
}

fn io_err(context: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{context}: {e}"))
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::BadVocab(_) => CliError::Format(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::EmptySparseSet { .. } | DatasetError::InfeasiblePartition(_) | DatasetError::SpanTooShort { .. } => {
                CliError::Infeasible(e.to_string())
            }
            DatasetError::Format { .. } => CliError::Format(e.to_string()),
            DatasetError::Kg(k) => k.into(),
            DatasetError::InvalidThresholds { .. } | DatasetError::ReservedName(_) | DatasetError::Io(_) => {
                CliError::Input(e.to_string())
            }
        }
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        match e {
            ArchiveError::Io(ref io) if io.kind() != std::io::ErrorKind::UnexpectedEof => CliError::Input(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(_) => CliError::Input(e.to_string()),
            _ => CliError::Format(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::EmptyRankList | EvalError::EmptyPartition(_) => CliError::Infeasible(e.to_string()),
            EvalError::NegativeGap { .. } => CliError::Format(e.to_string()),
            EvalError::Model(m) => m.into(),
            EvalError::ZeroBucketWidth | EvalError::Io(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NoFeasibleTask => CliError::Infeasible(e.to_string()),
            TrainError::NonFiniteLoss(_) => CliError::Numeric(e.to_string()),
            TrainError::Config(_) | TrainError::Io(_) => CliError::Input(e.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Archive(a) => a.into(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Kg(k) => k.into(),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tkg", version, about = "One-shot link prediction over temporal knowledge graphs")]
pub struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build benchmark artifacts from a tab-separated event log.
    Build(BuildArgs),
    /// Meta-train a model on a built benchmark.
    Train(TrainArgs),
    /// Rank a checkpoint on meta-val or meta-test.
    Eval(EvalArgs),
    /// Run the encoder × query-mode grid.
    Ablate(AblateArgs),
    /// Train once per margin and tabulate meta-test MRR.
    MarginSweep(MarginArgs),
    /// Write a synthetic event log with a planted precursor rule.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TimeFormatArg {
    Label,
    Integer,
}

impl From<TimeFormatArg> for TimeFormat {
    fn from(t: TimeFormatArg) -> Self {
        match t {
            TimeFormatArg::Label => TimeFormat::Label,
            TimeFormatArg::Integer => TimeFormat::Integer,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub low: usize,
    #[arg(long, default_value_t = 500)]
    pub high: usize,
    #[arg(long, default_value_t = 120)]
    pub w: u32,
    #[arg(long, default_value_t = 20)]
    pub ell: usize,
    #[arg(long, default_value_t = 50)]
    pub nmax: usize,
    #[arg(long, default_value_t = 5)]
    pub val: usize,
    #[arg(long, default_value_t = 15)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TimeFormatArg::Label)]
    pub time_format: TimeFormatArg,
}

#[derive(Clone, Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Repeat with seeds seed, seed+1, ... and report the mean.
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Test,
}

impl From<SplitArg> for Partition {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Val => Partition::MetaVal,
            SplitArg::Test => Partition::MetaTest,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TieArg {
    Optimistic,
    Pessimistic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SupportArg {
    WindowEarliest,
    TrainingPeriod,
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Directory for the report, bucket CSV and manifest; stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = TieArg::Optimistic)]
    pub tie: TieArg,
    #[arg(long, value_enum, default_value_t = SupportArg::WindowEarliest)]
    pub support: SupportArg,
    #[arg(long, default_value_t = 7)]
    pub bucket_width: u32,
}

impl EvalArgs {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            tie_rule: match self.tie {
                TieArg::Optimistic => TieRule::Optimistic,
                TieArg::Pessimistic => TieRule::Pessimistic,
            },
            support: match self.support {
                SupportArg::WindowEarliest => SupportRule::WindowEarliest,
                SupportArg::TrainingPeriod => SupportRule::TrainingPeriod,
            },
            bucket_width: self.bucket_width,
        }
    }
}

#[derive(Clone, Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON training config plus an optional `runs` count.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct MarginArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated margins, e.g. `1,10,18`.
    #[arg(long)]
    pub margins: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// JSON generator spec; omitted fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let f = File::open(path).map_err(|e| io_err(path.display(), e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path.display(), e))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path.display(), e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path.display(), e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir.display(), e))
}

/// Rejects an output directory equal to, or nested in, an input directory.
fn check_separate(data: &Path, out: &Path) -> Result<(), CliError> {
    let (Ok(d), Ok(o)) = (std::path::absolute(data), std::path::absolute(out)) else {
        return Ok(());
    };
    let d = d.canonicalize().unwrap_or(d);
    if o.starts_with(&d) || out.canonicalize().is_ok_and(|c| c.starts_with(&d)) {
        return Err(CliError::Input(format!("output {} lies inside input {}", out.display(), data.display())));
    }
    Ok(())
}

pub fn load_benchmark(dir: &Path) -> Result<Benchmark, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("benchmark directory {} not found", dir.display())));
    }
    for f in DATA_FILES {
        if !dir.join(f).is_file() {
            return Err(CliError::Input(format!("{} is missing {f}", dir.display())));
        }
    }
    Benchmark::load(dir).map_err(|e| match e {
        DatasetError::Io(m) => CliError::Input(m),
        other => CliError::Format(other.to_string()),
    })
}

pub fn load_model(path: &Path, bench: &Benchmark) -> Result<ModelParams<f32>, CliError> {
    let f = File::open(path).map_err(|e| io_err(path.display(), e))?;
    let store = read_archive::<f32, _>(BufReader::new(f))?;
    let cfg = ModelParams::infer_config(&store, bench.cache.ell, bench.cache.n_max)?;
    Ok(ModelParams::from_store(store, cfg, bench.num_entities(), bench.num_relations())?)
}

fn data_manifest(command: &str, data: &Path, config: serde_json::Value, seeds: Vec<u64>) -> Result<RunManifest, CliError> {
    let mut m = RunManifest::begin(command, config, seeds);
    for f in DATA_FILES {
        m.add_input(&format!("data/{f}"), &data.join(f)).map_err(|e| io_err(f, e))?;
    }
    Ok(m)
}

fn load_train_config(path: Option<&Path>, bench: &Benchmark) -> Result<TrainConfig, CliError> {
    let cfg: TrainConfig = match path {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if cfg.encoder.ell != bench.cache.ell || cfg.encoder.n_max != bench.cache.n_max {
        return Err(CliError::Input(format!(
            "config has ell={} nMax={}, benchmark was built with ell={} nMax={}",
            cfg.encoder.ell, cfg.encoder.n_max, bench.cache.ell, bench.cache.n_max
        )));
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BuildSummary {
    pub entities: usize,
    pub relations: usize,
    pub background_quads: usize,
    pub meta_train: usize,
    pub meta_val: usize,
    pub meta_test: usize,
    pub train_end: u32,
    pub val_end: u32,
    pub dataset_end: u32,
}

pub fn cmd_build(args: &BuildArgs, progress: &mut dyn Write) -> Result<BuildSummary, CliError> {
    let f = File::open(&args.events).map_err(|e| io_err(args.events.display(), e))?;
    let (vocab, quads) = load_events(BufReader::new(f), args.time_format.into())?;
    let quads = deduplicate(&quads);
    let cfg = BuildConfig {
        thresholds: FrequencyThresholds::new(args.low, args.high)?,
        w: args.w,
        sizes: PartitionSizes {
            val: args.val,
            test: args.test,
        },
        seed: args.seed,
    };
    if args.ell == 0 || args.nmax == 0 {
        return Err(CliError::Input("ell and nmax must be at least 1".into()));
    }
    let split = build_meta_split(&quads, &cfg)?;
    create_dir(&args.out)?;
    let config = serde_json::json!({
        "build": cfg,
        "ell": args.ell,
        "nMax": args.nmax,
        "timeFormat": TimeFormat::from(args.time_format),
    });
    let mut manifest = RunManifest::begin("build", config, vec![args.seed]);
    manifest.add_input("events", &args.events).map_err(|e| io_err(args.events.display(), e))?;
    write_dataset(&args.out, &split, &vocab, args.ell, args.nmax)?;
    manifest.finish(&args.out).map_err(|e| io_err(MANIFEST_FILE, e))?;

    let summary = BuildSummary {
        entities: vocab.num_entities(),
        relations: vocab.num_relations(),
        background_quads: split.background.len(),
        meta_train: split.relations_in(Partition::MetaTrain).len(),
        meta_val: split.relations_in(Partition::MetaVal).len(),
        meta_test: split.relations_in(Partition::MetaTest).len(),
        train_end: split.windows.train_end.0,
        val_end: split.windows.val_end.0,
        dataset_end: split.windows.dataset_end.0,
    };
    let _ = writeln!(
        progress,
        "built {}: {} entities, {} relations, {} background quads, tasks {}/{}/{} (train/val/test), windows {}/{}/{}",
        args.out.display(),
        summary.entities,
        summary.relations,
        summary.background_quads,
        summary.meta_train,
        summary.meta_val,
        summary.meta_test,
        summary.train_end,
        summary.val_end,
        summary.dataset_end
    );
    Ok(summary)
}

/// Validation-selected parameters when validation ran, else the final ones.
pub fn selected_params(outcome: &TrainOutcome) -> &ModelParams<f32> {
    outcome.best.as_ref().map_or(&outcome.params, |(_, _, p)| p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SeedRun {
    pub seed: u64,
    pub first_loss: Option<f64>,
    pub last_loss: Option<f64>,
    pub test_mrr: f64,
    pub test_hit10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TrainSummary {
    pub runs: Vec<SeedRun>,
    pub mean_mrr: f64,
    pub mean_hit10: f64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Trains with `cfg` under each seed and scores meta-test with the selected
/// parameters. Writes per-run artifacts into `dir_of(seed)` when given.
fn train_runs(
    bench: &Benchmark,
    cfg: &TrainConfig,
    seeds: &[u64],
    dir_of: Option<&dyn Fn(u64) -> PathBuf>,
    progress: &mut dyn Write,
) -> Result<(Vec<SeedRun>, Vec<MetricsReport>), CliError> {
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..*cfg };
        let dir = dir_of.map(|f| f(seed));
        let outcome = train(bench, &cfg, dir.as_deref())?;
        let report = evaluate_split(bench, Partition::MetaTest, selected_params(&outcome), &cfg.eval)?;
        let trend = loss_trend(&outcome.log, (outcome.log.len() / 10).clamp(1, 100));
        let run = SeedRun {
            seed,
            first_loss: trend.map(|t| t.0),
            last_loss: trend.map(|t| t.1),
            test_mrr: report.mrr,
            test_hit10: report.hit10,
        };
        let _ = writeln!(
            progress,
            "seed {seed}: loss {:.4} -> {:.4}, meta-test MRR {:.4} Hit@10 {:.4} over {} queries",
            run.first_loss.unwrap_or(f64::NAN),
            run.last_loss.unwrap_or(f64::NAN),
            report.mrr,
            report.hit10,
            report.count
        );
        runs.push(run);
        reports.push(report);
    }
    Ok((runs, reports))
}

pub fn cmd_train(args: &TrainArgs, progress: &mut dyn Write) -> Result<TrainSummary, CliError> {
    if args.runs == 0 {
        return Err(CliError::Input("--runs must be at least 1".into()));
    }
    check_separate(&args.data, &args.out)?;
    let bench = load_benchmark(&args.data)?;
    let mut cfg = load_train_config(args.config.as_deref(), &bench)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let seeds: Vec<u64> = (0..args.runs as u64).map(|i| cfg.seed + i).collect();
    create_dir(&args.out)?;
    let config = serde_json::to_value(cfg).map_err(|e| CliError::Input(e.to_string()))?;
    let mut manifest = data_manifest("train", &args.data, config, seeds.clone())?;
    if let Some(p) = &args.config {
        manifest.add_input("config", p).map_err(|e| io_err(p.display(), e))?;
    }
    manifest.write(&args.out).map_err(|e| io_err(MANIFEST_FILE, e))?;

    let out = args.out.clone();
    let single = seeds.len() == 1;
    let dir_of = move |s: u64| if single { out.clone() } else { out.join(format!("seed-{s}")) };
    let (runs, reports) = train_runs(&bench, &cfg, &seeds, Some(&dir_of), progress)?;
    for (run, report) in runs.iter().zip(&reports) {
        write_json(&dir_of(run.seed).join(TEST_REPORT_FILE), report)?;
    }
    let summary = TrainSummary {
        mean_mrr: mean(runs.iter().map(|r| r.test_mrr)),
        mean_hit10: mean(runs.iter().map(|r| r.test_hit10)),
        runs,
    };
    write_json(&args.out.join(SUMMARY_FILE), &summary)?;
    manifest.finish(&args.out).map_err(|e| io_err(MANIFEST_FILE, e))?;
    let _ = writeln!(
        progress,
        "mean meta-test MRR {:.4} Hit@10 {:.4} over {} run(s)",
        summary.mean_mrr,
        summary.mean_hit10,
        summary.runs.len()
    );
    Ok(summary)
}

pub fn cmd_eval(args: &EvalArgs, progress: &mut dyn Write) -> Result<MetricsReport, CliError> {
    if let Some(out) = &args.out {
        check_separate(&args.data, out)?;
    }
    let bench = load_benchmark(&args.data)?;
    let model = load_model(&args.model, &bench)?;
    let cfg = args.eval_config();
    let report = evaluate_split(&bench, args.split.into(), &model, &cfg)?;
    match &args.out {
        Some(out) => {
            create_dir(out)?;
            let config = serde_json::to_value(cfg).map_err(|e| CliError::Input(e.to_string()))?;
            let mut manifest = data_manifest("eval", &args.data, config, Vec::new())?;
            manifest.add_input("model", &args.model).map_err(|e| io_err(args.model.display(), e))?;
            write_json(&out.join(REPORT_FILE), &report)?;
            let path = out.join(BUCKETS_FILE);
            let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(path.display(), e))?);
            write_buckets_csv(&mut w, &report.over_time)
                .and_then(|_| w.flush())
                .map_err(|e| io_err(path.display(), e))?;
            manifest.finish(out).map_err(|e| io_err(MANIFEST_FILE, e))?;
            let _ = writeln!(
                progress,
                "{}: MRR {:.4} Hit@1 {:.4} Hit@5 {:.4} Hit@10 {:.4} over {} queries",
                report.partition, report.mrr, report.hit1, report.hit5, report.hit10, report.count
            );
        }
        None => {
            let s = serde_json::to_string_pretty(&report).map_err(|e| CliError::Input(e.to_string()))?;
            let _ = writeln!(progress, "{s}");
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationGrid {
    /// Seeds per grid cell.
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(flatten)]
    pub base: TrainConfig,
}

fn default_runs() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AblationRow {
    pub encoder: EncoderMode,
    pub query_mode: QueryMode,
    pub mrr: Vec<f64>,
    pub mean_mrr: f64,
    pub mean_hit10: f64,
}

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn write_ablation_csv<W: Write>(mut w: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(w, "encoder,query_mode,mean_mrr,mean_hit10,per_seed_mrr")?;
    for r in rows {
        let seeds: Vec<String> = r.mrr.iter().map(|m| format!("{m:.6}")).collect();
        writeln!(
            w,
            "{},{},{:.6},{:.6},{}",
            snake(&r.encoder),
            snake(&r.query_mode),
            r.mean_mrr,
            r.mean_hit10,
            seeds.join(";")
        )?;
    }
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs, progress: &mut dyn Write) -> Result<Vec<AblationRow>, CliError> {
    if let Some(out) = &args.out {
        check_separate(&args.data, out)?;
    }
    let bench = load_benchmark(&args.data)?;
    let grid: AblationGrid = read_json(&args.grid)?;
    if grid.runs == 0 {
        return Err(CliError::Input("runs must be at least 1".into()));
    }
    let base = grid.base;
    if base.encoder.ell != bench.cache.ell || base.encoder.n_max != bench.cache.n_max {
        return Err(CliError::Input("grid ell/nMax differ from the benchmark's".into()));
    }
    base.validate()?;
    let seeds: Vec<u64> = (0..grid.runs as u64).map(|i| base.seed + i).collect();
    let mut manifest = data_manifest(
        "ablate",
        &args.data,
        serde_json::to_value(grid).map_err(|e| CliError::Input(e.to_string()))?,
        seeds.clone(),
    )?;
    manifest.add_input("grid", &args.grid).map_err(|e| io_err(args.grid.display(), e))?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        manifest.write(out).map_err(|e| io_err(MANIFEST_FILE, e))?;
    }

    let mut rows = Vec::new();
    for mode in [EncoderMode::Attention, EncoderMode::Flat] {
        for query_mode in [QueryMode::TimeDependent, QueryMode::Random] {
            let _ = writeln!(progress, "cell {} / {}", snake(&mode), snake(&query_mode));
            let mut cfg = base;
            cfg.encoder.mode = mode;
            cfg.query_mode = query_mode;
            let (runs, _) = train_runs(&bench, &cfg, &seeds, None, progress)?;
            rows.push(AblationRow {
                encoder: mode,
                query_mode,
                mrr: runs.iter().map(|r| r.test_mrr).collect(),
                mean_mrr: mean(runs.iter().map(|r| r.test_mrr)),
                mean_hit10: mean(runs.iter().map(|r| r.test_hit10)),
            });
        }
    }
    let mut table = Vec::new();
    write_ablation_csv(&mut table, &rows).map_err(|e| io_err("ablation table", e))?;
    let _ = progress.write_all(&table);
    if let Some(out) = &args.out {
        let path = out.join(ABLATION_FILE);
        fs::write(&path, &table).map_err(|e| io_err(path.display(), e))?;
        manifest.finish(out).map_err(|e| io_err(MANIFEST_FILE, e))?;
    }
    Ok(rows)
}

pub fn parse_margins(s: &str) -> Result<Vec<f64>, CliError> {
    let margins = s
        .split(',')
        .map(|m| {
            let m = m.trim();
            m.parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| CliError::Input(format!("margin {m:?} is not a positive number")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if margins.is_empty() {
        return Err(CliError::Input("no margins given".into()));
    }
    Ok(margins)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MarginRow {
    pub margin: f64,
    pub mrr: f64,
    pub hit10: f64,
}

pub fn write_margins_csv<W: Write>(mut w: W, rows: &[MarginRow]) -> std::io::Result<()> {
    writeln!(w, "margin,mrr,hit10")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.6}", r.margin, r.mrr, r.hit10)?;
    }
    Ok(())
}

pub fn cmd_margin_sweep(args: &MarginArgs, progress: &mut dyn Write) -> Result<Vec<MarginRow>, CliError> {
    if let Some(out) = &args.out {
        check_separate(&args.data, out)?;
    }
    let margins = parse_margins(&args.margins)?;
    if args.runs == 0 {
        return Err(CliError::Input("--runs must be at least 1".into()));
    }
    let bench = load_benchmark(&args.data)?;
    let base = load_train_config(args.config.as_deref(), &bench)?;
    let seeds: Vec<u64> = (0..args.runs as u64).map(|i| base.seed + i).collect();
    let config = serde_json::json!({ "margins": margins, "base": base });
    let mut manifest = data_manifest("margin-sweep", &args.data, config, seeds.clone())?;
    if let Some(p) = &args.config {
        manifest.add_input("config", p).map_err(|e| io_err(p.display(), e))?;
    }
    if let Some(out) = &args.out {
        create_dir(out)?;
        manifest.write(out).map_err(|e| io_err(MANIFEST_FILE, e))?;
    }
    let mut rows = Vec::new();
    for &margin in &margins {
        let _ = writeln!(progress, "margin {margin}");
        let cfg = TrainConfig { margin, ..base };
        let (runs, _) = train_runs(&bench, &cfg, &seeds, None, progress)?;
        rows.push(MarginRow {
            margin,
            mrr: mean(runs.iter().map(|r| r.test_mrr)),
            hit10: mean(runs.iter().map(|r| r.test_hit10)),
        });
    }
    let mut table = Vec::new();
    write_margins_csv(&mut table, &rows).map_err(|e| io_err("margin table", e))?;
    let _ = progress.write_all(&table);
    if let Some(out) = &args.out {
        let path = out.join(MARGINS_FILE);
        fs::write(&path, &table).map_err(|e| io_err(path.display(), e))?;
        manifest.finish(out).map_err(|e| io_err(MANIFEST_FILE, e))?;
    }
    Ok(rows)
}

pub fn cmd_synth(args: &SynthArgs, progress: &mut dyn Write) -> Result<SynthSpec, CliError> {
    let mut spec: SynthSpec = match &args.spec {
        Some(p) => read_json(p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let data = generate(&spec)?;
    create_dir(&args.out)?;
    let path = args.out.join(EVENTS_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(path.display(), e))?);
    data.write_events(&mut w)?;
    w.flush().map_err(|e| io_err(path.display(), e))?;
    let path = args.out.join(TRUTH_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| io_err(path.display(), e))?);
    data.write_truth(&mut w)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| io_err(path.display(), e))?;
    let th = spec.suggested_thresholds();
    let _ = writeln!(
        progress,
        "wrote {} events to {}; suggested thresholds --low {} --high {}",
        data.quads.len(),
        args.out.display(),
        th.low,
        th.high
    );
    Ok(spec)
}

/// Runs one parsed command line, writing human-readable output to `progress`.
pub fn run(cli: &Cli, progress: &mut dyn Write) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Build(a) => cmd_build(a, progress).map(drop),
        Command::Train(a) => cmd_train(a, progress).map(drop),
        Command::Eval(a) => cmd_eval(a, progress).map(drop),
        Command::Ablate(a) => cmd_ablate(a, progress).map(drop),
        Command::MarginSweep(a) => cmd_margin_sweep(a, progress).map(drop),
        Command::Synth(a) => cmd_synth(a, progress).map(drop),
    }
}
