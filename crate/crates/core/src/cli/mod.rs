//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data or lineage
//! error, 4 internal invariant violation. Failures print one JSON line on
//! stderr: `{"error":"<kind>","exit_code":<n>,"message":"..."}`.

mod config;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use config::{DataConfig, PathsConfig, RunConfig};

use crate::construct::ConstructError;
use crate::dataset::{self, split_train_test, DatasetError, LabeledDataset};
use crate::eval::{self, EvalError, OutputFormat};
use crate::fsutil::write_atomic;
use crate::learner::{self, LearnerError, Network, RunKind, TerminalStatus, TrainingTrace};

#[derive(Debug, Parser)]
#[command(
    name = "spikegrow",
    version,
    about = "Grow spiking classifiers neuron by neuron from spike-train data"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a nested synthetic family as stage-<k>.ds files plus manifest.json.
    GenData(GenDataArgs),
    /// Grow a network from scratch on a dataset file.
    TrainFresh(TrainFreshArgs),
    /// Adapt a seed network to an enlarged dataset, then keep growing.
    TrainExp(TrainExpArgs),
    /// Evaluate a checkpoint on a dataset file.
    Eval(EvalArgs),
    /// Print a checkpoint's structure and lineage.
    Inspect(InspectArgs),
    /// Tabulate structured trace files side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML run configuration; omitted sections and fields use defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GrowthOverrides {
    /// Override growth.max_hidden (default 200).
    #[arg(long)]
    pub max_hidden: Option<usize>,
    /// Override growth.target_train_accuracy (default 0.95).
    #[arg(long)]
    pub target: Option<f64>,
    /// Override growth.rng_seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override data.test_fraction (default 0.2).
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Worker threads for candidate evaluation; 0 uses all cores. Results do
    /// not depend on this value.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Trace format: `structured` (JSON) or `table` (CSV).
    #[arg(long, default_value = "structured", value_parser = parse_format)]
    pub trace_format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory (overrides paths.out_dir); created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override generator.rng_seed (default 0).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainFreshArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Dataset file (overrides paths.dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output checkpoint (overrides paths.checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output trace (overrides paths.trace).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub growth: GrowthOverrides,
}

#[derive(Debug, Args)]
pub struct TrainExpArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Seed checkpoint (overrides paths.seed_checkpoint).
    #[arg(long)]
    pub seed_checkpoint: Option<PathBuf>,
    /// Enlarged dataset file (overrides paths.dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output checkpoint (overrides paths.checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output trace (overrides paths.trace).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Stop after refitting the readout; no neuron is added.
    #[arg(long)]
    pub one_loop_only: bool,
    #[command(flatten)]
    pub growth: GrowthOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to evaluate (overrides paths.checkpoint).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset file (overrides paths.dataset).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output report (overrides paths.report).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format: `structured` (JSON) or `table` (CSV).
    #[arg(long, default_value = "structured", value_parser = parse_format)]
    pub format: OutputFormat,
    /// Also write the per-sample hidden feature table here.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Structured trace files; each row is labeled by its file stem.
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Output report; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format: `table` (CSV) or `structured` (JSON).
    #[arg(long, default_value = "table", value_parser = parse_format)]
    pub format: OutputFormat,
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse()
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage",
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "config",
            message: message.into(),
        }
    }

    fn to_line(&self) -> String {
        json!({"error": self.kind, "exit_code": self.code, "message": self.message}).to_string()
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let (code, kind) = match &e {
            DatasetError::Io { .. } => (2, "io"),
            DatasetError::Config(_) => (2, "config"),
            _ => (3, "data"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<LearnerError> for CliError {
    fn from(e: LearnerError) -> Self {
        let (code, kind) = match &e {
            LearnerError::Config(_)
            | LearnerError::Lif(_)
            | LearnerError::Construct(ConstructError::Config(_)) => (2, "config"),
            LearnerError::Io { .. } => (2, "io"),
            LearnerError::Lineage(_) => (3, "lineage"),
            LearnerError::Mismatch(_)
            | LearnerError::DegenerateData
            | LearnerError::Construct(_)
            | LearnerError::VersionMismatch { .. }
            | LearnerError::Checksum { .. }
            | LearnerError::MalformedCheckpoint(_) => (3, "data"),
            LearnerError::Invariant(_) | LearnerError::Readout(_) => (4, "invariant"),
        };
        Self {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Learner(inner) => inner.into(),
            EvalError::Io { .. } => Self {
                code: 2,
                kind: "io",
                message: e.to_string(),
            },
            EvalError::Parse { .. } => Self {
                code: 3,
                kind: "data",
                message: e.to_string(),
            },
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    run(std::env::args_os())
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).to_line());
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_line());
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::TrainFresh(a) => cmd_train_fresh(a),
        Command::TrainExp(a) => cmd_train_exp(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Compare(a) => cmd_compare(a),
    }
}

fn pick(flag: Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    flag.or_else(|| file.clone()).ok_or_else(|| {
        CliError::usage(format!(
            "missing required path `{name}` (flag or [paths] entry)"
        ))
    })
}

fn input(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError {
            code: 2,
            kind: "io",
            message: format!("{}: input file not found", path.display()),
        })
    }
}

fn output(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => Err(CliError {
            code: 2,
            kind: "io",
            message: format!(
                "{}: output directory {} does not exist",
                path.display(),
                p.display()
            ),
        }),
        _ => Ok(()),
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError {
            code: 4,
            kind: "invariant",
            message: e.to_string(),
        })
}

fn apply_overrides(cfg: &mut RunConfig, o: &GrowthOverrides) -> Result<(), CliError> {
    if let Some(v) = o.max_hidden {
        cfg.growth.max_hidden = v;
    }
    if let Some(v) = o.target {
        cfg.growth.target_train_accuracy = v;
    }
    if let Some(v) = o.seed {
        cfg.growth.rng_seed = v;
    }
    if let Some(v) = o.test_fraction {
        cfg.data.test_fraction = v;
    }
    cfg.growth.validate().map_err(CliError::from)?;
    if !(cfg.data.test_fraction > 0.0 && cfg.data.test_fraction < 1.0) {
        return Err(CliError::config(format!(
            "data.test_fraction must lie in (0,1), got {}",
            cfg.data.test_fraction
        )));
    }
    Ok(())
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    if let Some(p) = &args.config {
        input(p)?;
    }
    RunConfig::load(args.config.as_deref()).map_err(CliError::config)
}

fn split(
    ds: &LabeledDataset,
    cfg: &RunConfig,
) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    Ok(split_train_test(
        ds,
        cfg.data.test_fraction,
        cfg.data.split_seed,
    )?)
}

fn write_trace(trace: &TrainingTrace, path: &Path, format: OutputFormat) -> Result<(), CliError> {
    Ok(eval::export_trace(trace, path, format)?)
}

fn summary(net: &Network, trace: &TrainingTrace) {
    println!(
        "status={} neurons={} added={} train_accuracy={} test_accuracy={} space_complexity={} elapsed_seconds={:.3}",
        trace.status.as_str(),
        net.n_hidden(),
        trace.added_neurons(),
        net.lineage().last().map_or(trace.final_train_accuracy(), |l| l.train_accuracy),
        trace.best_test_accuracy,
        net.space_complexity(),
        trace.elapsed_seconds()
    );
}

pub fn cmd_gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.generator.rng_seed = seed;
    }
    let out_dir = pick(args.out, &cfg.paths.out_dir, "out")?;
    let family = dataset::generate_family(&cfg.generator, &cfg.data.stages)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| CliError {
        code: 2,
        kind: "io",
        message: format!("{}: {e}", out_dir.display()),
    })?;
    let mut entries = Vec::new();
    for stage in family.stages() {
        let k = stage.categories().len();
        let name = format!("stage-{k}.ds");
        let bytes = dataset::encode_dataset(stage);
        let path = out_dir.join(&name);
        write_atomic(&path, &bytes).map_err(|e| CliError {
            code: 2,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        })?;
        entries.push(json!({
            "file": name,
            "categories": k,
            "samples": stage.len(),
            "sha256": hex::encode(Sha256::digest(&bytes)),
        }));
    }
    let manifest = json!({
        "format_version": 1,
        "generator": cfg.generator,
        "stages": entries,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    let path = out_dir.join("manifest.json");
    write_atomic(&path, text.as_bytes()).map_err(|e| CliError {
        code: 2,
        kind: "io",
        message: format!("{}: {e}", path.display()),
    })?;
    print!("{text}");
    Ok(())
}

pub fn cmd_train_fresh(args: TrainFreshArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, &args.growth)?;
    let ds_path = pick(args.dataset, &cfg.paths.dataset, "dataset")?;
    let ckpt_path = pick(args.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let trace_path = pick(args.trace, &cfg.paths.trace, "trace")?;
    input(&ds_path)?;
    output(&ckpt_path)?;
    output(&trace_path)?;

    let ds = dataset::load_dataset(&ds_path)?;
    let (train, test) = split(&ds, &cfg)?;
    let pool = thread_pool(args.growth.threads)?;
    let (net, trace) = pool.install(|| learner::train_fresh(&train, &test, &cfg.growth))?;
    learner::save_network(&net, &ckpt_path)?;
    write_trace(&trace, &trace_path, args.growth.trace_format)?;
    summary(&net, &trace);
    Ok(())
}

pub fn cmd_train_exp(args: TrainExpArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, &args.growth)?;
    let seed_path = pick(
        args.seed_checkpoint,
        &cfg.paths.seed_checkpoint,
        "seed-checkpoint",
    )?;
    let ds_path = pick(args.dataset, &cfg.paths.dataset, "dataset")?;
    let ckpt_path = pick(args.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let trace_path = pick(args.trace, &cfg.paths.trace, "trace")?;
    input(&seed_path)?;
    input(&ds_path)?;
    output(&ckpt_path)?;
    output(&trace_path)?;

    let seed = learner::load_network(&seed_path)?;
    let ds = dataset::load_dataset(&ds_path)?;
    let (train, test) = split(&ds, &cfg)?;
    let pool = thread_pool(args.growth.threads)?;
    let (net, trace) = pool.install(|| -> Result<_, CliError> {
        if args.one_loop_only {
            let net = learner::one_loop_adapt(&seed, &train)?;
            let train_acc = eval::evaluate(&net, &train)?.accuracy;
            let test_acc = eval::evaluate(&net, &test)?.accuracy;
            let residual = {
                let h = net.features(&train)?;
                let f = dataset::encode_targets(&train);
                (f - h.matrix() * net.beta().matrix()).norm_squared()
            };
            let status = if train_acc >= cfg.growth.target_train_accuracy {
                TerminalStatus::TargetReached
            } else {
                TerminalStatus::MaxHidden
            };
            let trace = TrainingTrace {
                kind: RunKind::OneLoop,
                initial_neurons: net.n_hidden(),
                initial_sq_norm: residual,
                initial_train_accuracy: train_acc,
                initial_test_accuracy: test_acc,
                records: Vec::new(),
                status,
                best_neurons: net.n_hidden(),
                best_test_accuracy: test_acc,
            };
            Ok((net, trace))
        } else {
            Ok(learner::train_experienced(
                &seed,
                &train,
                &test,
                &cfg.growth,
            )?)
        }
    })?;
    learner::save_network(&net, &ckpt_path)?;
    write_trace(&trace, &trace_path, args.growth.trace_format)?;
    summary(&net, &trace);
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    let ckpt_path = pick(args.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let ds_path = pick(args.dataset, &cfg.paths.dataset, "dataset")?;
    let out_path = pick(args.out, &cfg.paths.report, "out")?;
    input(&ckpt_path)?;
    input(&ds_path)?;
    output(&out_path)?;
    if let Some(f) = &args.features {
        output(f)?;
    }
    let net = learner::load_network(&ckpt_path)?;
    let ds = dataset::load_dataset(&ds_path)?;
    let pool = thread_pool(args.threads)?;
    let report = pool.install(|| eval::evaluate(&net, &ds))?;
    eval::write_report(&report, &out_path, args.format)?;
    if let Some(f) = &args.features {
        pool.install(|| eval::export_features(&net, &ds, f))?;
    }
    println!(
        "accuracy={} samples={} neurons={} space_complexity={}",
        report.accuracy,
        ds.len(),
        report.n_hidden,
        report.space_complexity
    );
    Ok(())
}

pub fn cmd_inspect(args: InspectArgs) -> Result<(), CliError> {
    input(&args.checkpoint)?;
    let net = learner::load_network(&args.checkpoint)?;
    let lif = net.lif();
    println!("d={}", net.d());
    println!(
        "lif.dt={} lif.tau_syn={} lif.tau_mem={} lif.theta={}",
        lif.dt, lif.tau_syn, lif.tau_mem, lif.theta
    );
    println!("neurons={}", net.n_hidden());
    println!("frozen_prefix={}", net.frozen_prefix());
    println!("categories={:?}", net.categories());
    println!("space_complexity={}", net.space_complexity());
    for (k, rec) in net.lineage().iter().enumerate() {
        println!(
            "lineage[{k}]={}",
            serde_json::to_string(rec).expect("lineage serializes")
        );
    }
    Ok(())
}

pub fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    for p in &args.traces {
        input(p)?;
    }
    if let Some(o) = &args.out {
        output(o)?;
    }
    let runs = args
        .traces
        .iter()
        .map(|p| {
            let label = p.file_stem().map_or_else(
                || p.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            Ok((label, eval::read_trace(p)?))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = eval::compare_runs(&runs);
    let bytes = eval::encode_comparison(&report, args.format);
    match &args.out {
        Some(path) => write_atomic(path, &bytes).map_err(|e| CliError {
            code: 2,
            kind: "io",
            message: format!("{}: {e}", path.display()),
        })?,
        None => print!("{}", String::from_utf8_lossy(&bytes)),
    }
    Ok(())
}
