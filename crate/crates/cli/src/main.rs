//! `gaitmm` command-line tool.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use gaitmm::config::{Preset, RunConfig};
use gaitmm::data::{load_dataset, write_synthetic_corpus, LoadedDataset, ProtocolKind, SynthCorpusOptions, TrainingSet, CASIA_B_VIEWS};
use gaitmm::eval::{emit_report, embed_split, rank1_matrix, save_embeddings, RankOneReport};
use gaitmm::model::{count_parameters, ModelConfig, ModelParams, PmeMode};
use gaitmm::train::{checkpoint_dtype, run_ablation_matrix, run_training, Checkpoint, Precision};
use gaitmm::{GaitError, Scalar};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "gaitmm", version = manifest::VERSION, about = "Silhouette gait recognition: synthesize, train, evaluate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a CASIA-B-layout corpus of procedural walkers.
    SynthData(SynthArgs),
    /// Train a model and write checkpoints plus a loss curve.
    Train(TrainArgs),
    /// Cross-view rank-1 evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Parameter counts per module, standard and depthwise-separable PME side by side.
    Params(ConfigArgs),
    /// Train and evaluate the four BME/PME/MSMA combinations.
    Ablation(AblationArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    subjects: usize,
    /// Number of cameras, taken from 0°, 18°, …, 180° in order.
    #[arg(long, default_value_t = 11)]
    views: usize,
    /// Sequences per condition; omitted gives 6 NM, 2 BG, 2 CL.
    #[arg(long)]
    seqs_per_cond: Option<u32>,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    first_subject: u32,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// TOML file with [model], [train] and [data] overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base values before the config file applies: paper or desk.
    #[arg(long, default_value = "paper")]
    preset: String,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// casia-b-lt, oumvlp or synth.
    #[arg(long, default_value = "synth")]
    protocol: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblationArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Process exit status for a failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<GaitError>().map(GaitError::root) {
        Some(GaitError::Config(_) | GaitError::ConfigInvariants(_) | GaitError::Shape(_) | GaitError::Parameter(_)) => 2,
        Some(GaitError::NonFinite { .. }) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("GAITMM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            warn!("could not size the worker pool: {e}");
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Params(a) => params(a),
        Command::Ablation(a) => ablation(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    let base = RunConfig::preset(args.preset.parse::<Preset>()?);
    let cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| GaitError::Config(format!("cannot read {}: {e}", path.display())))?;
            RunConfig::from_toml_over(&base, &text)?
        }
        None => base,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn synth_data(a: SynthArgs) -> anyhow::Result<()> {
    if a.views > CASIA_B_VIEWS.len() {
        return Err(GaitError::Config(format!("--views must be at most {}", CASIA_B_VIEWS.len())).into());
    }
    let opts = SynthCorpusOptions {
        subjects: a.subjects,
        first_subject: a.first_subject,
        views: CASIA_B_VIEWS[..a.views].to_vec(),
        seqs_per_condition: a.seqs_per_cond.map_or([6, 2, 2], |n| [n; 3]),
        frames: a.frames,
        seed: a.seed,
    };
    let n = write_synthetic_corpus(&a.out, &opts)?;
    println!("wrote {n} sequences to {}", a.out.display());
    Ok(())
}

/// Loads a corpus and sizes the classifier to its training subjects.
fn training_data(cfg: &mut RunConfig, data: &Path) -> anyhow::Result<(LoadedDataset, TrainingSet)> {
    let dataset = load_dataset(data, cfg.data.protocol)?;
    if dataset.skipped > 0 {
        warn!("{} sequence(s) could not be loaded", dataset.skipped);
    }
    let set = TrainingSet::new(dataset.train_sequences())?;
    if set.excluded_short > 0 {
        warn!("{} training sequence(s) shorter than the minimum were left out", set.excluded_short);
    }
    if cfg.model.num_classes != set.num_subjects() {
        info!("classifier width set to {} training subjects (config said {})", set.num_subjects(), cfg.model.num_classes);
        cfg.model.num_classes = set.num_subjects();
    }
    Ok((dataset, set))
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let (_, set) = training_data(&mut cfg, &a.data)?;
    let mut manifest = RunManifest::new("train", a.cfg.config.as_deref(), &a.out, &cfg);
    manifest.parameters = Some(param_count_table(&cfg.model));
    manifest.write(&a.out)?;
    match cfg.train.precision {
        Precision::F32 => train_as::<f32>(&cfg, &set, &a),
        Precision::F64 => train_as::<f64>(&cfg, &set, &a),
    }
}

fn train_as<T: Scalar>(cfg: &RunConfig, set: &TrainingSet, a: &TrainArgs) -> anyhow::Result<()> {
    let resume = a.resume.as_deref().map(Checkpoint::<T>::load).transpose()?;
    let outcome = run_training::<T>(&cfg.model, &cfg.train, set, Some(&a.out), resume)?;
    let c = count_parameters(&outcome.checkpoint.params);
    println!("trained {} iterations, {} parameters", outcome.checkpoint.iteration, c.total);
    if let Some(last) = outcome.losses.last() {
        println!("final loss {:.4} (triplet {:.4}, ce {:.4})", last.report.total, last.report.triplet, last.report.cross_entropy);
    }
    println!("checkpoint: {}", a.out.join(gaitmm::train::LATEST_CHECKPOINT).display());
    Ok(())
}

fn print_report(report: &RankOneReport) {
    for c in &report.conditions {
        match c.mean() {
            Some(m) => println!("{:<4} rank-1 {:6.2}%", c.name, 100.0 * m),
            None => println!("{:<4} rank-1   n/a (no probes)", c.name),
        }
    }
    if let Some(m) = report.overall() {
        println!("mean rank-1 {:6.2}%", 100.0 * m);
    }
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let kind: ProtocolKind = a.protocol.parse()?;
    match checkpoint_dtype(&a.checkpoint)?.as_str() {
        "f64" => eval_as::<f64>(&a, kind),
        _ => eval_as::<f32>(&a, kind),
    }
}

fn eval_as<T: Scalar>(a: &EvalArgs, kind: ProtocolKind) -> anyhow::Result<()> {
    let ck = Checkpoint::<T>::load(&a.checkpoint)?;
    let cfg = RunConfig { model: ck.model.clone(), train: ck.train.clone(), data: gaitmm::config::DataConfig { protocol: kind } };
    RunManifest::new("eval", None, &a.out, &cfg).write(&a.out)?;
    let data = load_dataset(&a.data, kind)?;
    let split = embed_split(&data, &ck.params, &ck.model)?;
    if split.skipped > 0 {
        warn!("{} sequence(s) too short to embed", split.skipped);
    }
    let mut all = split.gallery.clone();
    all.extend(split.probes.iter().cloned());
    save_embeddings(&a.out.join("embeddings.jsonl"), &all)?;
    let report = rank1_matrix(&split.gallery, &split.probes, &data.protocol)?;
    emit_report(&report, &a.out)?;
    print_report(&report);
    Ok(())
}

/// `(module, standard, depthwise-separable)` parameter counts.
fn param_count_table(model: &ModelConfig) -> Vec<(String, usize, usize)> {
    let count = |mode| count_parameters(&ModelParams::<f32>::zeros(&ModelConfig { pme_mode: mode, ..model.clone() }));
    let (s, d) = (count(PmeMode::Standard), count(PmeMode::DepthwiseSeparable));
    s.rows().iter().zip(d.rows()).map(|((name, a), (_, b))| (name.to_string(), *a, b)).collect()
}

fn params(a: ConfigArgs) -> anyhow::Result<()> {
    let cfg = load_config(&a)?;
    println!("{:<12} {:>14} {:>14}", "module", "standard", "depthwise");
    for (name, s, d) in param_count_table(&cfg.model) {
        println!("{name:<12} {s:>14} {d:>14}");
    }
    Ok(())
}

fn ablation(a: AblationArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(&a.cfg)?;
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let dataset = load_dataset(&a.data, cfg.data.protocol)?;
    cfg.model.num_classes = TrainingSet::new(dataset.train_sequences())?.num_subjects();
    RunManifest::new("ablation", a.cfg.config.as_deref(), &a.out, &cfg).write(&a.out)?;
    let rows = match cfg.train.precision {
        Precision::F32 => run_ablation_matrix::<f32>(&cfg.model, &cfg.train, &dataset, Some(&a.out))?,
        Precision::F64 => run_ablation_matrix::<f64>(&cfg.model, &cfg.train, &dataset, Some(&a.out))?,
    };
    println!("{:<10} {:>10} {:>8}", "variant", "params", "mean");
    for r in rows {
        let m = r.report.overall().map_or("n/a".to_string(), |m| format!("{:.2}%", 100.0 * m));
        println!("{:<10} {:>10} {:>8}", r.variant, r.parameters, m);
    }
    Ok(())
}
