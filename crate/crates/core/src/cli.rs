//! Command-line front end: argument types and the four subcommands.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 I/O, 4 numeric
//! abort, 5 checkpoint mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{load_corpus_config, Preset, RunConfig};
use crate::corpus::{build_corpus, write_atomic, CorpusConfig, Manifest, Split};
use crate::dataset::load_examples;
use crate::error::{Error, Result};
use crate::metrics::{enhance_waveform, evaluate, EvalMode};
use crate::signal::Waveform;
use crate::train::{train, Toggle, BEST_CHECKPOINT};

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Parser)]
#[command(name = "crnn-enhance", version, about = "Speech denoising with a CRNN and a language-model regularizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a noisy/clean corpus with transcripts.
    Synth(SynthArgs),
    /// Train one of the CRNN, CRNN+LM or CRNN+LM+CL variants.
    Train(TrainArgs),
    /// Score a checkpoint on one corpus split.
    Eval(EvalArgs),
    /// Denoise a single 16 kHz mono WAV file.
    Enhance(EnhanceArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus TOML; the built-in default corpus when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "desk", value_parser = parse_preset)]
    pub preset: Preset,
    /// Run config TOML replacing the preset.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_toggle)]
    pub lm: Toggle,
    #[arg(long, value_parser = parse_toggle)]
    pub curriculum: Toggle,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_parser = parse_split)]
    pub split: Split,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Score the model output, or the noisy or clean signal as reference rows.
    #[arg(long, default_value = "model", value_parser = parse_mode)]
    pub mode: EvalMode,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_toggle(s: &str) -> std::result::Result<Toggle, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<EvalMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub code_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

impl RunManifest {
    fn start(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            outputs: Vec::new(),
        }
    }

    fn finish(mut self, path: &Path) -> Result<Self> {
        self.finished_unix_ms = now_ms();
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
        Ok(self)
    }
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<RunManifest> {
    let cfg = match &args.config {
        Some(p) => load_corpus_config(p)?,
        None => CorpusConfig::default(),
    };
    let mut run = RunManifest::start("synth", to_json(&cfg), Some(args.seed));
    create_dir(&args.out)?;
    let manifest = build_corpus(&cfg, args.seed, &args.out)?;
    log::info!("wrote {} utterances to {}", manifest.entries.len(), args.out.display());
    run.outputs = vec![crate::corpus::MANIFEST_FILE.into(), crate::corpus::CORPUS_CONFIG_FILE.into(), "clean/".into(), "noisy/".into()];
    run.finish(&args.out.join(RUN_MANIFEST))
}

/// Resolves the run configuration for `train`: preset or file, then the
/// command-line overrides, then the decoder vocabulary from the corpus.
pub fn train_config(args: &TrainArgs, corpus: Option<&CorpusConfig>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::preset(args.preset),
    };
    cfg.train.lm = args.lm;
    cfg.train.curriculum = args.curriculum;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs_max = e;
    }
    if let Some(c) = corpus {
        if c.vocab_size != cfg.model.lm.vocab_size {
            log::info!("decoder vocabulary set to the corpus size {}", c.vocab_size);
            cfg.model.lm.vocab_size = c.vocab_size;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    // Reject incoherent flag combinations before touching the corpus.
    train_config(args, None)?;
    let manifest = Manifest::read(&args.corpus)?;
    let corpus_cfg = manifest.corpus_config()?;
    let cfg = train_config(args, corpus_cfg.as_ref())?;
    let variant = cfg.train.variant()?;
    let mut run = RunManifest::start("train", to_json(&cfg), Some(cfg.train.seed));
    create_dir(&args.out)?;
    let resume = args.resume.as_deref().map(Checkpoint::load).transpose()?;

    let train_set = load_examples(&manifest, Split::Train)?;
    let val_set = load_examples(&manifest, Split::Val)?;
    log::info!(
        "training {} on {} utterances ({} validation)",
        variant.label(),
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&train_set, &val_set, &cfg.train, &cfg.model, resume, Some(&args.out))?;
    outcome.best.save(&args.out.join(BEST_CHECKPOINT))?;
    run.outputs = vec![BEST_CHECKPOINT.into(), crate::train::LAST_CHECKPOINT.into(), variant.log_file()];
    run.finish(&args.out.join(RUN_MANIFEST))
}

pub fn report_stem(split: Split, mode: EvalMode) -> String {
    format!("report_{}_{}", split.as_str(), mode)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<RunManifest> {
    let manifest = Manifest::read(&args.corpus)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    if let Some(c) = manifest.corpus_config()? {
        if c.vocab_size != ck.model_config.lm.vocab_size {
            return Err(Error::CheckpointMismatch(format!(
                "checkpoint decoder knows {} tokens, corpus uses {}",
                ck.model_config.lm.vocab_size, c.vocab_size
            )));
        }
    }
    let model = ck.model()?;
    let mut run = RunManifest::start(
        "eval",
        serde_json::json!({
            "split": args.split,
            "mode": args.mode,
            "checkpoint": args.checkpoint,
            "model": ck.model_config,
        }),
        None,
    );
    let report = evaluate(&manifest, args.split, &model, args.mode)?;
    create_dir(&args.out)?;
    let stem = report_stem(args.split, args.mode);
    write_atomic(&args.out.join(format!("{stem}.csv")), report.to_csv().as_bytes())?;
    write_atomic(&args.out.join(format!("{stem}.json")), report.to_json().as_bytes())?;
    log::info!("{}", report.to_json().trim());
    run.outputs = vec![format!("{stem}.csv"), format!("{stem}.json")];
    run.finish(&args.out.join(RUN_MANIFEST))
}

pub fn cmd_enhance(args: &EnhanceArgs) -> Result<RunManifest> {
    let input = Waveform::read_wav(&args.input)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    let model = ck.model()?;
    let run = RunManifest::start(
        "enhance",
        serde_json::json!({ "input": args.input, "checkpoint": args.checkpoint }),
        None,
    );
    let (enhanced, _) = enhance_waveform(&model, &input)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    enhanced.write_wav(&args.out)?;
    let mut run = run;
    run.outputs = vec![args.out.display().to_string()];
    let mut record = args.out.clone().into_os_string();
    record.push(".run.json");
    run.finish(Path::new(&record))
}

pub fn run(cli: &Cli) -> Result<RunManifest> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Enhance(a) => cmd_enhance(a),
    }
}
