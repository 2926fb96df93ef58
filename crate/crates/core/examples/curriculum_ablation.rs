//! Trains the three ablation variants on the desk corpus and compares them
//! on the test split.
//!
//! Per seed: CRNN trains denoise-only; CRNN+LM+CL continues from the CRNN
//! checkpoint with the decoder switched on; CRNN+LM trains jointly from
//! scratch for the same total number of epochs.
//!
//! ```bash
//! cargo run --release --example curriculum_ablation -- 20 40 0 1 2
//! ```

use std::path::Path;

use crnn_enhance::config::{parse_toml, RunConfig, Preset, CORPUS_DESK_TOML};
use crnn_enhance::corpus::{build_corpus, CorpusConfig, Split};
use crnn_enhance::dataset::{load_split, LoadedUtterance};
use crnn_enhance::metrics::{evaluate_loaded, EvalMode, MetricReport};
use crnn_enhance::train::{train, Toggle, TrainConfig, TrainOutcome};
use crnn_enhance::Result;

pub struct Corpus {
    pub train: Vec<LoadedUtterance>,
    pub val: Vec<LoadedUtterance>,
    pub test: Vec<LoadedUtterance>,
}

pub fn desk_corpus(dir: &Path, seed: u64) -> Result<Corpus> {
    let cfg: CorpusConfig = parse_toml(CORPUS_DESK_TOML)?;
    let manifest = build_corpus(&cfg, seed, dir)?;
    Ok(Corpus {
        train: load_split(&manifest, Split::Train)?,
        val: load_split(&manifest, Split::Val)?,
        test: load_split(&manifest, Split::Test)?,
    })
}

pub struct SeedResult {
    pub seed: u64,
    pub noisy: MetricReport,
    pub crnn: MetricReport,
    pub crnn_lm: MetricReport,
    pub crnn_lm_cl: MetricReport,
}

fn run_variant(
    corpus: &Corpus,
    cfg: &RunConfig,
    lm: Toggle,
    curriculum: Toggle,
    epochs: usize,
    resume: Option<&TrainOutcome>,
    phase_one: usize,
) -> Result<TrainOutcome> {
    let train_cfg = TrainConfig {
        lm,
        curriculum,
        epochs_max: epochs,
        denoise_epochs_max: Some(phase_one),
        ..cfg.train.clone()
    };
    let tr: Vec<_> = corpus.train.iter().map(|u| u.example()).collect();
    let va: Vec<_> = corpus.val.iter().map(|u| u.example()).collect();
    train(&tr, &va, &train_cfg, &cfg.model, resume.map(|o| o.last.clone()), None)
}

pub fn run_seed(corpus: &Corpus, seed: u64, phase_one: usize, total: usize) -> Result<SeedResult> {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.train.seed = seed;
    let crnn = run_variant(corpus, &cfg, Toggle::Off, Toggle::Off, phase_one, None, phase_one)?;
    let cl = run_variant(corpus, &cfg, Toggle::On, Toggle::On, total, Some(&crnn), phase_one)?;
    let joint = run_variant(corpus, &cfg, Toggle::On, Toggle::Off, total, None, phase_one)?;

    let score = |o: &TrainOutcome, mode| evaluate_loaded(&o.best.model()?, &corpus.test, Split::Test, mode);
    Ok(SeedResult {
        seed,
        noisy: score(&crnn, EvalMode::Noisy)?,
        crnn: score(&crnn, EvalMode::Model)?,
        crnn_lm: score(&joint, EvalMode::Model)?,
        crnn_lm_cl: score(&cl, EvalMode::Model)?,
    })
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[allow(dead_code)]
fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CRNN_LOG", "info")).init();
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let phase_one = args.first().copied().unwrap_or(20) as usize;
    let total = args.get(1).copied().unwrap_or(40) as usize;
    let seeds = if args.len() > 2 { args[2..].to_vec() } else { vec![0, 1, 2] };
    let dir = std::env::temp_dir().join("crnn_enhance_ablation");
    let corpus = desk_corpus(&dir, 0)?;
    println!("{:>4} {:>12} {:>8} {:>8} {:>8} {:>8}", "seed", "row", "snr", "lsd", "sdr", "wer");
    for &seed in &seeds {
        let r = run_seed(&corpus, seed, phase_one, total)?;
        for (name, rep) in [("noisy", &r.noisy), ("CRNN", &r.crnn), ("CRNN+LM", &r.crnn_lm), ("CRNN+LM+CL", &r.crnn_lm_cl)] {
            let a = &rep.aggregates;
            println!("{:>4} {:>12} {:>8.3} {:>8.3} {:>8.3} {:>8.4}", r.seed, name, a.snr, a.lsd, a.sdr, a.wer);
        }
    }
    Ok(())
}
