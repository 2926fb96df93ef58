//! The whole command-line workflow in one directory: synthesize a corpus,
//! train, score the test split and denoise its first utterance. Arguments go through
//! the same parser as the `crnn-enhance` binary.
//!
//! ```bash
//! cargo run --release --example cli_pipeline -- /tmp/pipeline
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;

use crnn_enhance::cli::{run, Cli};
use crnn_enhance::config::{parse_toml, CORPUS_DESK_TOML};
use crnn_enhance::corpus::{CorpusConfig, Manifest, Split};
use crnn_enhance::{Error, Result};

pub struct Pipeline {
    pub corpus: PathBuf,
    pub train: PathBuf,
    pub eval: PathBuf,
    pub enhanced: PathBuf,
}

pub fn invoke(args: &[&str]) -> Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("crnn-enhance").chain(args.iter().copied()))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    run(&cli).map(|_| ())
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn run_pipeline(dir: &Path, utterances: usize, epochs: usize, seed: u64) -> Result<Pipeline> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = CorpusConfig {
        total: utterances,
        ..parse_toml(CORPUS_DESK_TOML)?
    };
    let cfg_path = dir.join("corpus.toml");
    fs::write(&cfg_path, toml::to_string(&cfg).expect("corpus config serializes")).map_err(|e| Error::io(&cfg_path, e))?;

    let p = Pipeline {
        corpus: dir.join("corpus"),
        train: dir.join("run"),
        eval: dir.join("eval"),
        enhanced: dir.join("enhanced.wav"),
    };
    let seed = seed.to_string();
    let epochs = epochs.to_string();
    invoke(&["synth", "--config", s(&cfg_path), "--out", s(&p.corpus), "--seed", &seed])?;
    invoke(&[
        "train", "--corpus", s(&p.corpus), "--lm", "on", "--curriculum", "on", "--out", s(&p.train), "--seed", &seed,
        "--epochs", &epochs,
    ])?;
    let ckpt = p.train.join("best.ckpt");
    invoke(&["eval", "--corpus", s(&p.corpus), "--split", "test", "--checkpoint", s(&ckpt), "--out", s(&p.eval)])?;
    let manifest = Manifest::read(&p.corpus)?;
    let first_test = manifest.split(Split::Test).next().expect("test split is not empty");
    let noisy = manifest.path(&first_test.noisy_path);
    invoke(&["enhance", "--in", s(&noisy), "--checkpoint", s(&ckpt), "--out", s(&p.enhanced)])?;
    Ok(p)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CRNN_LOG", "info")).init();
    let dir = std::env::args().nth(1).unwrap_or_else(|| "pipeline".into());
    let p = run_pipeline(Path::new(&dir), 40, 3, 0)?;
    let report = p.eval.join("report_test_model.json");
    let text = fs::read_to_string(&report).map_err(|e| Error::io(&report, e))?;
    println!("{text}");
    println!("enhanced audio: {}", p.enhanced.display());
    Ok(())
}
