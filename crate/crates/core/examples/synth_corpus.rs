//! Writes a small synthetic corpus and summarizes it.
//!
//! ```bash
//! cargo run --release --example synth_corpus -- /tmp/corpus
//! ```

use std::path::Path;

use crnn_enhance::config::{parse_toml, CORPUS_DESK_TOML};
use crnn_enhance::corpus::{build_corpus, CorpusConfig, Manifest, Split};
use crnn_enhance::signal::Waveform;
use crnn_enhance::Result;

pub struct Summary {
    pub per_split: Vec<(Split, usize)>,
    pub snr_range_db: (f64, f64),
    pub seconds: f64,
    pub words: usize,
}

pub fn run(out: &Path, total: usize, seed: u64) -> Result<(Manifest, Summary)> {
    let cfg = CorpusConfig {
        total,
        ..parse_toml(CORPUS_DESK_TOML)?
    };
    let manifest = build_corpus(&cfg, seed, out)?;
    let per_split = [Split::Train, Split::Val, Split::Test]
        .into_iter()
        .map(|s| (s, manifest.split(s).count()))
        .collect();
    let snrs = manifest.entries.iter().map(|e| e.snr_db);
    let snr_range_db = snrs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let mut seconds = 0.0;
    for e in &manifest.entries {
        let w = Waveform::read_wav(manifest.path(&e.clean_path))?;
        seconds += w.len() as f64 / w.sample_rate as f64;
    }
    let words = manifest.entries.iter().map(|e| e.transcript.len()).sum();
    Ok((
        manifest,
        Summary {
            per_split,
            snr_range_db,
            seconds,
            words,
        },
    ))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus".into());
    let (manifest, s) = run(Path::new(&out), 40, 0)?;
    for (split, n) in &s.per_split {
        println!("{:>5}: {n} utterances", split.as_str());
    }
    println!(
        "{} words, {:.1} s of audio, SNR {:.1}..{:.1} dB",
        s.words, s.seconds, s.snr_range_db.0, s.snr_range_db.1
    );
    let first = &manifest.entries[0];
    println!("{} -> {}: {}", first.noisy_path, first.clean_path, first.words.join(" "));
    Ok(())
}
