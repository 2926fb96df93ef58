//! Overfits four utterances: denoise-only until the reconstruction loss
//! collapses, then the joint phase until the decoder transcribes every
//! training utterance exactly.
//!
//! ```bash
//! cargo run --release --example overfit
//! ```

use crnn_enhance::config::{parse_toml, CORPUS_DESK_TOML};
use crnn_enhance::corpus::{generate_utterance, CorpusConfig, Vocabulary};
use crnn_enhance::dataset::Example;
use crnn_enhance::model::ModelConfig;
use crnn_enhance::signal;
use crnn_enhance::train::{train, Phase, Toggle, TrainConfig};
use crnn_enhance::Result;

pub struct OverfitResult {
    pub first_epoch_l_re: f64,
    pub best_denoise_l_re: f64,
    pub denoise_epochs: usize,
    /// First epoch whose L_re is below a tenth of epoch 1's.
    pub tenth_reached_at: Option<usize>,
    pub transcripts: Vec<(Vec<usize>, Vec<usize>)>,
}

pub fn four_utterances(seed: u64) -> Result<Vec<Example>> {
    let cfg: CorpusConfig = parse_toml(CORPUS_DESK_TOML)?;
    let vocab = Vocabulary::new(cfg.vocab_size, seed)?;
    (0..4)
        .map(|i| {
            let u = generate_utterance(&cfg, &vocab, seed, i)?;
            let noisy = signal::analyze(&u.noisy)?;
            let clean = signal::analyze(&u.clean)?;
            Ok(Example {
                id: u.id,
                frames: noisy.frames,
                noisy: noisy.magnitudes,
                clean: clean.magnitudes,
                transcript: u.transcript,
            })
        })
        .collect()
}

pub fn run(denoise_epochs: usize, total_epochs: usize) -> Result<OverfitResult> {
    let data = four_utterances(3)?;
    let model_cfg = ModelConfig::desk();
    let cfg = TrainConfig {
        epochs_max: total_epochs,
        denoise_epochs_max: Some(denoise_epochs),
        plateau_patience: denoise_epochs,
        lm: Toggle::On,
        curriculum: Toggle::On,
        ..TrainConfig::desk()
    };
    let out = train(&data, &data, &cfg, &model_cfg, None, None)?;
    let denoise: Vec<_> = out.log.iter().filter(|r| r.phase == Phase::DenoiseOnly).collect();
    let model = out.last.model()?;
    let transcripts = data
        .iter()
        .map(|ex| {
            let (_, top) = model.enhance(&ex.noisy, ex.frames)?;
            Ok((ex.transcript.clone(), model.lm_greedy_decode(&top, 60)?))
        })
        .collect::<Result<_>>()?;
    Ok(OverfitResult {
        first_epoch_l_re: out.log[0].train_l_re,
        best_denoise_l_re: denoise.iter().map(|r| r.train_l_re).fold(f64::INFINITY, f64::min),
        denoise_epochs: denoise.len(),
        tenth_reached_at: denoise.iter().find(|r| r.train_l_re < 0.1 * out.log[0].train_l_re).map(|r| r.epoch),
        transcripts,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let r = run(300, 500)?;
    println!(
        "denoise-only: epoch-1 L_re {:.4}, best {:.4} ({:.1}%) over {} epochs, below 10% from epoch {:?}",
        r.first_epoch_l_re,
        r.best_denoise_l_re,
        100.0 * r.best_denoise_l_re / r.first_epoch_l_re,
        r.denoise_epochs,
        r.tenth_reached_at
    );
    for (reference, hypothesis) in &r.transcripts {
        println!("ref {reference:?} hyp {hypothesis:?}");
    }
    Ok(())
}
