//! Scores hand-built estimates of one synthetic utterance with every metric
//! in the evaluation table, then a few transcript pairs with WER.
//!
//! ```bash
//! cargo run --release --example score_signals
//! ```

use crnn_enhance::config::{parse_toml, CORPUS_DESK_TOML};
use crnn_enhance::corpus::{generate_utterance, CorpusConfig, Vocabulary};
use crnn_enhance::metrics::{bss_eval, edit_distance, lsd, magnitude_mse, snr, wer, BssEval};
use crnn_enhance::signal::{self, Waveform};
use crnn_enhance::Result;

pub struct Row {
    pub name: &'static str,
    pub snr: f64,
    pub lsd: f64,
    pub mse: f64,
    pub bss: BssEval,
}

fn row(name: &'static str, clean: &Waveform, noise: &Waveform, est: &Waveform) -> Result<Row> {
    let c = signal::analyze(clean)?;
    let e = signal::analyze(est)?;
    Ok(Row {
        name,
        snr: snr(clean, est)?,
        lsd: lsd(&c.magnitudes, &e.magnitudes)?,
        mse: magnitude_mse(&c.magnitudes, &e.magnitudes)?,
        bss: bss_eval(clean, noise, est)?,
    })
}

fn combine(a: &Waveform, wa: f64, b: &Waveform, wb: f64) -> Result<Waveform> {
    Waveform::new(a.samples.iter().zip(&b.samples).map(|(x, y)| wa * x + wb * y).collect(), a.sample_rate)
}

pub fn run() -> Result<Vec<Row>> {
    let cfg: CorpusConfig = parse_toml(CORPUS_DESK_TOML)?;
    let vocab = Vocabulary::new(cfg.vocab_size, 0)?;
    let u = generate_utterance(&cfg, &vocab, 0, 0)?;
    let noise = combine(&u.noisy, 1.0, &u.clean, -1.0)?;
    Ok(vec![
        row("noisy input", &u.clean, &noise, &u.noisy)?,
        row("half the noise", &u.clean, &noise, &combine(&u.clean, 1.0, &noise, 0.5)?)?,
        // A pure gain error: SNR drops, the scale-invariant ratios do not.
        row("0.5 * clean", &u.clean, &noise, &combine(&u.clean, 0.5, &noise, 0.0)?)?,
        row("pcm16 clean", &u.clean, &noise, &u.clean.quantize_pcm16())?,
    ])
}

#[allow(dead_code)]
fn main() -> Result<()> {
    println!("{:>15} {:>9} {:>9} {:>11} {:>9} {:>9} {:>9}", "estimate", "snr", "lsd", "mse", "sdr", "sir", "sar");
    for r in run()? {
        println!(
            "{:>15} {:>9.3} {:>9.3} {:>11.3e} {:>9.3} {:>9.3} {:>9.3}",
            r.name, r.snr, r.lsd, r.mse, r.bss.sdr, r.bss.sir, r.bss.sar
        );
    }
    let pairs: [(&[usize], &[usize]); 3] = [(&[3, 4, 5], &[3, 4, 5]), (&[3, 4, 5], &[3, 5]), (&[3, 4], &[6, 3, 4, 7])];
    for (reference, hypothesis) in pairs {
        println!(
            "ref {reference:?} hyp {hypothesis:?}: {} edits, wer {:.3}",
            edit_distance(reference, hypothesis),
            wer(reference, hypothesis)
        );
    }
    Ok(())
}
