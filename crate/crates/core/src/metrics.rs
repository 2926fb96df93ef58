//! Enhancement and recognition metrics, and the per-split evaluation report.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, Split};
use crate::dataset::{load_split, LoadedUtterance};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::signal::{self, Waveform, NUM_BINS};
use crate::tensor::Real;

/// Every dB figure is clamped to `±DB_CAP`.
pub const DB_CAP: f64 = 100.0;
/// Floor added to magnitudes before taking logs in [`lsd`].
pub const LSD_EPS: f64 = 1e-8;

fn db_ratio(num: f64, den: f64) -> f64 {
    if num <= 0.0 && den <= 0.0 {
        return -DB_CAP;
    }
    (10.0 * (num / den).log10()).clamp(-DB_CAP, DB_CAP)
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, "samples", a, b))
    }
}

/// Global SNR of `estimate` against `clean`, in dB.
pub fn snr(clean: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_lengths("snr", clean.len(), estimate.len())?;
    let signal = energy(&clean.samples);
    if signal == 0.0 {
        return Err(Error::InvalidArgument("snr: clean reference is silent".into()));
    }
    let err: f64 = clean.samples.iter().zip(&estimate.samples).map(|(c, e)| (c - e) * (c - e)).sum();
    Ok(db_ratio(signal, err))
}

/// Log-spectral distance between two `frames × 256` magnitude arrays:
/// the frame-average of the RMS dB difference over bins.
pub fn lsd(clean: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths("lsd", clean.len(), estimate.len())?;
    if clean.is_empty() || clean.len() % NUM_BINS != 0 {
        return Err(Error::InvalidArgument(format!(
            "lsd: {} values do not form whole {NUM_BINS}-bin frames",
            clean.len()
        )));
    }
    if clean.iter().chain(estimate).any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("lsd: magnitudes must be finite and non-negative".into()));
    }
    let frames = clean.len() / NUM_BINS;
    let total: f64 = clean
        .chunks_exact(NUM_BINS)
        .zip(estimate.chunks_exact(NUM_BINS))
        .map(|(c, e)| {
            let ms = c
                .iter()
                .zip(e)
                .map(|(&c, &e)| (20.0 * ((e + LSD_EPS) / (c + LSD_EPS)).log10()).powi(2))
                .sum::<f64>()
                / NUM_BINS as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// Mean squared difference between two magnitude arrays.
pub fn magnitude_mse(clean: &[f64], estimate: &[f64]) -> Result<f64> {
    check_lengths("magnitude_mse", clean.len(), estimate.len())?;
    if clean.is_empty() {
        return Err(Error::InvalidArgument("magnitude_mse: empty input".into()));
    }
    Ok(clean.iter().zip(estimate).map(|(c, e)| (c - e) * (c - e)).sum::<f64>() / clean.len() as f64)
}

/// Orthogonal decomposition of an estimate against a target and an interferer.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub target: Vec<f64>,
    pub interference: Vec<f64>,
    pub artifacts: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BssEval {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Splits `estimate` into its projection on `clean`, the extra part
/// explained by `noise`, and the remainder.
pub fn decompose(clean: &[f64], noise: &[f64], estimate: &[f64]) -> Result<Decomposition> {
    check_lengths("bss_eval", clean.len(), noise.len())?;
    check_lengths("bss_eval", clean.len(), estimate.len())?;
    let cc = energy(clean);
    if cc == 0.0 {
        return Err(Error::InvalidArgument("bss_eval: clean reference is silent".into()));
    }
    // Gram-Schmidt: q1 along clean, q2 the part of noise orthogonal to it.
    let a = dot(noise, clean) / cc;
    let q2: Vec<f64> = noise.iter().zip(clean).map(|(n, c)| n - a * c).collect();
    let qq = energy(&q2);
    if qq <= 1e-12 * energy(noise).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument("bss_eval: noise reference is (nearly) parallel to clean".into()));
    }
    let b = dot(estimate, clean) / cc;
    let d = dot(estimate, &q2) / qq;
    let target: Vec<f64> = clean.iter().map(|c| b * c).collect();
    let interference: Vec<f64> = q2.iter().map(|q| d * q).collect();
    let artifacts = estimate
        .iter()
        .zip(&target)
        .zip(&interference)
        .map(|((e, t), i)| e - t - i)
        .collect();
    Ok(Decomposition {
        target,
        interference,
        artifacts,
    })
}

pub fn bss_eval(clean: &Waveform, noise: &Waveform, estimate: &Waveform) -> Result<BssEval> {
    let d = decompose(&clean.samples, &noise.samples, &estimate.samples)?;
    let t = energy(&d.target);
    let i = energy(&d.interference);
    let a = energy(&d.artifacts);
    let ia: Vec<f64> = d.interference.iter().zip(&d.artifacts).map(|(x, y)| x + y).collect();
    let ti: Vec<f64> = d.target.iter().zip(&d.interference).map(|(x, y)| x + y).collect();
    Ok(BssEval {
        sdr: db_ratio(t, energy(&ia)),
        sir: db_ratio(t, i),
        sar: db_ratio(energy(&ti), a),
    })
}

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Edits per reference word. An empty reference scores the hypothesis
/// length (zero when both are empty).
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> f64 {
    let edits = edit_distance(reference, hypothesis) as f64;
    if reference.is_empty() {
        edits
    } else {
        edits / reference.len() as f64
    }
}

/// Which signal is scored as the enhanced estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Model output from the noisy input.
    Model,
    /// The noisy input itself (lower reference row).
    Noisy,
    /// The clean reference itself (upper reference row).
    Clean,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(EvalMode::Model),
            "noisy" => Ok(EvalMode::Noisy),
            "clean" => Ok(EvalMode::Clean),
            other => Err(Error::InvalidArgument(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Model => "model",
            EvalMode::Noisy => "noisy",
            EvalMode::Clean => "clean",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub id: String,
    pub snr_db: f64,
    pub lsd: f64,
    pub mse: f64,
    pub sir_db: f64,
    pub sdr_db: f64,
    pub sar_db: f64,
    pub wer: f64,
    pub correct: bool,
    #[serde(skip)]
    pub edits: usize,
    #[serde(skip)]
    pub ref_words: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub snr: f64,
    pub lsd: f64,
    pub mse: f64,
    pub sir: f64,
    pub sdr: f64,
    pub sar: f64,
    /// Corpus-level: total edits over total reference words.
    pub wer: f64,
    pub ser: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub split: Split,
    pub mode: EvalMode,
    pub rows: Vec<UtteranceMetrics>,
    pub aggregates: Aggregates,
}

#[derive(Serialize)]
struct Summary<'a> {
    split: Split,
    mode: EvalMode,
    utterances: usize,
    aggregates: &'a Aggregates,
}

pub const REPORT_CSV_HEADER: &str = "id,snr_db,lsd,mse,sir_db,sdr_db,sar_db,wer,correct";

impl MetricReport {
    pub fn from_rows(split: Split, mode: EvalMode, rows: Vec<UtteranceMetrics>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!("split `{}` has no utterances", split.as_str())));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&UtteranceMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let edits: usize = rows.iter().map(|r| r.edits).sum();
        let words: usize = rows.iter().map(|r| r.ref_words).sum();
        let aggregates = Aggregates {
            snr: mean(|r| r.snr_db),
            lsd: mean(|r| r.lsd),
            mse: mean(|r| r.mse),
            sir: mean(|r| r.sir_db),
            sdr: mean(|r| r.sdr_db),
            sar: mean(|r| r.sar_db),
            wer: if words == 0 { edits as f64 } else { edits as f64 / words as f64 },
            ser: rows.iter().filter(|r| !r.correct).count() as f64 / n,
        };
        Ok(Self {
            split,
            mode,
            rows,
            aggregates,
        })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.id, r.snr_db, r.lsd, r.mse, r.sir_db, r.sdr_db, r.sar_db, r.wer, r.correct
            ));
        }
        s
    }

    pub fn to_json(&self) -> String {
        let summary = Summary {
            split: self.split,
            mode: self.mode,
            utterances: self.rows.len(),
            aggregates: &self.aggregates,
        };
        let mut s = serde_json::to_string_pretty(&summary).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Runs the model over one waveform: PCM16-quantized enhanced signal and the
/// denoiser's final top-layer state. The estimate reuses the noisy phase.
pub fn enhance_waveform<F: Real>(model: &Model<F>, noisy: &Waveform) -> Result<(Waveform, Vec<F>)> {
    let features = signal::analyze(noisy)?;
    let (mags, top) = model.enhance(&features.magnitudes, features.frames)?;
    let enhanced = signal::reconstruct(&features.with_magnitudes(mags)?)?;
    Ok((enhanced.quantize_pcm16(), top))
}

/// Proxy transcription: greedy decoding from the denoiser's final state.
pub fn recognize<F: Real>(model: &Model<F>, input: &Waveform) -> Result<Vec<usize>> {
    let features = signal::analyze(input)?;
    let (_, top) = model.enhance(&features.magnitudes, features.frames)?;
    model.lm_greedy_decode(&top, crate::corpus::MAX_TRANSCRIPT_LEN)
}

pub fn evaluate_utterance<F: Real>(model: &Model<F>, utt: &LoadedUtterance, mode: EvalMode) -> Result<UtteranceMetrics> {
    let (estimate, hypothesis) = match mode {
        EvalMode::Model => {
            let (est, top) = enhance_waveform(model, &utt.noisy_wav)?;
            let hyp = model.lm_greedy_decode(&top, crate::corpus::MAX_TRANSCRIPT_LEN)?;
            (est, hyp)
        }
        EvalMode::Noisy => (utt.noisy_wav.clone(), recognize(model, &utt.noisy_wav)?),
        EvalMode::Clean => (utt.clean_wav.clone(), recognize(model, &utt.clean_wav)?),
    };
    let est_mags = signal::analyze(&estimate)?.magnitudes;
    let noise = Waveform::new(
        utt.noisy_wav.samples.iter().zip(&utt.clean_wav.samples).map(|(n, c)| n - c).collect(),
        utt.clean_wav.sample_rate,
    )?;
    let bss = bss_eval(&utt.clean_wav, &noise, &estimate)?;
    let reference = &utt.entry.transcript;
    let edits = edit_distance(reference, &hypothesis);
    Ok(UtteranceMetrics {
        id: utt.entry.id.clone(),
        snr_db: snr(&utt.clean_wav, &estimate)?,
        lsd: lsd(&utt.clean.magnitudes, &est_mags)?,
        mse: magnitude_mse(&utt.clean.magnitudes, &est_mags)?,
        sir_db: bss.sir,
        sdr_db: bss.sdr,
        sar_db: bss.sar,
        wer: wer(reference, &hypothesis),
        correct: edits == 0,
        edits,
        ref_words: reference.len(),
    })
}

/// Scores already-loaded utterances; rows keep the input order.
pub fn evaluate_loaded<F: Real>(
    model: &Model<F>,
    utterances: &[LoadedUtterance],
    split: Split,
    mode: EvalMode,
) -> Result<MetricReport> {
    let rows = utterances
        .par_iter()
        .map(|u| evaluate_utterance(model, u, mode))
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_rows(split, mode, rows)
}

/// Loads `split` from the corpus and scores it.
pub fn evaluate<F: Real>(manifest: &Manifest, split: Split, model: &Model<F>, mode: EvalMode) -> Result<MetricReport> {
    let utterances = load_split(manifest, split)?;
    evaluate_loaded(model, &utterances, split, mode)
}
