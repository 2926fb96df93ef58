//! Synthetic speech-like corpus: harmonic "words" with transcripts, room
//! reverberation and additive noise mixed at a controlled SNR.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{Waveform, FFT_SIZE, NUM_BINS, SAMPLE_RATE};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
/// Ids below this value are reserved tokens; words occupy `FIRST_WORD..size`.
pub const FIRST_WORD: usize = 3;
pub const MAX_TRANSCRIPT_LEN: usize = 60;
pub const SNR_RANGE_DB: (f64, f64) = (0.0, 30.0);

const HARMONICS: usize = 8;
const MIN_F0_BIN: usize = 4;
const MAX_F0_BIN: usize = NUM_BINS / HARMONICS - 1;
const STRONG_WEIGHTS: [f64; 3] = [1.0, 0.75, 0.55];
const WEAK_WEIGHT: f64 = 0.12;

/// Spectral recipe of one word: a bin-centred fundamental and the weight of
/// each of its first eight harmonics.
#[derive(Clone, Debug, PartialEq)]
pub struct WordSignature {
    pub f0_bin: usize,
    pub weights: [f64; HARMONICS],
}

impl WordSignature {
    pub fn f0_hz(&self) -> f64 {
        self.f0_bin as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64
    }

    /// The three strongest harmonic bins, ascending.
    pub fn dominant_bins(&self) -> [usize; 3] {
        let mut idx: Vec<usize> = (0..HARMONICS).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]));
        let mut bins = [0; 3];
        for (slot, &h) in bins.iter_mut().zip(&idx[..3]) {
            *slot = (h + 1) * self.f0_bin;
        }
        bins.sort_unstable();
        bins
    }
}

/// Token inventory. Ids `0..3` are PAD, BOS and EOS; the remaining
/// `size - 3` ids are words with distinct spectral signatures.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    size: usize,
    seed: u64,
    signatures: Vec<WordSignature>,
}

impl Vocabulary {
    pub fn new(size: usize, seed: u64) -> Result<Self> {
        if size <= FIRST_WORD {
            return Err(Error::config("vocab_size", format!("must exceed the {FIRST_WORD} reserved tokens")));
        }
        let mut candidates = Vec::new();
        for f0 in MIN_F0_BIN..=MAX_F0_BIN {
            for a in 0..HARMONICS {
                for b in a + 1..HARMONICS {
                    for c in b + 1..HARMONICS {
                        candidates.push((f0, [a, b, c]));
                    }
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x766f_6361_6275_6c61);
        candidates.shuffle(&mut rng);
        let mut seen = HashSet::new();
        let mut signatures = Vec::with_capacity(size - FIRST_WORD);
        for (f0, strong) in candidates {
            if signatures.len() == size - FIRST_WORD {
                break;
            }
            let mut weights = [WEAK_WEIGHT; HARMONICS];
            for (&h, &w) in strong.iter().zip(&STRONG_WEIGHTS) {
                weights[h] = w;
            }
            let sig = WordSignature { f0_bin: f0, weights };
            if seen.insert(sig.dominant_bins()) {
                signatures.push(sig);
            }
        }
        if signatures.len() < size - FIRST_WORD {
            return Err(Error::config(
                "vocab_size",
                format!("at most {} distinct word signatures are available", signatures.len() + FIRST_WORD),
            ));
        }
        Ok(Self { size, seed, signatures })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_words(&self) -> usize {
        self.size - FIRST_WORD
    }

    pub fn is_word(&self, id: usize) -> bool {
        (FIRST_WORD..self.size).contains(&id)
    }

    pub fn signature(&self, id: usize) -> Option<&WordSignature> {
        self.is_word(id).then(|| &self.signatures[id - FIRST_WORD])
    }

    pub fn word(&self, id: usize) -> String {
        match id {
            PAD => "<pad>".into(),
            BOS => "<s>".into(),
            EOS => "</s>".into(),
            _ => format!("w{id:04}"),
        }
    }
}

/// Parameters of the corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Total utterances, split 5:1:1 into train/val/test.
    pub total: usize,
    /// Token inventory size including the three reserved tokens.
    pub vocab_size: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub word_ms: f64,
    pub crossfade_ms: f64,
    pub speech_rms: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub noise_types: usize,
    pub rir_count: usize,
    pub rt60_min_s: f64,
    pub rt60_max_s: f64,
    pub drr_min_db: f64,
    pub drr_max_db: f64,
    /// Mix noise into the dry signal and reverberate the mixture; otherwise
    /// reverberate the clean signal and add noise afterwards.
    pub mix_then_rir: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            total: 70,
            vocab_size: 857,
            min_words: 8,
            max_words: MAX_TRANSCRIPT_LEN,
            word_ms: 120.0,
            crossfade_ms: 10.0,
            speech_rms: 0.05,
            snr_min_db: SNR_RANGE_DB.0,
            snr_max_db: SNR_RANGE_DB.1,
            noise_types: 25,
            rir_count: 8,
            rt60_min_s: 0.15,
            rt60_max_s: 0.4,
            drr_min_db: 8.0,
            drr_max_db: 18.0,
            mix_then_rir: true,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.total == 0 {
            return bad("total", "must be positive");
        }
        if self.vocab_size <= FIRST_WORD {
            return bad("vocab_size", "must exceed the three reserved tokens");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("min_words", "must be in 1..=max_words");
        }
        if self.max_words > MAX_TRANSCRIPT_LEN {
            return bad("max_words", "transcripts are capped at 60 words");
        }
        if !(self.snr_min_db >= SNR_RANGE_DB.0 && self.snr_max_db <= SNR_RANGE_DB.1 && self.snr_min_db <= self.snr_max_db) {
            return bad("snr_min_db", "SNR range must lie within 0..=30 dB");
        }
        if !(self.word_ms > 0.0 && self.crossfade_ms >= 0.0 && self.crossfade_ms * 2.0 < self.word_ms) {
            return bad("crossfade_ms", "must be non-negative and shorter than half a word");
        }
        if ms_to_samples(self.word_ms) < crate::signal::FRAME_LEN {
            return bad("word_ms", "a word must span at least one analysis frame");
        }
        if !(self.speech_rms > 0.0 && self.speech_rms < 0.3) {
            return bad("speech_rms", "must be in (0, 0.3)");
        }
        if self.noise_types == 0 {
            return bad("noise_types", "must be positive");
        }
        if self.rir_count == 0 {
            return bad("rir_count", "must be positive");
        }
        if !(self.rt60_min_s > 0.0 && self.rt60_min_s <= self.rt60_max_s) {
            return bad("rt60_min_s", "must satisfy 0 < rt60_min_s <= rt60_max_s");
        }
        if self.drr_min_db > self.drr_max_db {
            return bad("drr_min_db", "must not exceed drr_max_db");
        }
        Ok(())
    }
}

fn ms_to_samples(ms: f64) -> usize {
    (ms * SAMPLE_RATE as f64 / 1000.0).round() as usize
}

/// Renders a transcript as concatenated harmonic word segments joined with
/// raised-cosine cross-fades. Identical `(transcript, seed)` give identical
/// samples.
pub fn generate_clean(transcript: &[usize], vocab: &Vocabulary, seed: u64, cfg: &CorpusConfig) -> Result<Waveform> {
    if transcript.is_empty() {
        return Err(Error::InvalidArgument("transcript is empty".into()));
    }
    if transcript.len() > MAX_TRANSCRIPT_LEN {
        return Err(Error::InvalidArgument(format!(
            "transcript has {} words, the cap is {MAX_TRANSCRIPT_LEN}",
            transcript.len()
        )));
    }
    if let Some(&bad) = transcript.iter().find(|&&id| !vocab.is_word(id)) {
        return Err(Error::InvalidArgument(format!("token {bad} is not a word id")));
    }
    let seg = ms_to_samples(cfg.word_ms);
    let fade = ms_to_samples(cfg.crossfade_ms);
    let step = seg - fade;
    let total = step * transcript.len() + fade;
    let mut out = vec![0.0; total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = SAMPLE_RATE as f64;
    for (i, &id) in transcript.iter().enumerate() {
        let sig = vocab.signature(id).expect("validated");
        let gain = rng.gen_range(0.8..1.2);
        let phases: Vec<f64> = (0..HARMONICS).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        let norm = (sig.weights.iter().map(|w| w * w).sum::<f64>() / 2.0).sqrt();
        let amp = cfg.speech_rms * gain / norm;
        let w0 = std::f64::consts::TAU * sig.f0_hz() / sr;
        for n in 0..seg {
            let env = if n < fade {
                0.5 - 0.5 * (std::f64::consts::PI * (n as f64 + 0.5) / fade as f64).cos()
            } else if n >= seg - fade {
                0.5 - 0.5 * (std::f64::consts::PI * ((seg - n) as f64 - 0.5) / fade as f64).cos()
            } else {
                1.0
            };
            let v: f64 = sig
                .weights
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(h, (w, p))| w * (w0 * (h + 1) as f64 * n as f64 + p).sin())
                .sum();
            out[i * step + n] += amp * env * v;
        }
    }
    Waveform::new(out, SAMPLE_RATE)
}

/// Sample range of word `i` (without its fades) inside a generated utterance.
pub fn word_span(i: usize, cfg: &CorpusConfig) -> std::ops::Range<usize> {
    let seg = ms_to_samples(cfg.word_ms);
    let fade = ms_to_samples(cfg.crossfade_ms);
    let start = i * (seg - fade);
    start + fade..start + seg - fade
}

/// Full linear convolution with the energy-normalized impulse response,
/// truncated to the input length.
pub fn convolve_rir(x: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if x.is_empty() || rir.is_empty() {
        return Err(Error::InvalidArgument("convolution operands must be non-empty".into()));
    }
    if x.sample_rate != rir.sample_rate {
        return Err(Error::InvalidArgument(format!(
            "sample-rate mismatch: signal {} Hz, impulse response {} Hz",
            x.sample_rate, rir.sample_rate
        )));
    }
    let energy: f64 = rir.samples.iter().map(|v| v * v).sum();
    if energy == 0.0 {
        return Err(Error::InvalidArgument("impulse response has zero energy".into()));
    }
    let norm = energy.sqrt();
    let n = x.len() + rir.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let load = |s: &[f64], scale: f64| {
        let mut b = vec![Complex::new(0.0, 0.0); size];
        b.iter_mut().zip(s).for_each(|(c, &v)| c.re = v * scale);
        b
    };
    let mut a = load(&x.samples, 1.0);
    let mut b = load(&rir.samples, 1.0 / norm);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(p, q)| *p *= q);
    inv.process(&mut a);
    let scale = 1.0 / size as f64;
    Waveform::new(a[..x.len()].iter().map(|c| c.re * scale).collect(), x.sample_rate)
}

/// Gain that puts `noise` at `snr_db` below `clean`, both measured over the
/// clean signal's length.
pub fn noise_gain(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<f64> {
    let pc = clean.power();
    let fitted = fit_length(noise, clean.len())?;
    let pn = fitted.power();
    if pc == 0.0 {
        return Err(Error::InvalidArgument("clean signal has zero power".into()));
    }
    if pn == 0.0 {
        return Err(Error::InvalidArgument("noise signal has zero power".into()));
    }
    Ok((pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Tiles or crops `noise` to exactly `len` samples.
pub fn fit_length(noise: &Waveform, len: usize) -> Result<Waveform> {
    if noise.is_empty() {
        return Err(Error::InvalidArgument("noise signal is empty".into()));
    }
    let samples = noise.samples.iter().copied().cycle().take(len).collect();
    Waveform::new(samples, noise.sample_rate)
}

/// `clean + α·noise` with α chosen so the mixture has the requested SNR.
pub fn mix_at_snr(clean: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(Error::InvalidArgument("sample-rate mismatch between clean and noise".into()));
    }
    let alpha = noise_gain(clean, noise, snr_db)?;
    let fitted = fit_length(noise, clean.len())?;
    let samples = clean.samples.iter().zip(&fitted.samples).map(|(c, n)| c + alpha * n).collect();
    Waveform::new(samples, clean.sample_rate)
}

/// Synthetic room impulse response: unit direct path followed by an
/// exponentially decaying noise tail.
pub fn synth_rir(index: usize, seed: u64, cfg: &CorpusConfig) -> Waveform {
    let mut rng = stream_rng(seed, 0x5249_5200 + index as u64);
    let rt60 = rng.gen_range(cfg.rt60_min_s..=cfg.rt60_max_s);
    let drr = rng.gen_range(cfg.drr_min_db..=cfg.drr_max_db);
    let sr = SAMPLE_RATE as f64;
    let len = (rt60 * sr) as usize;
    let onset = 16;
    let mut h = vec![0.0; len.max(onset + 1)];
    h[0] = 1.0;
    let decay = 6.9078 / (rt60 * sr);
    for (n, v) in h.iter_mut().enumerate().skip(onset) {
        *v = gaussian(&mut rng) * (-decay * n as f64).exp();
    }
    let tail: f64 = h[onset..].iter().map(|v| v * v).sum();
    let target = 10f64.powf(-drr / 10.0);
    let g = (target / tail).sqrt();
    h[onset..].iter_mut().for_each(|v| *v *= g);
    Waveform::new(h, SAMPLE_RATE).expect("finite")
}

/// Noise generator families; `noise_types` variants cycle through these.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseFamily {
    White,
    Pink,
    Brown,
    Babble,
    ModulatedTones,
}

impl NoiseFamily {
    pub fn of_type(noise_type: usize) -> Self {
        match noise_type % 5 {
            0 => NoiseFamily::White,
            1 => NoiseFamily::Pink,
            2 => NoiseFamily::Brown,
            3 => NoiseFamily::Babble,
            _ => NoiseFamily::ModulatedTones,
        }
    }
}

/// `len` samples of noise type `noise_type`, unit RMS up to generator
/// variance; the actual level is set by [`mix_at_snr`].
pub fn synth_noise(noise_type: usize, len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    // Per-type coloration is fixed by the type index, not by the utterance.
    let mut type_rng = ChaCha8Rng::seed_from_u64(0x4e4f_4953_4500 + noise_type as u64);
    let tilt = type_rng.gen_range(0.0..0.9);
    let sr = SAMPLE_RATE as f64;
    let mut out = vec![0.0; len];
    match NoiseFamily::of_type(noise_type) {
        NoiseFamily::White => {
            let mut prev = 0.0;
            for v in &mut out {
                let w = gaussian(rng);
                prev = tilt * prev + (1.0 - tilt) * w;
                *v = w * (1.0 - tilt) + prev * tilt;
            }
        }
        NoiseFamily::Pink => {
            let mut b = [0.0f64; 7];
            for v in &mut out {
                let w = gaussian(rng);
                b[0] = 0.99886 * b[0] + w * 0.0555179;
                b[1] = 0.99332 * b[1] + w * 0.0750759;
                b[2] = 0.96900 * b[2] + w * 0.1538520;
                b[3] = 0.86650 * b[3] + w * 0.3104856;
                b[4] = 0.55000 * b[4] + w * 0.5329522;
                b[5] = -0.7616 * b[5] - w * 0.0168980;
                *v = b[..6].iter().sum::<f64>() + b[6] + w * 0.5362;
                b[6] = w * 0.115926;
            }
        }
        NoiseFamily::Brown => {
            let leak = 0.98 + 0.015 * tilt;
            let mut acc = 0.0;
            for v in &mut out {
                acc = leak * acc + gaussian(rng) * 0.1;
                *v = acc;
            }
        }
        NoiseFamily::Babble => {
            let talkers = type_rng.gen_range(3..7);
            for _ in 0..talkers {
                let f0 = rng.gen_range(90.0..260.0);
                let rate = rng.gen_range(2.0..6.0);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                let weights: Vec<f64> = (0..10).map(|_| rng.gen_range(0.1..1.0)).collect();
                let mut ph = 0.0;
                for (n, v) in out.iter_mut().enumerate() {
                    let t = n as f64 / sr;
                    let drift = 1.0 + 0.05 * (std::f64::consts::TAU * 0.7 * t + phase).sin();
                    ph += std::f64::consts::TAU * f0 * drift / sr;
                    let env = 0.5 + 0.5 * (std::f64::consts::TAU * rate * t + phase).sin();
                    let s: f64 = weights
                        .iter()
                        .enumerate()
                        .map(|(h, w)| w * ((h + 1) as f64 * ph).sin())
                        .sum();
                    *v += env * s;
                }
            }
        }
        NoiseFamily::ModulatedTones => {
            let tones = type_rng.gen_range(2..5);
            for _ in 0..tones {
                let f = rng.gen_range(200.0..4000.0);
                let am = rng.gen_range(0.5..8.0);
                let p = rng.gen_range(0.0..std::f64::consts::TAU);
                for (n, v) in out.iter_mut().enumerate() {
                    let t = n as f64 / sr;
                    let env = 0.6 + 0.4 * (std::f64::consts::TAU * am * t).sin();
                    *v += env * (std::f64::consts::TAU * f * t + p).sin();
                }
            }
            for v in &mut out {
                *v += 0.05 * gaussian(rng);
            }
        }
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    Waveform::new(out, SAMPLE_RATE).expect("finite")
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller; one draw is enough here.
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

/// Train/val/test counts in 5:1:1 proportion: train and val take the floor
/// of their share and test receives the remainder.
pub fn split_counts(total: usize) -> (usize, usize, usize) {
    let train = total * 5 / 7;
    let val = total / 7;
    (train, val, total - train - val)
}

pub fn split_of(index: usize, total: usize) -> Split {
    let (train, val, _) = split_counts(total);
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub transcript: Vec<usize>,
    pub snr_db: f64,
    pub rir_id: usize,
    pub noise_type: usize,
    pub split: Split,
    /// SNR measured between the dry clean signal and the scaled noise that
    /// was added to it.
    pub measured_snr_db: f64,
}

pub fn utterance_id(index: usize) -> String {
    format!("utt{index:05}")
}

/// Generates utterance `index`; a pure function of `(cfg, seed, index)`.
pub fn generate_utterance(cfg: &CorpusConfig, vocab: &Vocabulary, seed: u64, index: usize) -> Result<Utterance> {
    let mut rng = stream_rng(seed, 1 + index as u64);
    let len = rng.gen_range(cfg.min_words..=cfg.max_words);
    let transcript: Vec<usize> = (0..len).map(|_| rng.gen_range(FIRST_WORD..vocab.size())).collect();
    let snr_db = rng.gen_range(cfg.snr_min_db..=cfg.snr_max_db);
    let rir_id = rng.gen_range(0..cfg.rir_count);
    let noise_type = rng.gen_range(0..cfg.noise_types);
    let clean_seed = rng.gen();
    let clean = generate_clean(&transcript, vocab, clean_seed, cfg)?;
    let noise = synth_noise(noise_type, clean.len(), &mut rng);
    let rir = synth_rir(rir_id, seed, cfg);

    let (noisy, measured) = if cfg.mix_then_rir {
        let alpha = noise_gain(&clean, &noise, snr_db)?;
        let measured = measured_snr(&clean, &noise, alpha);
        let mixed = mix_at_snr(&clean, &noise, snr_db)?;
        (convolve_rir(&mixed, &rir)?, measured)
    } else {
        let wet = convolve_rir(&clean, &rir)?;
        let alpha = noise_gain(&wet, &noise, snr_db)?;
        (mix_at_snr(&wet, &noise, snr_db)?, measured_snr(&wet, &noise, alpha))
    };
    Ok(Utterance {
        id: utterance_id(index),
        clean,
        noisy,
        transcript,
        snr_db,
        rir_id,
        noise_type,
        split: split_of(index, cfg.total),
        measured_snr_db: measured,
    })
}

fn measured_snr(clean: &Waveform, noise: &Waveform, alpha: f64) -> f64 {
    let pc: f64 = clean.samples.iter().map(|v| v * v).sum();
    let pn: f64 = noise.samples.iter().take(clean.len()).map(|v| (alpha * v).powi(2)).sum();
    10.0 * (pc / pn).log10()
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub clean_path: String,
    pub noisy_path: String,
    pub transcript: Vec<usize>,
    pub words: Vec<String>,
    pub snr_db: f64,
    pub rir_id: usize,
    pub split: Split,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CORPUS_CONFIG_FILE: &str = "corpus.toml";

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(MANIFEST_FILE);
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                line: i + 1,
                reason: e.to_string(),
            })?;
            entries.push(entry);
        }
        Ok(Self { root, entries })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Vocabulary size recorded next to the manifest, if any.
    pub fn corpus_config(&self) -> Result<Option<CorpusConfig>> {
        let path = self.root.join(CORPUS_CONFIG_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text)
            .map(Some)
            .map_err(|e| Error::config(CORPUS_CONFIG_FILE, e.to_string()))
    }
}

/// Synthesizes the whole corpus under `out_dir`: `clean/*.wav`,
/// `noisy/*.wav`, `manifest.jsonl` and a copy of the config.
pub fn build_corpus(cfg: &CorpusConfig, seed: u64, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    let vocab = Vocabulary::new(cfg.vocab_size, seed)?;
    for sub in ["clean", "noisy"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let entries: Vec<ManifestEntry> = (0..cfg.total)
        .into_par_iter()
        .map(|i| {
            let utt = generate_utterance(cfg, &vocab, seed, i)?;
            let clean_path = format!("clean/{}.wav", utt.id);
            let noisy_path = format!("noisy/{}.wav", utt.id);
            utt.clean.write_wav(out.join(&clean_path))?;
            utt.noisy.write_wav(out.join(&noisy_path))?;
            Ok(ManifestEntry {
                words: utt.transcript.iter().map(|&t| vocab.word(t)).collect(),
                id: utt.id,
                clean_path,
                noisy_path,
                transcript: utt.transcript,
                snr_db: utt.snr_db,
                rir_id: utt.rir_id,
                split: utt.split,
            })
        })
        .collect::<Result<_>>()?;

    let cfg_path = out.join(CORPUS_CONFIG_FILE);
    let cfg_text = toml::to_string(cfg).map_err(|e| Error::config("corpus", e.to_string()))?;
    write_atomic(&cfg_path, cfg_text.as_bytes())?;

    let mut text = Vec::new();
    for e in &entries {
        serde_json::to_writer(&mut text, e).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        text.push(b'\n');
    }
    write_atomic(&out.join(MANIFEST_FILE), &text)?;
    Ok(Manifest {
        root: out.to_path_buf(),
        entries,
    })
}

/// Writes through a temporary sibling and renames over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
