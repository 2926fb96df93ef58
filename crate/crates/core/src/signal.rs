//! Waveform ↔ magnitude-spectrum features.
//!
//! 16 kHz audio is cut into 256-sample (16 ms) frames with a 128-sample hop,
//! weighted by a periodic Hann window, zero-padded to 512 points and
//! transformed. Bins 0..256 form the 256-wide feature; the Nyquist bin is
//! kept aside together with the phases so analysis followed by synthesis is
//! exact on interior samples.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 256;
pub const HOP: usize = FRAME_LEN / 2;
pub const FFT_SIZE: usize = 512;
/// Feature width: bins `0..FFT_SIZE/2`, Nyquist excluded.
pub const NUM_BINS: usize = FFT_SIZE / 2;
/// Phases are retained for every non-negative frequency, Nyquist included.
pub const NUM_PHASES: usize = FFT_SIZE / 2 + 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("waveform sample {i} is {}", samples[i])));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    /// Rounds every sample onto the 16-bit PCM grid, as if written and read back.
    pub fn quantize_pcm16(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|&v| pcm16_from(v) as f64 / PCM_SCALE).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::AudioFormat(format!("{}: expected mono, found {} channels", path.display(), spec.channels)));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::AudioFormat(format!(
                "{}: expected 16-bit PCM, found {:?} {}-bit",
                path.display(),
                spec.sample_format,
                spec.bits_per_sample
            )));
        }
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::AudioFormat(format!(
                "{}: expected {SAMPLE_RATE} Hz, found {} Hz",
                path.display(),
                spec.sample_rate
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM_SCALE))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| wav_error(path, e))?;
        Self::new(samples, spec.sample_rate)
    }

    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::AudioFormat(format!("only {SAMPLE_RATE} Hz output is supported")));
        }
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
        for &s in &self.samples {
            writer.write_sample(pcm16_from(s)).map_err(|e| wav_error(path, e))?;
        }
        writer.finalize().map_err(|e| wav_error(path, e))
    }
}

const PCM_SCALE: f64 = 32767.0;

fn pcm16_from(v: f64) -> i16 {
    (v * PCM_SCALE).round().clamp(-PCM_SCALE, PCM_SCALE) as i16
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat(format!("{}: {other}", path.display())),
    }
}

/// Periodic Hann window of length `n`.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Windowed frames, row-major `frames × FRAME_LEN`.
#[derive(Clone, Debug, PartialEq)]
pub struct Framed {
    pub data: Vec<f64>,
    pub frames: usize,
    /// Length of the waveform the frames were cut from.
    pub num_samples: usize,
}

impl Framed {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * FRAME_LEN..(t + 1) * FRAME_LEN]
    }
}

pub fn num_frames(num_samples: usize) -> Option<usize> {
    (num_samples >= FRAME_LEN).then(|| (num_samples - FRAME_LEN) / HOP + 1)
}

pub fn frame_and_window(w: &Waveform) -> Result<Framed> {
    let frames = num_frames(w.len()).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "signal of {} samples is shorter than one {FRAME_LEN}-sample frame",
            w.len()
        ))
    })?;
    let window = hann_periodic(FRAME_LEN);
    let mut data = Vec::with_capacity(frames * FRAME_LEN);
    for t in 0..frames {
        let seg = &w.samples[t * HOP..t * HOP + FRAME_LEN];
        data.extend(seg.iter().zip(&window).map(|(x, h)| x * h));
    }
    Ok(Framed {
        data,
        frames,
        num_samples: w.len(),
    })
}

/// Per-frame magnitude features plus what synthesis needs to invert them.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// `frames × NUM_BINS`, non-negative.
    pub magnitudes: Vec<f64>,
    /// `frames × NUM_PHASES` radians, when retained.
    pub phases: Option<Vec<f64>>,
    /// Nyquist-bin magnitude per frame, when retained.
    pub nyquist: Option<Vec<f64>>,
    pub frames: usize,
    pub num_samples: usize,
    pub sample_rate: u32,
}

impl FeatureSequence {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.magnitudes[t * NUM_BINS..(t + 1) * NUM_BINS]
    }

    pub fn frame_len(&self) -> usize {
        FRAME_LEN
    }

    pub fn hop(&self) -> usize {
        HOP
    }

    pub fn fft_size(&self) -> usize {
        FFT_SIZE
    }

    /// Same phases and length, different magnitudes (Nyquist dropped).
    pub fn with_magnitudes(&self, magnitudes: Vec<f64>) -> Result<Self> {
        if magnitudes.len() != self.frames * NUM_BINS {
            return Err(Error::shape("with_magnitudes", "frames", self.frames * NUM_BINS, magnitudes.len()));
        }
        Ok(Self {
            magnitudes,
            phases: self.phases.clone(),
            nyquist: None,
            frames: self.frames,
            num_samples: self.num_samples,
            sample_rate: self.sample_rate,
        })
    }
}

/// Forward/inverse 512-point transforms with cached plans.
pub struct Stft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(FFT_SIZE),
            inverse: planner.plan_fft_inverse(FFT_SIZE),
        }
    }

    pub fn analyze(&self, framed: &Framed, sample_rate: u32) -> FeatureSequence {
        let t_count = framed.frames;
        let mut magnitudes = Vec::with_capacity(t_count * NUM_BINS);
        let mut phases = Vec::with_capacity(t_count * NUM_PHASES);
        let mut nyquist = Vec::with_capacity(t_count);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        for t in 0..t_count {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            for (c, &x) in buf.iter_mut().zip(framed.frame(t)) {
                c.re = x;
            }
            self.forward.process(&mut buf);
            magnitudes.extend(buf[..NUM_BINS].iter().map(|c| c.norm()));
            phases.extend(buf[..NUM_PHASES].iter().map(|c| c.arg()));
            nyquist.push(buf[NUM_BINS].norm());
        }
        FeatureSequence {
            magnitudes,
            phases: Some(phases),
            nyquist: Some(nyquist),
            frames: t_count,
            num_samples: framed.num_samples,
            sample_rate,
        }
    }

    pub fn synthesize(&self, fs: &FeatureSequence) -> Result<Waveform> {
        let phases = fs
            .phases
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("reconstruction needs retained phases".into()))?;
        if fs.magnitudes.len() != fs.frames * NUM_BINS {
            return Err(Error::shape("reconstruct", "magnitude frames", fs.frames, fs.magnitudes.len() / NUM_BINS));
        }
        if phases.len() != fs.frames * NUM_PHASES {
            return Err(Error::shape("reconstruct", "phase frames", fs.frames, phases.len() / NUM_PHASES));
        }
        if let Some(ny) = &fs.nyquist {
            if ny.len() != fs.frames {
                return Err(Error::shape("reconstruct", "nyquist frames", fs.frames, ny.len()));
            }
        }
        let covered = (fs.frames - 1) * HOP + FRAME_LEN;
        let mut out = vec![0.0; fs.num_samples.max(covered)];
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let scale = 1.0 / FFT_SIZE as f64;
        for t in 0..fs.frames {
            let mags = fs.frame(t);
            let ph = &phases[t * NUM_PHASES..(t + 1) * NUM_PHASES];
            let ny = fs.nyquist.as_ref().map_or(0.0, |n| n[t]);
            for k in 0..NUM_PHASES {
                let m = if k < NUM_BINS { mags[k] } else { ny };
                buf[k] = Complex::from_polar(m, ph[k]);
            }
            // Real signal: DC and Nyquist are real-valued, upper half mirrors.
            buf[0].im = 0.0;
            buf[NUM_BINS].im = 0.0;
            for k in 1..NUM_BINS {
                buf[FFT_SIZE - k] = buf[k].conj();
            }
            self.inverse.process(&mut buf);
            // Periodic Hann at 50% overlap sums to exactly one, so plain
            // overlap-add needs no further normalization.
            for (o, c) in out[t * HOP..t * HOP + FRAME_LEN].iter_mut().zip(&buf[..FRAME_LEN]) {
                *o += c.re * scale;
            }
        }
        out.truncate(fs.num_samples.max(1));
        Waveform::new(out, fs.sample_rate)
    }
}

pub fn stft_magnitude(framed: &Framed, sample_rate: u32) -> FeatureSequence {
    Stft::new().analyze(framed, sample_rate)
}

pub fn reconstruct(fs: &FeatureSequence) -> Result<Waveform> {
    Stft::new().synthesize(fs)
}

/// Waveform straight to features.
pub fn analyze(w: &Waveform) -> Result<FeatureSequence> {
    Ok(stft_magnitude(&frame_and_window(w)?, w.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_wave(n: usize, seed: u64) -> Waveform {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn frame_count_formula() {
        assert_eq!(num_frames(16000), Some(124));
        let f = frame_and_window(&random_wave(16000, 1)).unwrap();
        assert_eq!(f.frames, 124);
        assert!(frame_and_window(&random_wave(255, 1)).is_err());
        assert_eq!(num_frames(256), Some(1));
    }

    #[test]
    fn constant_signal_frames_equal_window() {
        let w = Waveform::new(vec![1.0; 1000], SAMPLE_RATE).unwrap();
        let f = frame_and_window(&w).unwrap();
        let hann = hann_periodic(FRAME_LEN);
        for t in 0..f.frames {
            assert_eq!(f.frame(t), hann.as_slice());
        }
    }

    #[test]
    fn hann_is_cola_at_half_overlap() {
        let h = hann_periodic(FRAME_LEN);
        for i in 0..HOP {
            assert!((h[i] + h[i + HOP] - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_frame_has_zero_magnitudes() {
        let w = Waveform::new(vec![0.0; 2000], SAMPLE_RATE).unwrap();
        let fs = analyze(&w).unwrap();
        assert_eq!(fs.magnitudes.len(), fs.frames * 256);
        assert!(fs.magnitudes.iter().all(|&m| m == 0.0));
        let back = reconstruct(&fs).unwrap();
        assert!(back.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn bin_centered_sinusoid_peaks_at_its_bin() {
        for k in [3usize, 17, 64, 200, 250] {
            let f = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
            let x = (0..2048)
                .map(|n| (2.0 * PI * f * n as f64 / SAMPLE_RATE as f64).sin())
                .collect();
            let fs = analyze(&Waveform::new(x, SAMPLE_RATE).unwrap()).unwrap();
            for t in 0..fs.frames {
                let frame = fs.frame(t);
                let argmax = (0..NUM_BINS).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
                assert_eq!(argmax, k);
            }
        }
    }

    #[test]
    fn round_trip_is_exact_in_the_interior() {
        let w = random_wave(4000, 9);
        let back = reconstruct(&analyze(&w).unwrap()).unwrap();
        assert_eq!(back.len(), w.len());
        let covered = (num_frames(w.len()).unwrap() - 1) * HOP + FRAME_LEN;
        for i in FRAME_LEN..covered - FRAME_LEN {
            assert!((back.samples[i] - w.samples[i]).abs() < 1e-10, "sample {i}");
        }
    }

    #[test]
    fn phase_frame_mismatch_is_rejected() {
        let mut fs = analyze(&random_wave(1000, 3)).unwrap();
        fs.phases.as_mut().unwrap().truncate(NUM_PHASES);
        assert!(reconstruct(&fs).is_err());
        fs.phases = None;
        assert!(reconstruct(&fs).is_err());
    }

    #[test]
    fn wav_round_trip_and_rate_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = random_wave(500, 4).quantize_pcm16();
        w.write_wav(&p).unwrap();
        assert_eq!(Waveform::read_wav(&p).unwrap(), w);

        let p8 = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut wr = hound::WavWriter::create(&p8, spec).unwrap();
        wr.write_sample(0i16).unwrap();
        wr.finalize().unwrap();
        assert!(matches!(Waveform::read_wav(&p8), Err(Error::AudioFormat(_))));
    }

    proptest::proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(32))]
        #[test]
        fn framing_is_linear(seed in 0u64..10_000, n in 256usize..2000, a in -4.0f64..4.0) {
            let x = random_wave(n, seed);
            let ax = Waveform::new(x.samples.iter().map(|v| a * v).collect(), SAMPLE_RATE).unwrap();
            let fx = frame_and_window(&x).unwrap();
            let fax = frame_and_window(&ax).unwrap();
            proptest::prop_assert_eq!(fx.frames, fax.frames);
            for (p, q) in fx.data.iter().zip(&fax.data) {
                proptest::prop_assert!((a * p - q).abs() <= 1e-15 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn round_trip_holds_for_any_length(seed in 0u64..10_000, n in 256usize..3000) {
            let x = random_wave(n, seed);
            let back = reconstruct(&analyze(&x).unwrap()).unwrap();
            proptest::prop_assert_eq!(back.len(), x.len());
            let frames = num_frames(n).unwrap();
            for i in HOP..frames * HOP {
                proptest::prop_assert!((back.samples[i] - x.samples[i]).abs() < 1e-12);
            }
        }
    }
}
