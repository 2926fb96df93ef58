//! Analysis followed by synthesis on random one-second signals.
//!
//! Samples covered by two overlapping frames come back to within float
//! rounding; the first and last half-frame only see one window and are
//! excluded from the error.
//!
//! ```bash
//! cargo run --release --example stft_roundtrip
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crnn_enhance::signal::{self, Stft, Waveform, HOP, SAMPLE_RATE};
use crnn_enhance::Result;

pub struct RoundTrip {
    pub signals: usize,
    pub frames: usize,
    pub max_interior_error: f64,
}

/// Largest interior reconstruction error over `signals` random waveforms.
pub fn run(signals: usize, seed: u64) -> Result<RoundTrip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stft = Stft::new();
    let mut worst: f64 = 0.0;
    let mut frames = 0;
    for _ in 0..signals {
        let samples: Vec<f64> = (0..SAMPLE_RATE as usize).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = Waveform::new(samples, SAMPLE_RATE)?;
        let fs = stft.analyze(&signal::frame_and_window(&w)?, SAMPLE_RATE);
        frames = fs.frames;
        let back = stft.synthesize(&fs)?;
        let interior = HOP..fs.frames * HOP;
        for i in interior {
            worst = worst.max((back.samples[i] - w.samples[i]).abs());
        }
    }
    Ok(RoundTrip {
        signals,
        frames,
        max_interior_error: worst,
    })
}

#[allow(dead_code)]
fn main() -> Result<()> {
    let r = run(50, 0)?;
    println!(
        "{} signals of {} frames: max interior error {:.3e}",
        r.signals, r.frames, r.max_interior_error
    );
    Ok(())
}
