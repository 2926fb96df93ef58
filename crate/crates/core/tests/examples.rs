//! Runs the cheaper examples at reduced size so they stay compiling and
//! correct. The training-heavy ones are exercised by the acceptance target.

#[path = "../examples/stft_roundtrip.rs"]
mod stft_roundtrip;

#[path = "../examples/score_signals.rs"]
mod score_signals;

#[path = "../examples/synth_corpus.rs"]
mod synth_corpus;

use approx::assert_abs_diff_eq;
use crnn_enhance::corpus::{split_counts, Split};

#[test]
fn stft_roundtrip_is_exact_in_the_interior() {
    let r = stft_roundtrip::run(3, 7).unwrap();
    assert_eq!(r.frames, 124);
    assert!(r.max_interior_error < 1e-9, "{}", r.max_interior_error);
}

#[test]
fn score_signals_rows() {
    let rows = score_signals::run().unwrap();
    let by_name = |n: &str| rows.iter().find(|r| r.name == n).unwrap();

    // Halving the clean signal leaves an error of half its amplitude.
    let half = by_name("0.5 * clean");
    assert_abs_diff_eq!(half.snr, 20.0 * 2f64.log10(), epsilon = 1e-9);
    assert_eq!(half.bss.sdr, 100.0);
    assert_eq!(half.bss.sir, 100.0);

    let noisy = by_name("noisy input");
    let less = by_name("half the noise");
    assert!(less.snr > noisy.snr);
    assert!(less.bss.sir > noisy.bss.sir);
    assert!(less.lsd < noisy.lsd);
    assert!(by_name("pcm16 clean").snr > 60.0);
}

#[test]
fn synth_corpus_summary() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, s) = synth_corpus::run(dir.path(), 10, 1).unwrap();
    assert_eq!(manifest.entries.len(), 10);
    let (tr, va, te) = split_counts(10);
    assert_eq!(s.per_split, vec![(Split::Train, tr), (Split::Val, va), (Split::Test, te)]);
    assert!(s.snr_range_db.0 >= 0.0 && s.snr_range_db.1 <= 30.0);
    assert!(s.words >= 20 && s.words <= 40);
    assert!(s.seconds > 0.0);
}
