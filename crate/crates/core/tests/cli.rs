//! Drives the binary and the command functions end to end on small corpora.

#[path = "../examples/cli_pipeline.rs"]
mod cli_pipeline;

use std::fs;
use std::path::Path;
use std::process::Command;

use crnn_enhance::checkpoint::Checkpoint;
use crnn_enhance::corpus::{Manifest, Split};
use crnn_enhance::metrics::{enhance_waveform, snr};
use crnn_enhance::model::{Model, ModelConfig};
use crnn_enhance::optim::AdamConfig;
use crnn_enhance::signal::{Waveform, FFT_SIZE, NUM_BINS, SAMPLE_RATE};
use crnn_enhance::train::Phase;

fn bin(args: &[&str]) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_crnn-enhance"))
        .args(args)
        .env("CRNN_LOG", "warn")
        .output()
        .expect("binary runs");
    out.status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_corpus(dir: &Path, total: usize) -> std::path::PathBuf {
    let cfg = dir.join("c.toml");
    let text = crnn_enhance::config::CORPUS_DESK_TOML.replace("total = 420", &format!("total = {total}"));
    fs::write(&cfg, text).unwrap();
    let out = dir.join("corpus");
    assert_eq!(bin(&["synth", "--config", s(&cfg), "--out", s(&out), "--seed", "4"]), 0);
    out
}

#[test]
fn incoherent_flags_exit_2_before_reading_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let code = bin(&["train", "--corpus", "/nonexistent", "--lm", "off", "--curriculum", "on", "--out", s(&out)]);
    assert_eq!(code, 2);
    assert!(!out.exists());
}

#[test]
fn missing_corpus_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    assert_eq!(bin(&["train", "--corpus", "/nonexistent", "--lm", "on", "--curriculum", "on", "--out", s(&out)]), 3);
}

#[test]
fn malformed_corpus_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "total = \"many\"\n").unwrap();
    assert_eq!(bin(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("c"))]), 2);
    assert_eq!(bin(&["synth", "--out"]), 2);
}

#[test]
fn checkpoint_problems_exit_5_and_empty_split_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    // Three utterances split 2/0/1, so validation is empty.
    let corpus = small_corpus(dir.path(), 3);
    let manifest = fs::read_to_string(corpus.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 3);

    let tiny = Model::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let wrong_vocab = dir.path().join("tiny.ckpt");
    Checkpoint::fresh(&tiny, AdamConfig::paper(), Phase::Joint).save(&wrong_vocab).unwrap();
    let eval = |ckpt: &Path, split: &str| {
        bin(&["eval", "--corpus", s(&corpus), "--split", split, "--checkpoint", s(ckpt), "--out", s(&dir.path().join("e"))])
    };
    assert_eq!(eval(&wrong_vocab, "test"), 5);

    let garbage = dir.path().join("garbage.ckpt");
    fs::write(&garbage, b"not a checkpoint").unwrap();
    assert_eq!(eval(&garbage, "test"), 5);

    let desk = Model::<f32>::new(ModelConfig::desk(), 1).unwrap();
    let good = dir.path().join("desk.ckpt");
    Checkpoint::fresh(&desk, AdamConfig::paper(), Phase::DenoiseOnly).save(&good).unwrap();
    assert_eq!(eval(&good, "val"), 2);
    assert_eq!(eval(&good, "test"), 0);
}

#[test]
fn pipeline_outputs_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    let p = cli_pipeline::run_pipeline(dir.path(), 14, 1, 0).unwrap();

    let manifest = Manifest::read(&p.corpus).unwrap();
    assert_eq!(manifest.entries.len(), 14);
    for d in [&p.corpus, &p.train, &p.eval] {
        assert!(d.join("run_manifest.json").exists(), "{}", d.display());
    }
    let log = fs::read_to_string(p.train.join("train_log_CRNN+LM+CL.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let csv = fs::read_to_string(p.eval.join("report_test_model.csv")).unwrap();
    let test: Vec<_> = manifest.split(Split::Test).collect();
    assert_eq!(csv.lines().count(), test.len() + 1);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.eval.join("report_test_model.json")).unwrap()).unwrap();
    let keys: Vec<&str> = json["aggregates"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
    let mut expected = ["snr", "lsd", "mse", "sir", "sdr", "sar", "wer", "ser"];
    expected.sort_unstable();
    let mut keys = keys;
    keys.sort_unstable();
    assert_eq!(keys, expected);

    // The enhance command and the eval row must measure the same signal.
    let row = csv.lines().nth(1).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], test[0].id);
    let eval_snr: f64 = fields[1].parse().unwrap();
    let enhanced = Waveform::read_wav(&p.enhanced).unwrap();
    let noisy = Waveform::read_wav(manifest.path(&test[0].noisy_path)).unwrap();
    let clean = Waveform::read_wav(manifest.path(&test[0].clean_path)).unwrap();
    assert_eq!(enhanced.len(), noisy.len());
    let measured = snr(&clean, &enhanced).unwrap();
    assert!((measured - eval_snr).abs() < 1e-6, "{measured} vs {eval_snr}");
    assert!(fs::metadata(format!("{}.run.json", p.enhanced.display())).is_ok());
}

#[test]
fn silent_input_stays_at_the_softplus_floor() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f32>::new(ModelConfig::desk(), 3).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    Checkpoint::fresh(&model, AdamConfig::paper(), Phase::DenoiseOnly).save(&ckpt).unwrap();
    let input = dir.path().join("silence.wav");
    let silence = Waveform::new(vec![0.0; SAMPLE_RATE as usize], SAMPLE_RATE).unwrap();
    silence.write_wav(&input).unwrap();
    let out = dir.path().join("out.wav");
    assert_eq!(bin(&["enhance", "--in", s(&input), "--checkpoint", s(&ckpt), "--out", s(&out)]), 0);
    let enhanced = Waveform::read_wav(&out).unwrap();
    assert_eq!(enhanced.len(), silence.len());

    // Zero phase everywhere: each frame is at most the magnitude sum over
    // the full spectrum divided by the transform size, and two frames
    // overlap at any sample.
    let (mags, _) = model.enhance(&vec![0.0; 124 * NUM_BINS], 124).unwrap();
    let frame_bound = mags
        .chunks_exact(NUM_BINS)
        .map(|m| (m[0] + 2.0 * m[1..].iter().sum::<f64>()) / FFT_SIZE as f64)
        .fold(0.0, f64::max);
    let peak = enhanced.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(peak <= 2.0 * frame_bound + 1.0 / 32768.0, "{peak} > {frame_bound}");
    let (direct, _) = enhance_waveform(&model, &silence).unwrap();
    assert_eq!(direct.samples, enhanced.samples);
}
