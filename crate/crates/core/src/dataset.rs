//! Feature extraction for manifest entries, shared by training and evaluation.

use rayon::prelude::*;

use crate::corpus::{Manifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::signal::{self, FeatureSequence, Waveform};

/// One utterance as the model sees it.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub frames: usize,
    /// Noisy magnitudes, `frames × 256`.
    pub noisy: Vec<f64>,
    /// Clean target magnitudes, `frames × 256`.
    pub clean: Vec<f64>,
    pub transcript: Vec<usize>,
}

/// An utterance with its waveforms and features, for evaluation.
#[derive(Clone, Debug)]
pub struct LoadedUtterance {
    pub entry: ManifestEntry,
    pub clean_wav: Waveform,
    pub noisy_wav: Waveform,
    pub clean: FeatureSequence,
    pub noisy: FeatureSequence,
}

impl LoadedUtterance {
    pub fn load(manifest: &Manifest, entry: &ManifestEntry) -> Result<Self> {
        let clean_wav = Waveform::read_wav(manifest.path(&entry.clean_path))?;
        let noisy_wav = Waveform::read_wav(manifest.path(&entry.noisy_path))?;
        if clean_wav.len() != noisy_wav.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: clean has {} samples, noisy has {}",
                entry.id,
                clean_wav.len(),
                noisy_wav.len()
            )));
        }
        let clean = signal::analyze(&clean_wav)?;
        let noisy = signal::analyze(&noisy_wav)?;
        Ok(Self {
            entry: entry.clone(),
            clean_wav,
            noisy_wav,
            clean,
            noisy,
        })
    }

    pub fn example(&self) -> Example {
        Example {
            id: self.entry.id.clone(),
            frames: self.noisy.frames,
            noisy: self.noisy.magnitudes.clone(),
            clean: self.clean.magnitudes.clone(),
            transcript: self.entry.transcript.clone(),
        }
    }
}

/// Loads every utterance of `split`, in manifest order.
pub fn load_split(manifest: &Manifest, split: Split) -> Result<Vec<LoadedUtterance>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    entries.par_iter().map(|e| LoadedUtterance::load(manifest, e)).collect()
}

/// Training features of every utterance of `split`, in manifest order.
pub fn load_examples(manifest: &Manifest, split: Split) -> Result<Vec<Example>> {
    let entries: Vec<&ManifestEntry> = manifest.split(split).collect();
    entries
        .par_iter()
        .map(|e| LoadedUtterance::load(manifest, e).map(|u| u.example()))
        .collect()
}
