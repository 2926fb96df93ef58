//! Checks the backward pass of the denoiser, the decoder and the joint loss
//! against central finite differences on the smallest configuration.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crnn_enhance::gradcheck::{gradient_check_subset, GradCheckReport};
use crnn_enhance::graph::{Graph, Var};
use crnn_enhance::model::{Model, ModelConfig};
use crnn_enhance::params::ParamStore;
use crnn_enhance::signal::NUM_BINS;
use crnn_enhance::tensor::Tensor;
use crnn_enhance::train::{loss_combined, loss_re};
use crnn_enhance::Result;

const FRAMES: usize = 12;
/// Fourth-order stencil step; large enough that f64 roundoff stays far below
/// the tolerance.
const STEP: f64 = 1e-3;
/// Entries checked per parameter tensor; smaller tensors are checked in full.
const PER_TENSOR: usize = 64;

fn check<L>(loss: L, store: &mut ParamStore<f64>) -> Result<GradCheckReport>
where
    L: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut keep = HashSet::new();
    for (pi, p) in store.iter().enumerate() {
        let n = p.tensor.numel();
        keep.extend(sample(&mut rng, n, n.min(PER_TENSOR)).into_iter().map(|i| (pi, i)));
    }
    gradient_check_subset(loss, store, STEP, |id, i| keep.contains(&(id.0, i)))
}

fn inputs() -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let noisy = (0..FRAMES * NUM_BINS).map(|i| 0.5 + 0.4 * ((i * 37 % 101) as f64 / 101.0)).collect();
    let clean = (0..FRAMES * NUM_BINS).map(|i| 0.3 * ((i * 53 % 97) as f64 / 97.0)).collect();
    (noisy, clean, vec![3, 7, 5, 4])
}

fn with_model<T>(store: &ParamStore<f64>, f: impl FnOnce(&Model<f64>) -> Result<T>) -> Result<T> {
    f(&Model::from_params(ModelConfig::tiny(), store.clone())?)
}

/// Denoiser alone: reconstruction loss of a 12-frame sequence.
pub fn check_denoiser() -> Result<GradCheckReport> {
    let (noisy, clean, _) = inputs();
    let mut store = Model::<f64>::new(ModelConfig::tiny(), 11)?.params().clone();
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
        with_model(s, |m| {
            let out = m.crnn_forward(g, &noisy, FRAMES)?;
            let target = g.constant(Tensor::new(vec![FRAMES, NUM_BINS], clean.clone())?);
            loss_re(g, out.denoised, target)
        })
    };
    check(loss, &mut store)
}

/// Decoder cross-entropy, flowing back through the denoiser's final state.
pub fn check_decoder() -> Result<GradCheckReport> {
    let (noisy, _, transcript) = inputs();
    let mut store = Model::<f64>::new(ModelConfig::tiny(), 12)?.params().clone();
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
        with_model(s, |m| {
            let out = m.crnn_forward(g, &noisy, FRAMES)?;
            let logits = m.lm_decode(g, &out.final_state, &transcript)?;
            g.cross_entropy(logits, &Model::<f64>::lm_targets(&transcript))
        })
    };
    check(loss, &mut store)
}

/// Reconstruction plus weighted decoder loss.
pub fn check_joint() -> Result<GradCheckReport> {
    let (noisy, clean, transcript) = inputs();
    let mut store = Model::<f64>::new(ModelConfig::tiny(), 13)?.params().clone();
    let loss = |g: &mut Graph<f64>, s: &ParamStore<f64>| -> Result<Var> {
        with_model(s, |m| {
            let out = m.crnn_forward(g, &noisy, FRAMES)?;
            let target = g.constant(Tensor::new(vec![FRAMES, NUM_BINS], clean.clone())?);
            let logits = m.lm_decode(g, &out.final_state, &transcript)?;
            let targets = Model::<f64>::lm_targets(&transcript);
            Ok(loss_combined(g, out.denoised, target, Some((logits, &targets)), 0.5)?.total)
        })
    };
    check(loss, &mut store)
}

pub fn run() -> Result<Vec<(&'static str, GradCheckReport)>> {
    Ok(vec![
        ("denoiser", check_denoiser()?),
        ("decoder", check_decoder()?),
        ("joint", check_joint()?),
    ])
}

#[allow(dead_code)]
fn main() -> Result<()> {
    for (name, r) in run()? {
        println!(
            "{name:>9}: {} entries ({} on a ReLU kink), max relative error {:.3e} at {:?} (analytic {:.6e}, numeric {:.6e})",
            r.checked, r.skipped_kinks, r.max_rel_error, r.worst, r.analytic, r.numeric
        );
    }
    Ok(())
}
