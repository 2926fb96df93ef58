//! Training loop: reconstruction loss, the LM-regularized joint loss and the
//! two-phase curriculum that switches between them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::write_atomic;
use crate::dataset::Example;
use crate::error::{Error, Result};
use crate::graph::{Graph, MseReduction, Var};
use crate::model::{Model, ModelConfig};
use crate::optim::{adam_step, fill_missing_grads, AdamConfig, AdamState};
use crate::signal::NUM_BINS;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    pub fn is_on(self) -> bool {
        self == Toggle::On
    }
}

impl FromStr for Toggle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "on" => Ok(Toggle::On),
            "off" => Ok(Toggle::Off),
            other => Err(Error::InvalidArgument(format!("expected `on` or `off`, got `{other}`"))),
        }
    }
}

impl fmt::Display for Toggle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.is_on() { "on" } else { "off" })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay_crnn: f64,
    pub weight_decay_lm: f64,
    /// Weight of the decoder cross-entropy in the joint loss.
    pub lambda1: f64,
    pub epochs_max: usize,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    /// Hard cap on denoise-only epochs before the joint phase starts,
    /// in case validation keeps creeping down.
    #[serde(default)]
    pub denoise_epochs_max: Option<usize>,
    pub grad_clip: f64,
    pub seed: u64,
    pub curriculum: Toggle,
    pub lm: Toggle,
}

impl TrainConfig {
    /// Optimizer settings and schedule of the full-size model.
    pub fn paper() -> Self {
        let adam = AdamConfig::paper();
        Self {
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            weight_decay_crnn: adam.weight_decay_denoiser,
            weight_decay_lm: adam.weight_decay_decoder,
            lambda1: 0.1,
            epochs_max: 300,
            plateau_patience: 25,
            plateau_min_delta: 1e-4,
            denoise_epochs_max: None,
            grad_clip: 5.0,
            seed: 0,
            curriculum: Toggle::On,
            lm: Toggle::On,
        }
    }

    /// Short schedule for the laptop-scale model; a larger step size makes
    /// up for the shorter run.
    pub fn desk() -> Self {
        Self {
            lr: 1e-3,
            epochs_max: 40,
            plateau_patience: 10,
            ..Self::paper()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            weight_decay_denoiser: self.weight_decay_crnn,
            weight_decay_decoder: self.weight_decay_lm,
        }
    }

    pub fn variant(&self) -> Result<Variant> {
        match (self.lm, self.curriculum) {
            (Toggle::Off, Toggle::Off) => Ok(Variant::Crnn),
            (Toggle::On, Toggle::Off) => Ok(Variant::CrnnLm),
            (Toggle::On, Toggle::On) => Ok(Variant::CrnnLmCl),
            (Toggle::Off, Toggle::On) => Err(Error::config(
                "curriculum",
                "a curriculum needs the language-model decoder (lm = on)",
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("beta1", "betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be positive"));
        }
        if self.weight_decay_crnn < 0.0 || self.weight_decay_lm < 0.0 {
            return Err(Error::config("weight_decay_crnn", "weight decays must be non-negative"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::config("lambda1", "must be non-negative"));
        }
        if self.epochs_max == 0 {
            return Err(Error::config("epochs_max", "must be positive"));
        }
        if self.plateau_patience == 0 {
            return Err(Error::config("plateau_patience", "must be at least 1"));
        }
        if !(self.plateau_min_delta >= 0.0) {
            return Err(Error::config("plateau_min_delta", "must be non-negative"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("grad_clip", "must be positive"));
        }
        self.variant().map(|_| ())
    }
}

/// The three trainable configurations compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Crnn,
    CrnnLm,
    CrnnLmCl,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Crnn => "CRNN",
            Variant::CrnnLm => "CRNN+LM",
            Variant::CrnnLmCl => "CRNN+LM+CL",
        }
    }

    pub fn log_file(self) -> String {
        format!("train_log_{}.csv", self.label())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    DenoiseOnly,
    Joint,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::DenoiseOnly => "denoise_only",
            Phase::Joint => "joint",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumState {
    pub phase: Phase,
    pub best_val_loss: f64,
    pub epochs_since_improvement: usize,
}

impl CurriculumState {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            best_val_loss: f64::INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// Feeds one epoch's validation reconstruction loss to the plateau rule.
/// Once in the joint phase the state keeps tracking the loss but never
/// goes back.
pub fn curriculum_update(state: CurriculumState, val_loss: f64, cfg: &TrainConfig) -> Result<CurriculumState> {
    if !val_loss.is_finite() {
        return Err(Error::NonFinite(format!("validation loss {val_loss}")));
    }
    let mut next = state;
    if state.best_val_loss - val_loss > cfg.plateau_min_delta {
        next.best_val_loss = val_loss;
        next.epochs_since_improvement = 0;
    } else {
        next.epochs_since_improvement += 1;
    }
    if next.phase == Phase::DenoiseOnly && next.epochs_since_improvement >= cfg.plateau_patience {
        next.phase = Phase::Joint;
        next.epochs_since_improvement = 0;
    }
    Ok(next)
}

/// Mean over frames of the squared error summed over bins.
pub fn loss_re<F: Real>(g: &mut Graph<F>, denoised: Var, clean: Var) -> Result<Var> {
    g.mse_loss(denoised, clean, MseReduction::PerFrame)
}

/// `l_re + lambda1 · l_lm`; the squared-norm penalty lives in the optimizer.
pub fn combine_losses<F: Real>(g: &mut Graph<F>, l_re: Var, l_lm: Var, lambda1: f64) -> Result<Var> {
    let weighted = g.scale(l_lm, F::from_f64c(lambda1));
    g.add(l_re, weighted)
}

pub struct JointLoss {
    pub total: Var,
    pub l_re: Var,
    pub l_lm: Var,
}

/// Reconstruction loss plus the weighted decoder cross-entropy.
/// `lm` holds the decoder logits and target tokens and must be present.
pub fn loss_combined<F: Real>(
    g: &mut Graph<F>,
    denoised: Var,
    clean: Var,
    lm: Option<(Var, &[usize])>,
    lambda1: f64,
) -> Result<JointLoss> {
    let (logits, targets) =
        lm.ok_or_else(|| Error::InvalidArgument("joint loss needs decoder logits and targets".into()))?;
    let l_re = loss_re(g, denoised, clean)?;
    let l_lm = g.cross_entropy(logits, targets)?;
    let total = combine_losses(g, l_re, l_lm, lambda1)?;
    Ok(JointLoss { total, l_re, l_lm })
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub train_l_re: f64,
    pub train_l_lm: Option<f64>,
    pub val_l_re: f64,
    pub val_l_lm: Option<f64>,
    pub wall_seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,phase,train_L_re,train_L_lm,val_L_re,val_L_lm,wall_seconds";

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.phase.as_str(),
            self.train_l_re,
            opt(self.train_l_lm),
            self.val_l_re,
            opt(self.val_l_lm),
            self.wall_seconds
        )
    }
}

pub fn render_log(records: &[EpochRecord]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub struct TrainOutcome {
    pub variant: Variant,
    /// Lowest validation objective within the final phase.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: Vec<EpochRecord>,
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

fn frames_tensor<F: Real>(mags: &[f64], frames: usize) -> Result<Tensor<F>> {
    Tensor::new(vec![frames, NUM_BINS], mags.iter().map(|&v| F::from_f64c(v)).collect())
}

/// Per-utterance losses without gradient bookkeeping.
pub fn example_losses<F: Real>(model: &Model<F>, ex: &Example, with_lm: bool) -> Result<(f64, Option<f64>)> {
    let mut g = Graph::inference();
    let out = model.crnn_forward(&mut g, &ex.noisy, ex.frames)?;
    let clean = g.constant(frames_tensor(&ex.clean, ex.frames)?);
    let l_re = loss_re(&mut g, out.denoised, clean)?;
    let l_re = g.value(l_re).item().to_f64().unwrap_or(f64::NAN);
    let l_lm = if with_lm {
        let logits = model.lm_decode(&mut g, &out.final_state, &ex.transcript)?;
        let ce = g.cross_entropy(logits, &Model::<F>::lm_targets(&ex.transcript))?;
        Some(g.value(ce).item().to_f64().unwrap_or(f64::NAN))
    } else {
        None
    };
    Ok((l_re, l_lm))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n.max(1) as f64
}

fn check_vocabulary(examples: &[Example], cfg: &ModelConfig) -> Result<()> {
    let max = examples.iter().flat_map(|e| e.transcript.iter().copied()).max().unwrap_or(0);
    if max >= cfg.lm.vocab_size {
        return Err(Error::config(
            "lm.vocab_size",
            format!("corpus uses token {max} but the decoder knows {} tokens", cfg.lm.vocab_size),
        ));
    }
    Ok(())
}

/// Runs the optimization loop. Resuming from a checkpoint continues its
/// epoch counter, optimizer moments and curriculum state. When `out_dir`
/// is given the log and both checkpoints are rewritten after every epoch.
pub fn train(
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    resume: Option<Checkpoint>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_cfg.validate()?;
    let variant = cfg.variant()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::InvalidArgument("validation split is empty".into()));
    }
    check_vocabulary(train_set, model_cfg)?;
    check_vocabulary(val_set, model_cfg)?;

    let initial_phase = match variant {
        Variant::CrnnLm => Phase::Joint,
        Variant::Crnn | Variant::CrnnLmCl => Phase::DenoiseOnly,
    };
    let (mut model, mut opt, mut state, start_epoch) = match resume {
        Some(ck) => {
            if &ck.model_config != model_cfg {
                return Err(Error::CheckpointMismatch("model configuration differs from the checkpoint".into()));
            }
            let model = ck.model()?;
            let mut opt = ck.optimizer;
            opt.config = cfg.adam();
            let mut state = ck.curriculum;
            if variant != Variant::CrnnLmCl {
                state.phase = initial_phase;
            }
            (model, opt, state, ck.epoch)
        }
        None => {
            let model = Model::<f32>::new(model_cfg.clone(), cfg.seed)?;
            let opt = AdamState::new(cfg.adam(), model.params());
            (model, opt, CurriculumState::new(initial_phase), 0)
        }
    };

    let mut log = Vec::new();
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut best_phase = state.phase;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let clock = Instant::now();

    for epoch in start_epoch + 1..=cfg.epochs_max {
        if variant == Variant::CrnnLmCl && state.phase == Phase::DenoiseOnly {
            if let Some(cap) = cfg.denoise_epochs_max {
                if epoch > cap {
                    state.phase = Phase::Joint;
                    state.epochs_since_improvement = 0;
                }
            }
        }
        if state.phase != best_phase {
            best = None;
            best_phase = state.phase;
        }
        let joint = state.phase == Phase::Joint;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut sum_re = 0.0;
        let mut sum_lm = 0.0;
        for &i in &order {
            let (l_re, l_lm) = train_step(&mut model, &mut opt, &train_set[i], joint, cfg)?;
            sum_re += l_re;
            sum_lm += l_lm.unwrap_or(0.0);
        }
        if !model.params().all_finite() {
            return Err(Error::NonFinite(format!("parameters diverged during epoch {epoch}")));
        }

        let val: Vec<(f64, Option<f64>)> = val_set
            .par_iter()
            .map(|ex| example_losses(&model, ex, joint))
            .collect::<Result<_>>()?;
        let val_re = mean(val.iter().map(|v| v.0));
        let val_lm = joint.then(|| mean(val.iter().filter_map(|v| v.1)));
        if !val_re.is_finite() || val_lm.is_some_and(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("validation loss diverged in epoch {epoch}")));
        }
        let n = train_set.len() as f64;
        let record = EpochRecord {
            epoch,
            phase: state.phase,
            train_l_re: sum_re / n,
            train_l_lm: joint.then_some(sum_lm / n),
            val_l_re: val_re,
            val_l_lm: val_lm,
            wall_seconds: clock.elapsed().as_secs_f64(),
        };
        log::info!("{} {}", variant.label(), record.csv_row());
        log.push(record);

        let objective = val_re + val_lm.map_or(0.0, |v| cfg.lambda1 * v);
        if variant == Variant::CrnnLmCl {
            state = curriculum_update(state, val_re, cfg)?;
        }
        let snapshot = Checkpoint {
            model_config: model_cfg.clone(),
            params: model.params().clone(),
            optimizer: opt.clone(),
            curriculum: state,
            epoch,
        };
        if best.as_ref().map_or(true, |(b, _)| objective < *b) {
            best = Some((objective, snapshot.clone()));
        }
        if let Some(dir) = out_dir {
            write_atomic(&dir.join(variant.log_file()), render_log(&log).as_bytes())?;
            snapshot.save(&dir.join(LAST_CHECKPOINT))?;
            if let Some((_, b)) = &best {
                if b.epoch == epoch {
                    b.save(&dir.join(BEST_CHECKPOINT))?;
                }
            }
        }
    }

    let last = Checkpoint {
        model_config: model_cfg.clone(),
        params: model.params().clone(),
        optimizer: opt,
        curriculum: state,
        epoch: cfg.epochs_max.max(start_epoch),
    };
    let best = best.map_or_else(|| last.clone(), |(_, b)| b);
    Ok(TrainOutcome { variant, best, last, log })
}

/// Forward, backward, clip and one Adam update on a single utterance.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut AdamState<f32>,
    ex: &Example,
    joint: bool,
    cfg: &TrainConfig,
) -> Result<(f64, Option<f64>)> {
    let mut g = Graph::new();
    let out = model.crnn_forward(&mut g, &ex.noisy, ex.frames)?;
    let clean = g.constant(frames_tensor(&ex.clean, ex.frames)?);
    let (loss, l_re, l_lm) = if joint {
        let logits = model.lm_decode(&mut g, &out.final_state, &ex.transcript)?;
        let targets = Model::<f32>::lm_targets(&ex.transcript);
        let j = loss_combined(&mut g, out.denoised, clean, Some((logits, &targets)), cfg.lambda1)?;
        (j.total, j.l_re, Some(j.l_lm))
    } else {
        let l = loss_re(&mut g, out.denoised, clean)?;
        (l, l, None)
    };
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss {value} on utterance {}", ex.id)));
    }
    let l_re = g.value(l_re).item() as f64;
    let l_lm = l_lm.map(|v| g.value(v).item() as f64);
    let params = model.params_mut();
    params.zero_grads();
    g.backward(loss, params)?;
    fill_missing_grads(params);
    params.clip_grad_norm(cfg.grad_clip);
    adam_step(params, opt)?;
    Ok((l_re, l_lm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(patience: usize) -> TrainConfig {
        TrainConfig {
            plateau_patience: patience,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn plateau_switch_after_fifth_epoch() {
        let c = cfg(3);
        let mut s = CurriculumState::new(Phase::DenoiseOnly);
        let losses = [1.0, 0.9, 0.91, 0.92, 0.93];
        for (i, &l) in losses.iter().enumerate() {
            s = curriculum_update(s, l, &c).unwrap();
            let expect = if i == 4 { Phase::Joint } else { Phase::DenoiseOnly };
            assert_eq!(s.phase, expect, "after epoch {}", i + 1);
        }
        assert_eq!(s.epochs_since_improvement, 0);
        assert_eq!(s.best_val_loss, 0.9);
    }

    #[test]
    fn improving_losses_never_switch() {
        let c = cfg(2);
        let mut s = CurriculumState::new(Phase::DenoiseOnly);
        for e in 0..200 {
            s = curriculum_update(s, 10.0 - e as f64 * 0.01, &c).unwrap();
        }
        assert_eq!(s.phase, Phase::DenoiseOnly);
    }

    #[test]
    fn joint_phase_is_absorbing() {
        let c = cfg(1);
        let mut s = CurriculumState::new(Phase::Joint);
        for l in [5.0, 1.0, 9.0, 0.1, 0.1, 0.1] {
            s = curriculum_update(s, l, &c).unwrap();
            assert_eq!(s.phase, Phase::Joint);
        }
        assert!(curriculum_update(s, f64::NAN, &c).is_err());
    }

    #[test]
    fn lm_off_with_curriculum_is_rejected() {
        let c = TrainConfig {
            lm: Toggle::Off,
            curriculum: Toggle::On,
            ..TrainConfig::desk()
        };
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
        let labels: Vec<_> = [(Toggle::Off, Toggle::Off), (Toggle::On, Toggle::Off), (Toggle::On, Toggle::On)]
            .iter()
            .map(|&(lm, curriculum)| TrainConfig { lm, curriculum, ..TrainConfig::desk() }.variant().unwrap().log_file())
            .collect();
        assert_eq!(labels, ["train_log_CRNN.csv", "train_log_CRNN+LM.csv", "train_log_CRNN+LM+CL.csv"]);
    }

    #[test]
    fn reconstruction_loss_examples() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let l = loss_re(&mut g, a, a).unwrap();
        assert_eq!(g.value(l).item(), 0.0);

        let mut unit = vec![0.0; 256];
        unit[17] = 1.0;
        let d = g.constant(Tensor::new(vec![1, 256], unit).unwrap());
        let z = g.constant(Tensor::zeros(&[1, 256]));
        let l = loss_re(&mut g, d, z).unwrap();
        assert_eq!(g.value(l).item(), 1.0);

        // Sum of squared differences divided by the frame count.
        let x = [0.3, -1.2, 0.5, 2.0, 0.25, -0.75];
        let y = [0.1, 0.4, -0.5, 1.5, 0.0, 0.25];
        let oracle: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0;
        let xv = g.constant(Tensor::new(vec![2, 3], x.to_vec()).unwrap());
        let yv = g.constant(Tensor::new(vec![2, 3], y.to_vec()).unwrap());
        let l = loss_re(&mut g, xv, yv).unwrap();
        assert!((g.value(l).item() - oracle).abs() < 1e-12);
        assert!((oracle - 2.45625).abs() < 1e-12);
    }

    #[test]
    fn combined_loss_arithmetic() {
        let mut g = Graph::<f64>::new();
        let re = g.constant(Tensor::scalar(0.2));
        let lm = g.constant(Tensor::scalar(1.0));
        let t = combine_losses(&mut g, re, lm, 0.5).unwrap();
        assert!((g.value(t).item() - 0.7).abs() < 1e-15);
        let t0 = combine_losses(&mut g, re, lm, 0.0).unwrap();
        assert_eq!(g.value(t0).item(), 0.2);
        let z = g.constant(Tensor::scalar(0.0));
        let tz = combine_losses(&mut g, z, z, 0.3).unwrap();
        assert_eq!(g.value(tz).item(), 0.0);

        let a = g.constant(Tensor::zeros(&[1, 4]));
        assert!(loss_combined(&mut g, a, a, None, 0.1).is_err());
    }

    fn toy_examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|k| {
                let frames = 5 + k;
                let noisy = (0..frames * 256).map(|i| 0.2 + ((i * 31 + k * 7) % 23) as f64 * 0.05).collect();
                let clean = (0..frames * 256).map(|i| ((i * 17 + k) % 19) as f64 * 0.03).collect();
                Example {
                    id: format!("toy{k}"),
                    frames,
                    noisy,
                    clean,
                    transcript: vec![3 + k % 5, 4, 7 - k % 3],
                }
            })
            .collect()
    }

    #[test]
    fn zero_lambda_joint_training_matches_denoise_only() {
        let data = toy_examples(3);
        let base = TrainConfig {
            epochs_max: 3,
            ..TrainConfig::desk()
        };
        let off = TrainConfig { lm: Toggle::Off, curriculum: Toggle::Off, ..base.clone() };
        let zero = TrainConfig { lm: Toggle::On, curriculum: Toggle::Off, lambda1: 0.0, ..base };
        let a = train(&data, &data, &off, &ModelConfig::tiny(), None, None).unwrap();
        let b = train(&data, &data, &zero, &ModelConfig::tiny(), None, None).unwrap();
        for (x, y) in a.log.iter().zip(&b.log) {
            assert_eq!(x.train_l_re.to_bits(), y.train_l_re.to_bits(), "epoch {}", x.epoch);
            assert_eq!(x.val_l_re.to_bits(), y.val_l_re.to_bits(), "epoch {}", x.epoch);
        }
        for (p, q) in a.last.params.iter().zip(b.last.params.iter()) {
            if p.group == crate::params::ParamGroup::Denoiser {
                assert_eq!(p.tensor.data(), q.tensor.data(), "{}", p.name);
            }
        }
    }

    #[test]
    fn same_seed_gives_identical_logs() {
        let data = toy_examples(2);
        let cfg = TrainConfig {
            epochs_max: 2,
            lm: Toggle::On,
            curriculum: Toggle::On,
            denoise_epochs_max: Some(1),
            ..TrainConfig::desk()
        };
        let a = train(&data, &data, &cfg, &ModelConfig::tiny(), None, None).unwrap();
        let b = train(&data, &data, &cfg, &ModelConfig::tiny(), None, None).unwrap();
        let strip = |r: &EpochRecord| EpochRecord { wall_seconds: 0.0, ..r.clone() };
        assert_eq!(a.log.iter().map(strip).collect::<Vec<_>>(), b.log.iter().map(strip).collect::<Vec<_>>());
        assert_eq!(a.log[1].phase, Phase::Joint);
        assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    }
}
