//! Convolutional-recurrent denoiser and its language-model decoder head.
//!
//! For every frame `t` the denoiser reads an 8-frame context window of the
//! noisy magnitudes, runs it through three strided, dilated convolutions,
//! feeds the flattened result to a two-layer LSTM and projects the top
//! hidden state to a 256-bin magnitude estimate. After the last frame the
//! top-layer hidden state seeds a single-layer LSTM decoder that predicts
//! the transcript word by word.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BOS, EOS, FIRST_WORD, MAX_TRANSCRIPT_LEN};
use crate::error::{Error, Result};
use crate::graph::{conv_output_len, Graph, Var};
use crate::params::{ParamGroup, ParamId, ParamStore};
use crate::signal::NUM_BINS;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Fixed transform applied to the noisy magnitudes before the convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputCompression {
    None,
    Log1p,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrnnConfig {
    /// Frames per context window.
    pub context_frames: usize,
    /// How many of those frames precede the current one.
    pub context_past: usize,
    pub conv: Vec<ConvSpec>,
    pub activation: Activation,
    pub input_compression: InputCompression,
    pub lstm_layers: usize,
    pub hidden: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    /// Token inventory including PAD, BOS and EOS.
    pub vocab_size: usize,
    pub embed_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub crnn: CrnnConfig,
    pub lm: LmConfig,
}

fn conv_stack(filters: [usize; 3]) -> Vec<ConvSpec> {
    let kernels = [(7, 5), (5, 3), (5, 1)];
    filters
        .iter()
        .zip(kernels)
        .map(|(&f, k)| ConvSpec {
            filters: f,
            kernel: k,
            stride: (3, 1),
            dilation: (2, 1),
        })
        .collect()
}

impl ModelConfig {
    /// Full-size network: 16/32/64 filters, 1072 hidden units, 857 tokens.
    pub fn paper() -> Self {
        Self::with_sizes([16, 32, 64], 1072, 857, 256)
    }

    /// Laptop-scale defaults used by the examples and the desk experiments.
    pub fn desk() -> Self {
        Self::with_sizes([8, 16, 32], 64, 16, 32)
    }

    /// Smallest configuration, for gradient checks.
    pub fn tiny() -> Self {
        Self::with_sizes([2, 4, 8], 8, 8, 4)
    }

    pub fn with_sizes(filters: [usize; 3], hidden: usize, vocab_size: usize, embed_dim: usize) -> Self {
        Self {
            crnn: CrnnConfig {
                context_frames: 8,
                context_past: 4,
                conv: conv_stack(filters),
                activation: Activation::Relu,
                input_compression: InputCompression::Log1p,
                lstm_layers: 2,
                hidden,
                out_dim: NUM_BINS,
            },
            lm: LmConfig { vocab_size, embed_dim },
        }
    }

    /// Shapes `[C, H, W]` after each convolution for a `256 × context` input.
    pub fn conv_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = [1, NUM_BINS, self.crnn.context_frames];
        let mut out = Vec::with_capacity(self.crnn.conv.len());
        for (i, c) in self.crnn.conv.iter().enumerate() {
            let h = conv_output_len(shape[1], c.kernel.0, c.stride.0, c.dilation.0)
                .ok_or_else(|| Error::config(format!("crnn.conv[{i}].kernel"), "does not fit the frequency axis"))?;
            let w = conv_output_len(shape[2], c.kernel.1, c.stride.1, c.dilation.1)
                .ok_or_else(|| Error::config(format!("crnn.conv[{i}].kernel"), "does not fit the time axis"))?;
            shape = [c.filters, h, w];
            out.push(shape);
        }
        Ok(out)
    }

    /// Length of the flattened convolution output that feeds the LSTM.
    pub fn conv_output_len(&self) -> Result<usize> {
        Ok(self
            .conv_shapes()?
            .last()
            .map_or(NUM_BINS * self.crnn.context_frames, |s| s.iter().product()))
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.crnn;
        if c.context_frames == 0 || c.context_past >= c.context_frames {
            return Err(Error::config("crnn.context_past", "must be smaller than context_frames"));
        }
        if c.out_dim != NUM_BINS {
            return Err(Error::config("crnn.out_dim", format!("must equal the feature width {NUM_BINS}")));
        }
        if c.lstm_layers == 0 || c.hidden == 0 {
            return Err(Error::config("crnn.hidden", "LSTM layers and width must be positive"));
        }
        if c.conv.iter().any(|s| s.filters == 0 || s.stride.0 == 0 || s.stride.1 == 0 || s.dilation.0 == 0 || s.dilation.1 == 0) {
            return Err(Error::config("crnn.conv", "filters, strides and dilations must be positive"));
        }
        self.conv_shapes()?;
        if self.lm.vocab_size <= FIRST_WORD {
            return Err(Error::config("lm.vocab_size", "must exceed the three reserved tokens"));
        }
        if self.lm.embed_dim == 0 {
            return Err(Error::config("lm.embed_dim", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvIds {
    kernel: ParamId,
    bias: ParamId,
}

/// Parameter handles of one LSTM layer: input weights `[4n, n_in]`,
/// recurrent weights `[4n, n]` and bias `[4n]`, gates ordered i, f, g, o.
#[derive(Clone, Copy, Debug)]
pub struct LstmIds {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    conv: Vec<ConvIds>,
    lstm: Vec<LstmIds>,
    out_w: ParamId,
    out_b: ParamId,
    embed: ParamId,
    bridge_w: ParamId,
    bridge_b: ParamId,
    decoder: LstmIds,
    lm_out_w: ParamId,
    lm_out_b: ParamId,
}

/// Denoiser weights and decoder weights, stored together.
#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    layout: Layout,
}

/// Per-layer LSTM state; the last entry is the top layer.
#[derive(Clone, Debug)]
pub struct HiddenState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl HiddenState {
    pub fn top_h(&self) -> Var {
        *self.h.last().expect("at least one layer")
    }
}

pub struct CrnnOutput {
    /// `[T, 256]` denoised magnitudes.
    pub denoised: Var,
    pub final_state: HiddenState,
}

impl<F: Real> Model<F> {
    /// Fresh weights. Denoiser and decoder draw from separate random
    /// streams, so the denoiser initialization does not depend on the
    /// decoder's size.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let c = &config.crnn;
        let mut conv = Vec::new();
        let mut in_ch = 1;
        for (i, s) in c.conv.iter().enumerate() {
            let fan_in = in_ch * s.kernel.0 * s.kernel.1;
            let bound = (6.0 / fan_in as f64).sqrt();
            let kernel = params.add_uniform(
                format!("crnn.conv{i}.kernel"),
                ParamGroup::Denoiser,
                &[s.filters, in_ch, s.kernel.0, s.kernel.1],
                bound,
                &mut rng,
            );
            let bias = params.add_constant(format!("crnn.conv{i}.bias"), ParamGroup::Denoiser, &[s.filters], 0.0);
            conv.push(ConvIds { kernel, bias });
            in_ch = s.filters;
        }
        let mut lstm = Vec::new();
        let mut n_in = config.conv_output_len()?;
        for l in 0..c.lstm_layers {
            lstm.push(add_lstm(&mut params, &format!("crnn.lstm{l}"), ParamGroup::Denoiser, n_in, c.hidden, &mut rng));
            n_in = c.hidden;
        }
        let bound = (1.0 / c.hidden as f64).sqrt();
        let out_w = params.add_uniform("crnn.out.weight", ParamGroup::Denoiser, &[c.out_dim, c.hidden], bound, &mut rng);
        let out_b = params.add_constant("crnn.out.bias", ParamGroup::Denoiser, &[c.out_dim], 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let lm = &config.lm;
        let embed = params.add_uniform("lm.embed", ParamGroup::Decoder, &[lm.vocab_size, lm.embed_dim], 0.1, &mut rng);
        let bound = (1.0 / c.hidden as f64).sqrt();
        let bridge_w = params.add_uniform("lm.bridge.weight", ParamGroup::Decoder, &[c.hidden, c.hidden], bound, &mut rng);
        let bridge_b = params.add_constant("lm.bridge.bias", ParamGroup::Decoder, &[c.hidden], 0.0);
        let decoder = add_lstm(&mut params, "lm.decoder", ParamGroup::Decoder, lm.embed_dim, c.hidden, &mut rng);
        let lm_out_w = params.add_uniform("lm.out.weight", ParamGroup::Decoder, &[lm.vocab_size, c.hidden], bound, &mut rng);
        let lm_out_b = params.add_constant("lm.out.bias", ParamGroup::Decoder, &[lm.vocab_size], 0.0);

        Ok(Self {
            config,
            params,
            layout: Layout {
                conv,
                lstm,
                out_w,
                out_b,
                embed,
                bridge_w,
                bridge_b,
                decoder,
                lm_out_w,
                lm_out_b,
            },
        })
    }

    /// Rebuilds a model around an existing parameter table (e.g. from a
    /// checkpoint); names and shapes must match the configuration.
    pub fn from_params(config: ModelConfig, params: ParamStore<F>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.copy_values_from(&params)?;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn decoder_ids(&self) -> LstmIds {
        self.layout.decoder
    }

    pub fn lstm_ids(&self, layer: usize) -> LstmIds {
        self.layout.lstm[layer]
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Runs the convolution stack on one `[1, 256, context]` window and
    /// returns the flattened activations.
    pub fn conv_stack_forward(&self, g: &mut Graph<F>, window: Var) -> Result<Var> {
        let mut x = window;
        for (spec, ids) in self.config.crnn.conv.iter().zip(&self.layout.conv) {
            let k = g.param(&self.params, ids.kernel);
            let b = g.param(&self.params, ids.bias);
            let y = g.conv2d(x, k, b, spec.stride, spec.dilation)?;
            x = match self.config.crnn.activation {
                Activation::Relu => g.relu(y),
            };
        }
        let n = g.value(x).numel();
        g.reshape(x, vec![n])
    }

    /// Denoises a `[T, 256]` magnitude sequence (row-major in `noisy`).
    pub fn crnn_forward(&self, g: &mut Graph<F>, noisy: &[f64], frames: usize) -> Result<CrnnOutput> {
        let c = &self.config.crnn;
        if frames == 0 {
            return Err(Error::InvalidArgument("cannot denoise an empty sequence".into()));
        }
        if noisy.len() != frames * NUM_BINS {
            return Err(Error::shape("crnn_forward", "magnitudes", frames * NUM_BINS, noisy.len()));
        }
        let compressed: Vec<F> = noisy
            .iter()
            .map(|&m| {
                F::from_f64c(match c.input_compression {
                    InputCompression::Log1p => m.max(0.0).ln_1p(),
                    InputCompression::None => m,
                })
            })
            .collect();
        let zeros = || Tensor::<F>::zeros(&[c.hidden]);
        let mut h: Vec<Var> = (0..c.lstm_layers).map(|_| g.constant(zeros())).collect();
        let mut cell: Vec<Var> = (0..c.lstm_layers).map(|_| g.constant(zeros())).collect();
        let out_w = g.param(&self.params, self.layout.out_w);
        let out_b = g.param(&self.params, self.layout.out_b);
        let mut outputs = Vec::with_capacity(frames);
        for t in 0..frames {
            let window = context_window(&compressed, frames, t, c.context_frames, c.context_past)?;
            let wv = g.constant(window);
            let mut x = self.conv_stack_forward(g, wv)?;
            for (l, ids) in self.layout.lstm.iter().enumerate() {
                let (h2, c2) = lstm_step(g, &self.params, *ids, x, h[l], cell[l])?;
                h[l] = h2;
                cell[l] = c2;
                x = h2;
            }
            let z = g.linear(out_w, x, out_b)?;
            outputs.push(g.softplus(z));
        }
        let denoised = g.stack(&outputs)?;
        Ok(CrnnOutput {
            denoised,
            final_state: HiddenState { h, c: cell },
        })
    }

    fn decoder_init(&self, g: &mut Graph<F>, top_h: Var) -> Result<(Var, Var)> {
        let bw = g.param(&self.params, self.layout.bridge_w);
        let bb = g.param(&self.params, self.layout.bridge_b);
        let z = g.linear(bw, top_h, bb)?;
        let h0 = g.tanh(z);
        let c0 = g.constant(Tensor::zeros(&[self.config.crnn.hidden]));
        Ok((h0, c0))
    }

    fn decoder_step(&self, g: &mut Graph<F>, token: usize, h: Var, c: Var) -> Result<(Var, Var, Var)> {
        let embed = g.param(&self.params, self.layout.embed);
        let e = g.embedding_row(embed, token)?;
        let (h2, c2) = lstm_step(g, &self.params, self.layout.decoder, e, h, c)?;
        let w = g.param(&self.params, self.layout.lm_out_w);
        let b = g.param(&self.params, self.layout.lm_out_b);
        let logits = g.linear(w, h2, b)?;
        Ok((logits, h2, c2))
    }

    /// Teacher-forced decoder pass. Returns `[len + 1, |V|]` logits that
    /// predict the transcript followed by EOS.
    pub fn lm_decode(&self, g: &mut Graph<F>, final_state: &HiddenState, transcript: &[usize]) -> Result<Var> {
        self.check_transcript(transcript)?;
        let (mut h, mut c) = self.decoder_init(g, final_state.top_h())?;
        let mut rows = Vec::with_capacity(transcript.len() + 1);
        for &tok in std::iter::once(&BOS).chain(transcript) {
            let (logits, h2, c2) = self.decoder_step(g, tok, h, c)?;
            rows.push(logits);
            h = h2;
            c = c2;
        }
        g.stack(&rows)
    }

    /// Decoder targets matching [`Model::lm_decode`]: the transcript then EOS.
    pub fn lm_targets(transcript: &[usize]) -> Vec<usize> {
        transcript.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    fn check_transcript(&self, transcript: &[usize]) -> Result<()> {
        if transcript.len() > MAX_TRANSCRIPT_LEN {
            return Err(Error::InvalidArgument(format!(
                "transcript of {} words exceeds the {MAX_TRANSCRIPT_LEN}-word cap",
                transcript.len()
            )));
        }
        let v = self.config.lm.vocab_size;
        if let Some(&bad) = transcript.iter().find(|&&t| !(FIRST_WORD..v).contains(&t)) {
            return Err(Error::InvalidArgument(format!("token {bad} is not a word id of a {v}-token vocabulary")));
        }
        Ok(())
    }

    /// Greedy argmax generation from BOS until EOS or `max_len` tokens.
    pub fn lm_greedy_decode(&self, top_h: &[F], max_len: usize) -> Result<Vec<usize>> {
        let max_len = max_len.min(MAX_TRANSCRIPT_LEN);
        let mut g = Graph::inference();
        let top = g.constant(Tensor::from_vec(top_h.to_vec()));
        let (mut h, mut c) = self.decoder_init(&mut g, top)?;
        let mut token = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (logits, h2, c2) = self.decoder_step(&mut g, token, h, c)?;
            let row = g.value(logits).data();
            token = argmax(row);
            if token == EOS {
                break;
            }
            out.push(token);
            h = h2;
            c = c2;
        }
        Ok(out)
    }

    /// Inference-only denoising: magnitudes `[T, 256]` and the top-layer
    /// final hidden state.
    pub fn enhance(&self, noisy: &[f64], frames: usize) -> Result<(Vec<f64>, Vec<F>)> {
        let mut g = Graph::inference();
        let out = self.crnn_forward(&mut g, noisy, frames)?;
        let mags = g
            .value(out.denoised)
            .data()
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN))
            .collect();
        let top = g.value(out.final_state.top_h()).data().to_vec();
        Ok((mags, top))
    }
}

fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn add_lstm<F: Real>(
    params: &mut ParamStore<F>,
    prefix: &str,
    group: ParamGroup,
    n_in: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> LstmIds {
    let bound = 1.0 / (n as f64).sqrt();
    let w = params.add_uniform(format!("{prefix}.w"), group, &[4 * n, n_in], bound.min((6.0 / (n_in + 4 * n) as f64).sqrt()), rng);
    let u = params.add_uniform(format!("{prefix}.u"), group, &[4 * n, n], bound, rng);
    let mut bias = vec![0.0; 4 * n];
    // Forget gate opens by default.
    bias[n..2 * n].iter_mut().for_each(|v| *v = 1.0);
    let b = params.add(
        format!("{prefix}.b"),
        group,
        Tensor::from_vec(bias.into_iter().map(F::from_f64c).collect()),
    );
    LstmIds { w, u, b }
}

/// One LSTM cell update: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step<F: Real>(
    g: &mut Graph<F>,
    params: &ParamStore<F>,
    ids: LstmIds,
    x: Var,
    h: Var,
    c: Var,
) -> Result<(Var, Var)> {
    let n = params.tensor(ids.u).shape()[1];
    if g.value(h).numel() != n {
        return Err(Error::shape("lstm_step", "hidden state", n, g.value(h).numel()));
    }
    if g.value(c).numel() != n {
        return Err(Error::shape("lstm_step", "cell state", n, g.value(c).numel()));
    }
    let w = g.param(params, ids.w);
    let u = g.param(params, ids.u);
    let b = g.param(params, ids.b);
    let wx = g.matvec(w, x)?;
    let uh = g.matvec(u, h)?;
    let z = g.add(wx, uh)?;
    let z = g.add(z, b)?;
    let zi = g.slice(z, 0, n)?;
    let zf = g.slice(z, n, n)?;
    let zg = g.slice(z, 2 * n, n)?;
    let zo = g.slice(z, 3 * n, n)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, cand)?;
    let c2 = g.add(fc, ig)?;
    let tc = g.tanh(c2);
    let h2 = g.mul(o, tc)?;
    Ok((h2, c2))
}

/// `[1, 256, width]` window around frame `t`: column `j` holds frame
/// `t - past + j`; columns outside `0..frames` are zero.
pub fn context_window<F: Real>(mags: &[F], frames: usize, t: usize, width: usize, past: usize) -> Result<Tensor<F>> {
    if t >= frames {
        return Err(Error::InvalidArgument(format!("frame {t} out of range 0..{frames}")));
    }
    if mags.len() != frames * NUM_BINS {
        return Err(Error::shape("context_window", "magnitudes", frames * NUM_BINS, mags.len()));
    }
    let mut data = vec![F::zero(); NUM_BINS * width];
    for j in 0..width {
        let src = t as isize - past as isize + j as isize;
        if src < 0 || src as usize >= frames {
            continue;
        }
        let frame = &mags[src as usize * NUM_BINS..(src as usize + 1) * NUM_BINS];
        for (f, &v) in frame.iter().enumerate() {
            data[f * width + j] = v;
        }
    }
    Tensor::new(vec![1, NUM_BINS, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_conv_chain_shapes() {
        let cfg = ModelConfig::paper();
        assert_eq!(cfg.conv_shapes().unwrap(), vec![[16, 82, 4], [32, 25, 2], [64, 6, 2]]);
        assert_eq!(cfg.conv_output_len().unwrap(), 768);
        assert_eq!(cfg.crnn.hidden, 1072);
        assert_eq!(cfg.lm.vocab_size, 857);
        assert!(cfg.crnn.conv.iter().all(|c| c.dilation == (2, 1) && c.stride == (3, 1)));
    }

    #[test]
    fn context_window_layout() {
        let frames = 100;
        let mags: Vec<f64> = (0..frames * NUM_BINS).map(|i| (i / NUM_BINS) as f64 + 1.0).collect();
        let w = context_window(&mags, frames, 50, 8, 4).unwrap();
        assert_eq!(w.shape(), &[1, 256, 8]);
        for j in 0..8 {
            for f in [0, 100, 255] {
                assert_eq!(w.data()[f * 8 + j], (46 + j) as f64 + 1.0);
            }
        }
        let w0 = context_window(&mags, frames, 0, 8, 4).unwrap();
        for f in 0..NUM_BINS {
            for j in 0..8 {
                let v = w0.data()[f * 8 + j];
                if j < 4 {
                    assert_eq!(v, 0.0);
                } else {
                    assert_eq!(v, (j - 4) as f64 + 1.0);
                }
            }
        }
        assert!(context_window(&mags, frames, 100, 8, 4).is_err());
    }

    #[test]
    fn zero_params_give_half_gates() {
        let mut params = ParamStore::<f64>::new();
        let w = params.add_constant("w", ParamGroup::Denoiser, &[12, 2], 0.0);
        let u = params.add_constant("u", ParamGroup::Denoiser, &[12, 3], 0.0);
        let b = params.add_constant("b", ParamGroup::Denoiser, &[12], 0.0);
        let ids = LstmIds { w, u, b };
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![0.7, -0.2]));
        let h = g.constant(Tensor::from_vec(vec![0.1, 0.2, 0.3]));
        let cv = vec![1.0, -2.0, 0.5];
        let c = g.constant(Tensor::from_vec(cv.clone()));
        let (h2, c2) = lstm_step(&mut g, &params, ids, x, h, c).unwrap();
        for k in 0..3 {
            assert!((g.value(c2).data()[k] - 0.5 * cv[k]).abs() < 1e-15);
            assert!((g.value(h2).data()[k] - 0.5 * (0.5 * cv[k]).tanh()).abs() < 1e-15);
        }
        let zero = g.constant(Tensor::zeros(&[3]));
        let x0 = g.constant(Tensor::zeros(&[2]));
        let (h3, c3) = lstm_step(&mut g, &params, ids, x0, zero, zero).unwrap();
        assert!(g.value(h3).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c3).data().iter().all(|&v| v == 0.0));
        let bad = g.constant(Tensor::zeros(&[4]));
        assert!(lstm_step(&mut g, &params, ids, x0, bad, zero).is_err());
    }

    #[test]
    fn conv_stack_zero_input_zero_bias_is_zero() {
        let model = Model::<f64>::new(ModelConfig::desk(), 1).unwrap();
        let mut g = Graph::inference();
        let x = g.constant(Tensor::zeros(&[1, 256, 8]));
        let y = model.conv_stack_forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).numel(), 32 * 6 * 2);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_preserves_frame_count() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        for frames in [1, 2, 9] {
            let mags: Vec<f64> = (0..frames * NUM_BINS).map(|i| ((i * 31) % 17) as f64 * 0.1).collect();
            let mut g = Graph::new();
            let out = model.crnn_forward(&mut g, &mags, frames).unwrap();
            assert_eq!(g.value(out.denoised).shape(), &[frames, 256]);
            assert!(g.value(out.denoised).data().iter().all(|&v| v >= 0.0 && v.is_finite()));
        }
        let mut g = Graph::new();
        assert!(model.crnn_forward(&mut g, &[], 0).is_err());
    }

    #[test]
    fn zero_params_give_identical_frames() {
        let mut model = Model::<f64>::new(ModelConfig::tiny(), 3).unwrap();
        model.params_mut().iter_mut().for_each(|p| p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0));
        let frames = 5;
        let mags: Vec<f64> = (0..frames * NUM_BINS).map(|i| (i % 7) as f64).collect();
        let (out, _) = model.enhance(&mags, frames).unwrap();
        for t in 1..frames {
            assert_eq!(&out[t * 256..(t + 1) * 256], &out[..256]);
        }
    }

    #[test]
    fn output_frame_ignores_frames_beyond_its_lookahead() {
        let model = Model::<f64>::new(ModelConfig::tiny(), 5).unwrap();
        let frames = 12;
        let mags: Vec<f64> = (0..frames * NUM_BINS).map(|i| ((i * 13) % 11) as f64 * 0.2).collect();
        let (base, _) = model.enhance(&mags, frames).unwrap();
        let t = 4;
        let mut perturbed = mags.clone();
        perturbed[(t + 5) * NUM_BINS..(t + 6) * NUM_BINS].iter_mut().for_each(|v| *v += 3.0);
        let (moved, _) = model.enhance(&perturbed, frames).unwrap();
        assert_eq!(&base[..(t + 1) * 256], &moved[..(t + 1) * 256]);
        assert_ne!(&base[(t + 1) * 256..], &moved[(t + 1) * 256..]);
    }

    #[test]
    fn decoder_rows_and_width() {
        let model = Model::<f64>::new(ModelConfig::desk(), 2).unwrap();
        let mut g = Graph::new();
        let mags = vec![0.5; 3 * NUM_BINS];
        let out = model.crnn_forward(&mut g, &mags, 3).unwrap();
        let logits = model.lm_decode(&mut g, &out.final_state, &[5, 9, 12]).unwrap();
        assert_eq!(g.value(logits).shape(), &[4, 16]);
        assert!(model.lm_decode(&mut g, &out.final_state, &vec![5; 61]).is_err());
        assert!(model.lm_decode(&mut g, &out.final_state, &[16]).is_err());
        assert!(model.lm_decode(&mut g, &out.final_state, &[EOS]).is_err());
        assert_eq!(Model::<f64>::lm_targets(&[5, 9]), vec![5, 9, EOS]);
    }

    #[test]
    fn different_final_states_change_first_logits() {
        let model = Model::<f64>::new(ModelConfig::desk(), 2).unwrap();
        let mut g = Graph::new();
        let h_a = g.constant(Tensor::from_vec(vec![0.3; 64]));
        let h_b = g.constant(Tensor::from_vec((0..64).map(|i| (i as f64 * 0.4).sin()).collect()));
        let zero = g.constant(Tensor::zeros(&[64]));
        let la = model
            .lm_decode(&mut g, &HiddenState { h: vec![zero, h_a], c: vec![zero, zero] }, &[7])
            .unwrap();
        let lb = model
            .lm_decode(&mut g, &HiddenState { h: vec![zero, h_b], c: vec![zero, zero] }, &[7])
            .unwrap();
        let diff = g.value(la).data()[..16]
            .iter()
            .zip(&g.value(lb).data()[..16])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 0.0);
    }

    #[test]
    fn greedy_decode_stops_on_eos_and_caps_length() {
        let mut model = Model::<f64>::new(ModelConfig::desk(), 2).unwrap();
        let top = vec![0.1; 64];
        let out = model.lm_greedy_decode(&top, 60).unwrap();
        assert!(out.len() <= 60);

        let b = model.layout.lm_out_b;
        model.params_mut().get_mut(b).tensor.data_mut()[EOS] = 1e3;
        assert!(model.lm_greedy_decode(&top, 60).unwrap().is_empty());

        let w = model.layout.lm_out_w;
        model.params_mut().get_mut(w).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let bias = model.params_mut().get_mut(b).tensor.data_mut();
        bias.iter_mut().for_each(|v| *v = 0.0);
        bias[10] = 5.0;
        assert_eq!(model.lm_greedy_decode(&top, 200).unwrap(), vec![10; 60]);
    }
}
