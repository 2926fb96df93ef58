//! Binary checkpoint: model configuration, named little-endian f32 tensors,
//! optimizer moments and curriculum state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "CRNNCKPT" | version u32
//! config_len u32 | model config as TOML
//! epoch u64 | phase u8 | best_val_loss f64 | epochs_since_improvement u64
//! param_count u32, then per parameter:
//!     name_len u32 | name | group u8 | rank u32 | dims u64 * rank | values f32 * numel
//! lr, beta1, beta2, epsilon, decay_denoiser, decay_decoder f64 | step u64
//! first moments f32 * total | second moments f32 * total
//! ```

use std::fs;
use std::path::Path;

use crate::corpus::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::{AdamConfig, AdamState};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Tensor;
use crate::train::{CurriculumState, Phase};

pub const MAGIC: &[u8; 8] = b"CRNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub params: ParamStore<f32>,
    pub optimizer: AdamState<f32>,
    pub curriculum: CurriculumState,
    /// Completed training epochs.
    pub epoch: usize,
}

impl Checkpoint {
    /// Checkpoint of an untrained model, e.g. for evaluating initial weights.
    pub fn fresh(model: &Model<f32>, adam: AdamConfig, phase: Phase) -> Self {
        Self {
            model_config: model.config().clone(),
            params: model.params().clone(),
            optimizer: AdamState::new(adam, model.params()),
            curriculum: CurriculumState::new(phase),
            epoch: 0,
        }
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Model::from_params(self.model_config.clone(), self.params.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        let cfg = toml::to_string(&self.model_config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());

        put_u64(&mut out, self.epoch as u64);
        out.push(match self.curriculum.phase {
            Phase::DenoiseOnly => 0,
            Phase::Joint => 1,
        });
        out.extend_from_slice(&self.curriculum.best_val_loss.to_le_bytes());
        put_u64(&mut out, self.curriculum.epochs_since_improvement as u64);

        put_u32(&mut out, self.params.len() as u32);
        for p in self.params.iter() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.group.tag());
            put_u32(&mut out, p.tensor.shape().len() as u32);
            for &d in p.tensor.shape() {
                put_u64(&mut out, d as u64);
            }
            put_f32s(&mut out, p.tensor.data());
        }

        let c = &self.optimizer.config;
        for v in [c.lr, c.beta1, c.beta2, c.epsilon, c.weight_decay_denoiser, c.weight_decay_decoder] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_u64(&mut out, self.optimizer.step);
        if self.optimizer.m.len() != self.params.len() || self.optimizer.v.len() != self.params.len() {
            return Err(Error::CheckpointMismatch("optimizer state does not cover every parameter".into()));
        }
        for moments in [&self.optimizer.m, &self.optimizer.v] {
            for (buf, p) in moments.iter().zip(self.params.iter()) {
                if buf.len() != p.tensor.numel() {
                    return Err(Error::CheckpointMismatch(format!("optimizer moments for `{}` have the wrong size", p.name)));
                }
                put_f32s(&mut out, buf);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let model_config: ModelConfig = toml::from_str(cfg_text).map_err(|e| Error::Checkpoint(e.to_string()))?;

        let epoch = r.u64()? as usize;
        let phase = match r.u8()? {
            0 => Phase::DenoiseOnly,
            1 => Phase::Joint,
            t => return Err(Error::Checkpoint(format!("unknown phase tag {t}"))),
        };
        let best_val_loss = r.f64()?;
        let epochs_since_improvement = r.u64()? as usize;

        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|e| Error::Checkpoint(e.to_string()))?
                .to_string();
            let group = ParamGroup::from_tag(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter group for `{name}`")))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let numel = numel.ok_or_else(|| Error::Checkpoint(format!("shape of `{name}` overflows")))?;
            let data = r.f32s(numel)?;
            let tensor = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            params.add(name, group, tensor);
        }

        let mut c = [0.0; 6];
        for v in &mut c {
            *v = r.f64()?;
        }
        let config = AdamConfig {
            lr: c[0],
            beta1: c[1],
            beta2: c[2],
            epsilon: c[3],
            weight_decay_denoiser: c[4],
            weight_decay_decoder: c[5],
        };
        let step = r.u64()?;
        let sizes: Vec<usize> = params.iter().map(|p| p.tensor.numel()).collect();
        let m = sizes.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
        let v = sizes.iter().map(|&n| r.f32s(n)).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            model_config,
            params,
            optimizer: AdamState { config, step, m, v },
            curriculum: CurriculumState {
                phase,
                best_val_loss,
                epochs_since_improvement,
            },
            epoch,
        })
    }

    /// Writes atomically, so an interrupted save leaves the old file intact.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f32]) {
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn sample() -> Checkpoint {
        let model = Model::<f32>::new(ModelConfig::tiny(), 9).unwrap();
        let mut ck = Checkpoint::fresh(&model, AdamConfig::paper(), Phase::Joint);
        ck.epoch = 17;
        ck.curriculum.best_val_loss = 0.123;
        ck.curriculum.epochs_since_improvement = 4;
        ck.optimizer.step = 99;
        for (i, m) in ck.optimizer.m.iter_mut().enumerate() {
            m.iter_mut().enumerate().for_each(|(j, v)| *v = (i * 7 + j) as f32 * 1e-3);
        }
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model_config, ck.model_config);
        assert_eq!(back.epoch, 17);
        assert_eq!(back.curriculum, ck.curriculum);
        assert_eq!(back.optimizer, ck.optimizer);
        for (a, b) in back.params.iter().zip(ck.params.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.group, b.group);
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.tensor), bits(&b.tensor));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn mismatched_config_is_reported() {
        let mut ck = sample();
        ck.model_config = ModelConfig::desk();
        assert!(matches!(ck.model(), Err(Error::CheckpointMismatch(_))));
    }
}
