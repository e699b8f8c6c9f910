//! Waveform critic for the Wasserstein objective, plus the uniform clip sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv, Linear, TensorSet};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CriticConfig {
    /// Clip length seen by the critic, in seconds.
    pub clip_seconds: f64,
    pub layers: usize,
    pub kernel: usize,
    pub stride: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub leaky_slope: f64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self { clip_seconds: 1.0, layers: 7, kernel: 9, stride: 4, base_channels: 32, max_channels: 2048, leaky_slope: 0.2 }
    }
}

impl CriticConfig {
    pub fn desk() -> Self {
        Self { clip_seconds: 0.5, base_channels: 4, max_channels: 32, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_seconds > 0.0) {
            return Err(Error::Config(format!("critic.clip_seconds must be positive, got {}", self.clip_seconds)));
        }
        if self.layers == 0 || self.kernel == 0 || self.stride == 0 || self.base_channels == 0 || self.max_channels == 0 {
            return Err(Error::Config("critic layer geometry must be positive".into()));
        }
        Ok(())
    }

    /// Clip length in samples; `clip_seconds * sample_rate` must be a whole number.
    pub fn clip_len(&self, sample_rate: u32) -> Result<usize> {
        let exact = self.clip_seconds * sample_rate as f64;
        let n = exact.round();
        if (exact - n).abs() > 1e-6 || n < 1.0 {
            return Err(Error::Config(format!(
                "critic clip of {} s at {sample_rate} Hz is not a whole number of samples",
                self.clip_seconds
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipOrigin {
    Real,
    Generated,
}

/// A fixed-length excerpt handed to the critic.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub origin: ClipOrigin,
    pub start_index: usize,
}

/// Uniform start offset for a `len`-sample clip of a `source`-sample signal.
pub fn sample_offset(source: usize, len: usize, rng: &mut impl Rng) -> Result<usize> {
    if len == 0 || source < len {
        return Err(Error::InvalidInput(format!("cannot take a {len}-sample clip from {source} samples")));
    }
    Ok(rng.gen_range(0..=source - len))
}

pub fn sample_clip(waveform: &[f64], len: usize, origin: ClipOrigin, rng: &mut impl Rng) -> Result<AudioClip> {
    let start = sample_offset(waveform.len(), len, rng)?;
    Ok(AudioClip { samples: waveform[start..start + len].to_vec(), origin, start_index: start })
}

/// Indices extending `0..len` to at least `min_len` by mirror reflection (edge sample not repeated).
pub fn reflect_indices(len: usize, min_len: usize) -> Vec<usize> {
    let target = len.max(min_len);
    if len <= 1 {
        return vec![0; target];
    }
    let period = 2 * (len - 1);
    (0..target)
        .map(|i| {
            let k = i % period;
            if k < len { k } else { period - k }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct Critic {
    config: CriticConfig,
    clip_len: usize,
    pub params: TensorSet,
    convs: Vec<Conv>,
    head: Linear,
}

impl Critic {
    pub fn new(config: &CriticConfig, sample_rate: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        let clip_len = config.clip_len(sample_rate)?;
        Self::with_clip_len(config, clip_len, seed)
    }

    /// A critic over clips of exactly `clip_len` samples.
    pub fn with_clip_len(config: &CriticConfig, clip_len: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = TensorSet::new();
        let mut convs = Vec::with_capacity(config.layers);
        let (mut cin, mut len) = (1, clip_len);
        for i in 0..config.layers {
            let cout = (config.base_channels << i.min(20)).min(config.max_channels);
            let pad = config.kernel / 2;
            let conv = Conv::new(&mut params, &mut rng, &format!("conv.{i}"), cin, cout, &[config.kernel], &[config.stride], &[pad]);
            len = conv
                .geometry(&[len])
                .ok_or_else(|| Error::Config(format!("critic layer {i} does not fit a {len}-sample input")))?
                .out_dims()[0];
            convs.push(conv);
            cin = cout;
        }
        let head = Linear::new(&mut params, &mut rng, "head", cin * len, 1);
        Ok(Self { config: config.clone(), clip_len, params, convs, head })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn clip_len(&self) -> usize {
        self.clip_len
    }

    /// Scores `[B, clip_len]` clips, returning `[B]`.
    pub fn score<'g>(&self, p: &Bound<'g>, clips: Var<'g>) -> Var<'g> {
        let b = clips.shape()[0];
        let mut x = clips.reshape([b, 1, self.clip_len]);
        for conv in &self.convs {
            x = conv.forward(p, x).leaky_relu(self.config.leaky_slope);
        }
        let flat: usize = x.shape()[1..].iter().product();
        self.head.forward(p, x.reshape([b, flat])).reshape([b])
    }

    /// Inference scores for a batch of clips.
    pub fn score_clips(&self, clips: &[&[f64]]) -> Result<Vec<f64>> {
        if clips.is_empty() {
            return Err(Error::InvalidInput("empty clip batch".into()));
        }
        let mut data = Vec::with_capacity(clips.len() * self.clip_len);
        for c in clips {
            if c.len() != self.clip_len {
                return Err(Error::InvalidInput(format!("clip has {} samples, critic expects {}", c.len(), self.clip_len)));
            }
            data.extend_from_slice(c);
        }
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let s = self.score(&p, g.constant(Tensor::new([clips.len(), self.clip_len], data)));
        Ok(s.value().data().to_vec())
    }

    pub fn critic_score(&self, clip: &AudioClip) -> Result<f64> {
        Ok(self.score_clips(&[&clip.samples])?[0])
    }
}
