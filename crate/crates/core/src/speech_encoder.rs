//! Frozen speech feature maps for the perceptual loss.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint::Container;
use crate::dsp::{hann, mel_filterbank};
use crate::error::{Error, Result};
use crate::grid::video::WaveformClip;
use crate::nn::{Conv, TensorSet};
use crate::tensor::Tensor;

/// A fixed map from waveforms to feature sequences, differentiable in its input.
pub trait SpeechEncoder {
    fn id(&self) -> &str;

    fn sample_rate(&self) -> u32;

    /// Feature channels per frame.
    fn feature_dim(&self) -> usize;

    /// Samples that influence one output frame.
    fn receptive_field(&self) -> usize;

    /// `[B, L]` waveforms to `[B, D, F]` features.
    fn encode<'g>(&self, x: Var<'g>) -> Var<'g>;

    /// Digest of every frozen parameter.
    fn checksum(&self) -> String;

    fn encode_speech(&self, clip: &WaveformClip) -> Result<Tensor> {
        if clip.sample_rate != self.sample_rate() {
            return Err(Error::InvalidInput(format!(
                "speech encoder runs at {} Hz, waveform is {} Hz",
                self.sample_rate(),
                clip.sample_rate
            )));
        }
        let g = Graph::new();
        let x = g.constant(Tensor::new([1, clip.len()], clip.samples.clone()));
        let f = self.encode(x).value();
        let shape = f.shape()[1..].to_vec();
        Ok(f.as_ref().clone().reshape(shape))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogMelEncoderConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub mel_bands: usize,
    pub channels: Vec<usize>,
    pub seed: u64,
    /// Optional checkpoint holding a `speech_encoder` tensor set to load instead of seeded weights.
    pub weights: Option<String>,
}

impl Default for LogMelEncoderConfig {
    fn default() -> Self {
        Self { window_ms: 25.0, hop_ms: 10.0, mel_bands: 40, channels: vec![64, 64], seed: 1234, weights: None }
    }
}

/// Log-mel frontend followed by a seeded, frozen 1-D convolution stack.
#[derive(Clone, Debug)]
pub struct LogMelEncoder {
    sample_rate: u32,
    win: usize,
    hop: usize,
    /// `[win, 2 * bins]`: Hann-windowed cosine and sine DFT bases side by side.
    dft: Tensor,
    /// `[bins, bands]`.
    mel: Tensor,
    bins: usize,
    pub params: TensorSet,
    convs: Vec<Conv>,
}

const LOG_FLOOR: f64 = 1e-5;

impl LogMelEncoder {
    pub fn new(config: &LogMelEncoderConfig, sample_rate: u32) -> Result<Self> {
        let win = (config.window_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop = (config.hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        if win < 2 || hop == 0 || config.mel_bands == 0 {
            return Err(Error::Config(format!("speech encoder framing {win}/{hop} samples is degenerate")));
        }
        let n_fft = win.next_power_of_two();
        let bins = n_fft / 2 + 1;
        let w = hann(win);
        let mut dft = vec![0.0; win * 2 * bins];
        for n in 0..win {
            for k in 0..bins {
                let a = 2.0 * PI * (k * n) as f64 / n_fft as f64;
                dft[n * 2 * bins + k] = w[n] * a.cos();
                dft[n * 2 * bins + bins + k] = -w[n] * a.sin();
            }
        }
        let fb = mel_filterbank(config.mel_bands, n_fft, sample_rate);
        let mel = Tensor::from_fn([bins, config.mel_bands], |i| fb[(i % config.mel_bands) * bins + i / config.mel_bands]);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = TensorSet::new();
        let mut convs = Vec::new();
        let mut cin = config.mel_bands;
        for (i, &cout) in config.channels.iter().enumerate() {
            convs.push(Conv::new(&mut params, &mut rng, &format!("conv.{i}"), cin, cout, &[3], &[1], &[1]));
            cin = cout;
        }
        let mut enc = Self { sample_rate, win, hop, dft: Tensor::new([win, 2 * bins], dft), mel, bins, params, convs };
        if let Some(path) = &config.weights {
            enc.load_weights(Path::new(path))?;
        }
        Ok(enc)
    }

    /// Replaces the convolution weights with the `speech_encoder` set of a checkpoint file.
    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let container = Container::load(path)?;
        let set = container
            .set("speech_encoder")
            .ok_or_else(|| Error::Checkpoint(format!("{}: no speech_encoder weights", path.display())))?;
        self.params.assign_from(set).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn window(&self) -> usize {
        self.win
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    /// `[B, L]` to `[B, bands, F]` log-mel energies.
    pub fn log_mel<'g>(&self, x: Var<'g>) -> Var<'g> {
        let g = x.graph();
        let b = x.shape()[0];
        let frames = x.frame(self.win, self.hop);
        let f = frames.shape()[1];
        let spec = frames.reshape([b * f, self.win]).matmul(g.constant(self.dft.clone()));
        let power = spec.narrow(1, 0, self.bins).square() + spec.narrow(1, self.bins, self.bins).square();
        let bands = self.mel.shape()[1];
        let logmel = power.matmul(g.constant(self.mel.clone())).add_scalar(LOG_FLOOR).ln();
        transpose_last(logmel.reshape([b, f, bands]))
    }
}

/// `[B, M, N] -> [B, N, M]`.
fn transpose_last<'g>(x: Var<'g>) -> Var<'g> {
    let shape = x.shape();
    let (b, m, n) = (shape[0], shape[1], shape[2]);
    let index: Vec<usize> = (0..n).flat_map(|j| (0..m).map(move |i| i * n + j)).collect();
    x.reshape([b, m * n]).gather_last(index).reshape([b, n, m])
}

impl SpeechEncoder for LogMelEncoder {
    fn id(&self) -> &str {
        "logmel-frozen-conv"
    }

    fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    fn feature_dim(&self) -> usize {
        self.convs.last().map_or(self.mel.shape()[1], |c| self.params.get(c.weight).shape()[0])
    }

    fn receptive_field(&self) -> usize {
        self.win + 2 * self.convs.len() * self.hop
    }

    fn encode<'g>(&self, x: Var<'g>) -> Var<'g> {
        let p = self.params.bind_frozen(x.graph());
        let mut h = self.log_mel(x);
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&p, h);
            if i + 1 < self.convs.len() {
                h = h.leaky_relu(0.2);
            }
        }
        h
    }

    fn checksum(&self) -> String {
        self.params.checksum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::Container;

    fn tone(n: usize, f: f64, sr: f64) -> Vec<f64> {
        (0..n).map(|i| 0.5 * (2.0 * PI * f * i as f64 / sr).sin()).collect()
    }

    #[test]
    fn power_matches_direct_dft() {
        let enc = LogMelEncoder::new(&LogMelEncoderConfig::default(), 8000).unwrap();
        let x = tone(400, 440.0, 8000.0);
        let g = Graph::new();
        let mel = enc.log_mel(g.constant(Tensor::new([1, 400], x.clone())));
        // Recompute band 5 of frame 0 by direct summation.
        let n_fft = 256;
        let w = hann(200);
        let fb = mel_filterbank(40, n_fft, 8000);
        let mut energy = 0.0;
        for k in 0..129 {
            let (mut re, mut im) = (0.0, 0.0);
            for n in 0..200 {
                let a = 2.0 * PI * (k * n) as f64 / n_fft as f64;
                re += w[n] * x[n] * a.cos();
                im -= w[n] * x[n] * a.sin();
            }
            energy += fb[5 * 129 + k] * (re * re + im * im);
        }
        let frames = mel.shape()[2];
        assert_eq!(frames, (400 - 200) / 80 + 1);
        let got = mel.value().data()[5 * frames];
        assert!((got - (energy + LOG_FLOOR).ln()).abs() < 1e-9);
    }

    #[test]
    fn deterministic_and_non_degenerate() {
        let enc = LogMelEncoder::new(&LogMelEncoderConfig::default(), 8000).unwrap();
        let speech = WaveformClip::new(tone(4000, 220.0, 8000.0), 8000).unwrap();
        let silence = WaveformClip::new(vec![0.0; 4000], 8000).unwrap();
        let a = enc.encode_speech(&speech).unwrap();
        assert_eq!(a, enc.encode_speech(&speech).unwrap());
        let b = enc.encode_speech(&silence).unwrap();
        let dist: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(dist > 0.0);
        assert_eq!(a.shape()[0], enc.feature_dim());
        let wrong_rate = WaveformClip::new(vec![0.0; 4000], 16000).unwrap();
        assert!(enc.encode_speech(&wrong_rate).is_err());
    }

    #[test]
    fn one_hop_shift_shifts_interior_frames() {
        let enc = LogMelEncoder::new(&LogMelEncoderConfig::default(), 8000).unwrap();
        let hop = enc.hop();
        let x: Vec<f64> = (0..4000).map(|i| 0.3 * ((i as f64) * 0.05).sin() * ((i as f64) * 0.0031).cos()).collect();
        let a = enc.encode_speech(&WaveformClip::new(x[hop..].to_vec(), 8000).unwrap()).unwrap();
        let b = enc.encode_speech(&WaveformClip::new(x[..x.len() - hop].to_vec(), 8000).unwrap()).unwrap();
        let (d, f) = (a.shape()[0], a.shape()[1]);
        assert_eq!(b.shape()[1], f);
        // Frame k of the advanced signal equals frame k+1 of the original, away from the edges.
        for c in 0..d {
            for k in 2..f - 3 {
                let (u, v) = (a.data()[c * f + k], b.data()[c * f + k + 1]);
                assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()), "channel {c} frame {k}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn weights_load_from_container() {
        let cfg = LogMelEncoderConfig { seed: 99, ..LogMelEncoderConfig::default() };
        let donor = LogMelEncoder::new(&cfg, 8000).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let mut c = Container::new(serde_json::json!({}));
        c.insert("speech_encoder", donor.params.clone());
        c.save(&path).unwrap();
        let loaded = LogMelEncoder::new(
            &LogMelEncoderConfig { weights: Some(path.display().to_string()), ..LogMelEncoderConfig::default() },
            8000,
        )
        .unwrap();
        assert_eq!(loaded.checksum(), donor.checksum());
    }
}
