//! Video-to-waveform generator: a 3-D convolutional encoder over centered
//! frame windows, a unidirectional GRU over the per-frame encodings and a
//! transposed-convolution decoder emitting one frame of audio per step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::grid::video::{samples_per_frame, VideoTensor, WaveformClip, FRAME_HEIGHT, FRAME_WIDTH};
use crate::grid::window::sliding_windows;
use crate::nn::{BatchNorm, Bound, Conv, ConvTranspose, ForwardCtx, Gru, Linear, TensorSet};
use crate::tensor::Tensor;

pub const ENCODER_STAGES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    /// Frames per encoder window; odd.
    pub window: usize,
    /// Video channels (1 for grayscale).
    pub in_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub gru_hidden: usize,
    /// Channels right after the decoder's linear projection.
    pub decoder_channels: usize,
    /// Upper bound on the number of upsampling stages.
    pub decoder_depth: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            window: 7,
            in_channels: 1,
            encoder_channels: vec![32, 64, 128, 256, 512],
            gru_hidden: 256,
            decoder_channels: 128,
            decoder_depth: 3,
        }
    }
}

impl GeneratorConfig {
    /// Reduced widths for CPU-scale experiments.
    pub fn desk() -> Self {
        Self {
            encoder_channels: vec![4, 8, 8, 16, 16],
            gru_hidden: 32,
            decoder_channels: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window % 2 == 0 {
            return bad(format!("generator.window must be odd, got {}", self.window));
        }
        if self.encoder_channels.len() != ENCODER_STAGES {
            return bad(format!(
                "generator.encoder_channels needs exactly {ENCODER_STAGES} entries, got {}",
                self.encoder_channels.len()
            ));
        }
        if self.in_channels == 0 || self.gru_hidden == 0 || self.decoder_channels == 0 {
            return bad("generator widths must be positive".into());
        }
        if self.encoder_channels.contains(&0) {
            return bad("generator.encoder_channels must be positive".into());
        }
        Ok(())
    }
}

/// Upsampling strides (4s first, then 2s) whose product divides `h`, at most `depth` of them.
pub fn decoder_strides(h: usize, depth: usize) -> Vec<usize> {
    let mut rest = h;
    let mut strides = Vec::new();
    for s in [4, 2] {
        while strides.len() < depth && rest % s == 0 && rest / s >= 1 && rest > 1 {
            strides.push(s);
            rest /= s;
        }
    }
    strides
}

/// Mean over every axis after the second: `[M, C, ...] -> [M, C]`.
fn global_average<'g>(x: Var<'g>) -> Var<'g> {
    let shape = x.shape();
    let (m, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let ones = x.graph().constant(Tensor::full([inner, 1], 1.0 / inner as f64));
    x.reshape([m * c, inner]).matmul(ones).reshape([m, c])
}

#[derive(Clone, Debug)]
struct EncoderStage {
    conv: Conv,
    bn: Option<BatchNorm>,
}

#[derive(Clone, Debug)]
struct UpStage {
    conv: ConvTranspose,
    bn: BatchNorm,
}

#[derive(Clone, Debug)]
pub struct Generator {
    config: GeneratorConfig,
    sample_rate: u32,
    hop: usize,
    seed_len: usize,
    pub params: TensorSet,
    pub buffers: TensorSet,
    encoder: Vec<EncoderStage>,
    gru: Gru,
    project: Linear,
    project_bn: BatchNorm,
    upsample: Vec<UpStage>,
    head: Conv,
}

impl Generator {
    pub fn new(config: &GeneratorConfig, sample_rate: u32, seed: u64) -> Result<Self> {
        config.validate()?;
        let hop = samples_per_frame(sample_rate)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = TensorSet::new();
        let mut buffers = TensorSet::new();

        let mut encoder = Vec::with_capacity(ENCODER_STAGES);
        let mut cin = config.in_channels;
        for (i, &cout) in config.encoder_channels.iter().enumerate() {
            let name = format!("encoder.{i}");
            let conv = Conv::new(&mut params, &mut rng, &name, cin, cout, &[3, 3, 3], &[1, 2, 2], &[1, 1, 1]);
            let bn = (i + 1 < ENCODER_STAGES).then(|| BatchNorm::new(&mut params, &mut buffers, &format!("{name}.bn"), cout));
            encoder.push(EncoderStage { conv, bn });
            cin = cout;
        }
        let d_s = cin;
        let gru = Gru::new(&mut params, &mut rng, "gru", d_s, config.gru_hidden);

        let strides = decoder_strides(hop, config.decoder_depth);
        let seed_len = hop / strides.iter().product::<usize>();
        let c0 = config.decoder_channels;
        let project = Linear::new(&mut params, &mut rng, "decoder.project", config.gru_hidden, c0 * seed_len);
        let project_bn = BatchNorm::new(&mut params, &mut buffers, "decoder.project.bn", c0);
        let mut upsample = Vec::with_capacity(strides.len());
        let mut ch = c0;
        for (i, &s) in strides.iter().enumerate() {
            let cout = (ch / 2).max(1);
            let name = format!("decoder.up.{i}");
            let conv = ConvTranspose::new(&mut params, &mut rng, &name, ch, cout, 2 * s, s, s / 2);
            let bn = BatchNorm::new(&mut params, &mut buffers, &format!("{name}.bn"), cout);
            upsample.push(UpStage { conv, bn });
            ch = cout;
        }
        let head = Conv::new(&mut params, &mut rng, "decoder.head", ch, 1, &[1], &[1], &[0]);
        Ok(Self {
            config: config.clone(),
            sample_rate,
            hop,
            seed_len,
            params,
            buffers,
            encoder,
            gru,
            project,
            project_bn,
            upsample,
            head,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Audio samples emitted per video frame.
    pub fn samples_per_frame(&self) -> usize {
        self.hop
    }

    /// Dimension of the visual encoding.
    pub fn visual_dim(&self) -> usize {
        self.config.encoder_channels[ENCODER_STAGES - 1]
    }

    /// Frames of lookahead implied by the centered window.
    pub fn lookahead(&self) -> usize {
        self.config.window / 2
    }

    /// `[M, C, N, 64, 96]` windows to `[M, d_s]` encodings.
    pub fn encode_visual<'g>(&self, p: &Bound<'g>, ctx: &mut ForwardCtx, windows: Var<'g>) -> Var<'g> {
        let mut x = windows;
        for stage in &self.encoder {
            x = stage.conv.forward(p, x);
            x = match &stage.bn {
                Some(bn) => bn.forward(p, &self.buffers, ctx, x).relu(),
                None => x.tanh(),
            };
        }
        global_average(x)
    }

    /// `[B, T, d_s]` encodings to `[B, T, d_c]` content features.
    pub fn encode_content<'g>(&self, p: &Bound<'g>, zs: Var<'g>, h0: Option<Var<'g>>) -> Var<'g> {
        let b = zs.shape()[0];
        let h0 = h0.unwrap_or_else(|| zs.graph().constant(Tensor::zeros([b, self.config.gru_hidden])));
        self.gru.forward(p, zs, h0)
    }

    /// `[M, d_c]` content features to `[M, H]` audio frames.
    pub fn decode_frame_audio<'g>(&self, p: &Bound<'g>, ctx: &mut ForwardCtx, zc: Var<'g>) -> Var<'g> {
        let m = zc.shape()[0];
        let c0 = self.config.decoder_channels;
        let mut x = self.project.forward(p, zc).reshape([m, c0, self.seed_len]);
        x = self.project_bn.forward(p, &self.buffers, ctx, x).relu();
        for stage in &self.upsample {
            x = stage.conv.forward(p, x);
            x = stage.bn.forward(p, &self.buffers, ctx, x).relu();
        }
        self.head.forward(p, x).tanh().reshape([m, self.hop])
    }

    fn check_video(&self, video: &VideoTensor) -> Result<()> {
        let want = [self.config.in_channels, FRAME_HEIGHT, FRAME_WIDTH];
        if video.frame_shape() != want {
            return Err(Error::InvalidInput(format!(
                "expected preprocessed frames of shape {want:?}, got {:?}",
                video.frame_shape()
            )));
        }
        Ok(())
    }

    /// Encoder input for a batch of equally long videos: `[B * T, C, N, 64, 96]`.
    pub fn batch_windows(&self, videos: &[&VideoTensor]) -> Result<Tensor> {
        let first = videos.first().ok_or_else(|| Error::InvalidInput("empty video batch".into()))?;
        let t = first.frames();
        let mut parts = Vec::with_capacity(videos.len());
        for v in videos {
            self.check_video(v)?;
            if v.frames() != t {
                return Err(Error::InvalidInput(format!("batch mixes {t} and {} frames", v.frames())));
            }
            let w = sliding_windows(v, self.config.window)?;
            // [T, C, N, H, W] is already the per-window layout the encoder expects.
            parts.push(w);
        }
        Ok(Tensor::cat_outer(&parts))
    }

    /// Full forward pass over equally long videos: `[B, T * H]`.
    pub fn forward<'g>(
        &self,
        p: &Bound<'g>,
        ctx: &mut ForwardCtx,
        windows: Var<'g>,
        batch: usize,
    ) -> Var<'g> {
        let m = windows.shape()[0];
        let t = m / batch;
        let zs = self.encode_visual(p, ctx, windows).reshape([batch, t, self.visual_dim()]);
        let zc = self.encode_content(p, zs, None).reshape([m, self.config.gru_hidden]);
        self.decode_frame_audio(p, ctx, zc).reshape([batch, t * self.hop])
    }

    /// Inference-mode waveforms for equally long videos, `[B, T * H]`.
    pub fn generate_batch(&self, videos: &[&VideoTensor]) -> Result<Tensor> {
        let windows = self.batch_windows(videos)?;
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let out = self.forward(&p, &mut ForwardCtx::eval(), g.constant(windows), videos.len());
        Ok(out.value().as_ref().clone())
    }

    /// Synthesizes `T * H` samples for a preprocessed video.
    pub fn generate(&self, video: &VideoTensor) -> Result<WaveformClip> {
        let out = self.generate_batch(&[video])?;
        WaveformClip::new(out.into_data(), self.sample_rate)
    }

    /// Visual encodings of single windows `[C, N, 64, 96]`, inference mode.
    pub fn visual_encoding(&self, window: &Tensor) -> Result<Vec<f64>> {
        let want = [self.config.in_channels, self.config.window, FRAME_HEIGHT, FRAME_WIDTH];
        if window.shape() != want {
            return Err(Error::InvalidInput(format!("window shape {:?}, expected {want:?}", window.shape())));
        }
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let mut shape = vec![1];
        shape.extend_from_slice(&want);
        let x = g.constant(window.clone().reshape(shape));
        Ok(self.encode_visual(&p, &mut ForwardCtx::eval(), x).value().data().to_vec())
    }

    /// Content features for a `[T, d_s]` encoding sequence, from a zero state.
    pub fn content_sequence(&self, zs: &Tensor) -> Result<Tensor> {
        if zs.rank() != 2 || zs.shape()[1] != self.visual_dim() {
            return Err(Error::InvalidInput(format!("encodings must be [T, {}], got {:?}", self.visual_dim(), zs.shape())));
        }
        if zs.shape()[0] == 0 {
            return Err(Error::InvalidInput("empty encoding sequence".into()));
        }
        let t = zs.shape()[0];
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let x = g.constant(zs.clone().reshape([1, t, self.visual_dim()]));
        Ok(self.encode_content(&p, x, None).value().as_ref().clone().reshape([t, self.config.gru_hidden]))
    }

    /// One frame of audio from a content vector, inference mode.
    pub fn frame_audio(&self, zc: &[f64]) -> Result<Vec<f64>> {
        if zc.len() != self.config.gru_hidden {
            return Err(Error::InvalidInput(format!("content vector has {} dims, expected {}", zc.len(), self.config.gru_hidden)));
        }
        let g = Graph::new();
        let p = self.params.bind_frozen(&g);
        let x = g.constant(Tensor::new([1, zc.len()], zc.to_vec()));
        Ok(self.decode_frame_audio(&p, &mut ForwardCtx::eval(), x).value().data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            window: 3,
            in_channels: 1,
            encoder_channels: vec![2, 2, 3, 3, 4],
            gru_hidden: 5,
            decoder_channels: 4,
            decoder_depth: 2,
        }
    }

    fn random_video(rng: &mut impl Rng, t: usize) -> VideoTensor {
        VideoTensor::new(Tensor::from_fn([t, 1, FRAME_HEIGHT, FRAME_WIDTH], |_| rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn strides_factor_the_frame_hop() {
        assert_eq!(decoder_strides(320, 3), vec![4, 4, 4]);
        assert_eq!(decoder_strides(2000, 3), vec![4, 4]);
        assert_eq!(decoder_strides(2000, 1), vec![4]);
        assert_eq!(decoder_strides(8, 3), vec![4, 2]);
    }

    #[test]
    fn frame_hop_matches_sample_rate() {
        assert_eq!(Generator::new(&tiny(), 50_000, 0).unwrap().samples_per_frame(), 2000);
        assert_eq!(Generator::new(&tiny(), 8_000, 0).unwrap().samples_per_frame(), 320);
    }

    #[test]
    fn generate_emits_t_times_h_samples_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gen = Generator::new(&tiny(), 8_000, 3).unwrap();
        for t in [1, 4] {
            let clip = gen.generate(&random_video(&mut rng, t)).unwrap();
            assert_eq!(clip.len(), t * 320);
            assert!(clip.samples.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn visual_encoding_is_bounded_and_deterministic() {
        let gen = Generator::new(&tiny(), 8_000, 3).unwrap();
        let zero = Tensor::zeros([1, 3, FRAME_HEIGHT, FRAME_WIDTH]);
        let a = gen.visual_encoding(&zero).unwrap();
        assert_eq!(a, gen.visual_encoding(&zero).unwrap());
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|v| v.is_finite() && v.abs() < 1.0));
        assert!(gen.visual_encoding(&Tensor::zeros([1, 5, FRAME_HEIGHT, FRAME_WIDTH])).is_err());
    }

    #[test]
    fn content_sequence_has_prefix_property() {
        let gen = Generator::new(&tiny(), 8_000, 3).unwrap();
        let zs = Tensor::from_fn([6, 4], |i| (i as f64 * 0.37).sin());
        let full = gen.content_sequence(&zs).unwrap();
        let head = gen.content_sequence(&zs.slice_outer(0, 3)).unwrap();
        assert_eq!(head.data(), &full.data()[..3 * 5]);
        assert!(gen.content_sequence(&Tensor::zeros([0, 4])).is_err());
    }

    #[test]
    fn frame_audio_rejects_wrong_dimension() {
        let gen = Generator::new(&tiny(), 8_000, 3).unwrap();
        assert_eq!(gen.frame_audio(&[0.1; 5]).unwrap().len(), 320);
        assert!(gen.frame_audio(&[0.1; 4]).is_err());
    }

    #[test]
    fn rejects_unpreprocessed_frames_and_bad_configs() {
        let gen = Generator::new(&tiny(), 8_000, 3).unwrap();
        let raw = VideoTensor::new(Tensor::zeros([2, 1, 128, 96])).unwrap();
        assert!(gen.generate(&raw).is_err());
        let mut cfg = tiny();
        cfg.window = 4;
        assert!(Generator::new(&cfg, 8_000, 0).is_err());
        cfg.window = 3;
        cfg.encoder_channels.pop();
        assert!(Generator::new(&cfg, 8_000, 0).is_err());
        assert!(Generator::new(&tiny(), 8_001, 0).is_err());
    }

    #[test]
    fn same_seed_same_weights() {
        let a = Generator::new(&tiny(), 8_000, 11).unwrap();
        let b = Generator::new(&tiny(), 8_000, 11).unwrap();
        let c = Generator::new(&tiny(), 8_000, 12).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert_ne!(a.params.checksum(), c.params.checksum());
    }
}
