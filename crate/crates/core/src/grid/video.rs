use crate::error::{Error, Result};
use crate::grid::sentence::GridSentence;
use crate::tensor::Tensor;

/// Video frame rate of the corpus.
pub const FPS: u32 = 25;
/// Height of a preprocessed mouth-region frame (bottom half of a 128-row face crop).
pub const FRAME_HEIGHT: usize = 64;
pub const FRAME_WIDTH: usize = 96;

/// Audio samples per video frame, `sample_rate / fps`.
pub fn samples_per_frame(sample_rate: u32) -> Result<usize> {
    if sample_rate == 0 || sample_rate % FPS != 0 {
        return Err(Error::InvalidInput(format!("sample rate {sample_rate} Hz is not a multiple of {FPS} fps")));
    }
    Ok((sample_rate / FPS) as usize)
}

/// A normalized frame sequence, shape `[T, C, H, W]`, values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    data: Tensor,
}

impl VideoTensor {
    pub fn new(data: Tensor) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::InvalidInput(format!("video must be [T, C, H, W], got {:?}", data.shape())));
        }
        if data.shape()[0] == 0 {
            return Err(Error::InvalidInput("video has no frames".into()));
        }
        if data.shape()[1..].contains(&0) {
            return Err(Error::InvalidInput(format!("degenerate frame shape {:?}", data.shape())));
        }
        if !data.is_finite() {
            return Err(Error::InvalidInput("video contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    /// `(C, H, W)`.
    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels(), self.height(), self.width()]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor {
        self.data
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.channels() * self.height() * self.width();
        &self.data.data()[t * n..(t + 1) * n]
    }

    /// Frames `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::InvalidInput(format!("frame range {start}+{len} outside 0..{}", self.frames())));
        }
        Ok(Self { data: self.data.slice_outer(start, len) })
    }

    /// Horizontal flip of every frame.
    pub fn mirrored(&self) -> Self {
        let w = self.width();
        let mut out = self.data.clone();
        for row in out.data_mut().chunks_exact_mut(w) {
            row.reverse();
        }
        Self { data: out }
    }
}

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveformClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl WaveformClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidInput(format!("audio sample {bad} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// A copy trimmed or zero-padded to exactly `len` samples.
    pub fn fitted(&self, len: usize) -> Vec<f64> {
        let mut s = self.samples.clone();
        s.resize(len, 0.0);
        s
    }
}

/// One aligned audio-visual utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    /// Clip identifier, `s<speaker>/<name>`.
    pub id: String,
    pub speaker_id: u8,
    pub video: VideoTensor,
    pub audio: WaveformClip,
    pub sentence: GridSentence,
}

impl VideoSample {
    /// Validates the speaker range and that audio and video durations agree
    /// to within one video frame.
    pub fn new(
        id: impl Into<String>,
        speaker_id: u8,
        video: VideoTensor,
        audio: WaveformClip,
        sentence: GridSentence,
    ) -> Result<Self> {
        let id = id.into();
        if !(1..=33).contains(&speaker_id) {
            return Err(Error::InvalidInput(format!("{id}: speaker {speaker_id} outside 1..=33")));
        }
        let hop = samples_per_frame(audio.sample_rate)?;
        let expected = video.frames() * hop;
        if audio.len().abs_diff(expected) > hop {
            return Err(Error::InvalidInput(format!(
                "{id}: {} audio samples but {} frames imply {expected} (+/- {hop})",
                audio.len(),
                video.frames()
            )));
        }
        Ok(Self { id, speaker_id, video, audio, sentence })
    }

    pub fn samples_per_frame(&self) -> usize {
        (self.audio.sample_rate / FPS) as usize
    }

    /// Reference audio with exactly `T * H` samples.
    pub fn target_audio(&self) -> Vec<f64> {
        self.audio.fitted(self.video.frames() * self.samples_per_frame())
    }
}

/// Mirror augmentation: frames flipped left-right, audio and transcript untouched.
pub fn augment_mirror(sample: &VideoSample) -> VideoSample {
    VideoSample { video: sample.video.mirrored(), ..sample.clone() }
}
