//! Deterministic toy corpora for tests, benchmarks and demos.
//!
//! A toy clip is a drawn face whose mouth opening follows a per-word
//! envelope, filmed under a random similarity pose, paired with a voiced
//! harmonic signal whose loudness follows the same envelope.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::preprocess::{preprocess_frames, Anchors, PreprocessConfig, RawFrame, CANONICAL_ANCHORS};
use crate::grid::preprocess::Similarity;
use crate::grid::sentence::{Adverb, Color, Command, GridSentence, Preposition, LETTERS};
use crate::grid::video::{samples_per_frame, VideoSample, WaveformClip};
use crate::io::{write_anchors, write_atomic, write_frames, write_wav};

const RAW_WIDTH: usize = 112;
const RAW_HEIGHT: usize = 140;

#[derive(Clone, Debug)]
pub struct ToyCorpusSpec {
    pub speakers: Vec<u8>,
    pub clips_per_speaker: usize,
    pub frames: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

/// Raw material of one toy clip.
pub struct ToyClip {
    pub frames: Vec<RawFrame>,
    pub anchors: Vec<Anchors>,
    pub audio: WaveformClip,
    pub sentence: GridSentence,
    /// Mouth opening per frame, in `[0, 1]`.
    pub envelope: Vec<f64>,
}

pub fn random_sentence(rng: &mut impl Rng) -> GridSentence {
    GridSentence {
        command: Command::ALL[rng.gen_range(0..4)],
        color: Color::ALL[rng.gen_range(0..4)],
        preposition: Preposition::ALL[rng.gen_range(0..4)],
        letter: LETTERS[rng.gen_range(0..LETTERS.len())],
        digit: rng.gen_range(0..10),
        adverb: Adverb::ALL[rng.gen_range(0..4)],
    }
}

/// Per-frame mouth opening: near-closed lead-in/out, one plateau per word.
fn word_envelope(rng: &mut impl Rng, frames: usize) -> Vec<f64> {
    let lead = (frames / 10).max(1).min(frames);
    let speech = frames.saturating_sub(2 * lead).max(1);
    let levels: Vec<f64> = (0..6).map(|_| rng.gen_range(0.35..1.0)).collect();
    (0..frames)
        .map(|t| {
            if t < lead || t >= lead + speech {
                return 0.05;
            }
            let pos = (t - lead) as f64 / speech as f64 * 6.0;
            let w = (pos.floor() as usize).min(5);
            let within = pos - w as f64;
            // Dip between words.
            levels[w] * (0.35 + 0.65 * (PI * within).sin())
        })
        .collect()
}

fn render_frame(pose: &Similarity, opening: f64, skin: f64) -> RawFrame {
    let to_canvas = pose.inverse();
    let mut px = Vec::with_capacity(RAW_WIDTH * RAW_HEIGHT);
    for y in 0..RAW_HEIGHT {
        for x in 0..RAW_WIDTH {
            let (u, v) = to_canvas.apply((x as f64, y as f64));
            let mut val = 70.0;
            if ((u - 48.0) / 46.0).powi(2) + ((v - 66.0) / 62.0).powi(2) <= 1.0 {
                val = skin;
            }
            for (ex, ey) in [(29.0, 44.0), (67.0, 44.0)] {
                if ((u - ex) / 10.0).powi(2) + ((v - ey) / 4.0).powi(2) <= 1.0 {
                    val = 40.0;
                }
            }
            if (u - 48.0).abs() < 3.0 && (60.0..72.0).contains(&v) {
                val = skin - 30.0;
            }
            let mouth_h = 1.5 + 9.0 * opening;
            if ((u - 48.0) / 16.0).powi(2) + ((v - 96.0) / mouth_h).powi(2) <= 1.0 {
                val = 25.0 + 40.0 * (1.0 - opening);
            }
            px.push(val.round().clamp(0.0, 255.0) as u8);
        }
    }
    RawFrame { width: RAW_WIDTH, height: RAW_HEIGHT, channels: 1, pixels: px }
}

/// Renders one toy clip of `frames` frames.
pub fn toy_clip(rng: &mut impl Rng, speaker: u8, frames: usize, sample_rate: u32) -> Result<ToyClip> {
    let hop = samples_per_frame(sample_rate)?;
    let sentence = random_sentence(rng);
    let envelope = word_envelope(rng, frames);

    let angle: f64 = rng.gen_range(-0.08..0.08);
    let scale: f64 = rng.gen_range(0.9..1.1);
    let pose = Similarity {
        a_re: scale * angle.cos(),
        a_im: scale * angle.sin(),
        tx: rng.gen_range(2.0..12.0),
        ty: rng.gen_range(2.0..10.0),
    };
    let skin = 150.0 + 5.0 * (speaker % 7) as f64;
    let frames_px: Vec<RawFrame> = envelope.iter().map(|&a| render_frame(&pose, a, skin)).collect();
    let anchors: Vec<Anchors> = (0..frames)
        .map(|_| {
            let mut a = CANONICAL_ANCHORS;
            for p in a.iter_mut() {
                let q = pose.apply(*p);
                *p = (q.0 + rng.gen_range(-0.2..0.2), q.1 + rng.gen_range(-0.2..0.2));
            }
            a
        })
        .collect();

    // Harmonic "voice": pitch set by speaker, loudness by the mouth envelope.
    let f0 = 110.0 + 6.0 * speaker as f64 + rng.gen_range(-5.0..5.0);
    let n = frames * hop;
    let sr = sample_rate as f64;
    let mut phase = 0.0;
    let samples: Vec<f64> = (0..n)
        .map(|i| {
            let pos = (i as f64 + 0.5) / hop as f64 - 0.5;
            let k = pos.floor().clamp(0.0, (frames - 1) as f64) as usize;
            let k1 = (k + 1).min(frames - 1);
            let frac = (pos - k as f64).clamp(0.0, 1.0);
            let amp = envelope[k] * (1.0 - frac) + envelope[k1] * frac;
            let pitch = f0 * (1.0 + 0.05 * (2.0 * PI * i as f64 / sr * 3.0).sin());
            phase += 2.0 * PI * pitch / sr;
            let voiced: f64 = (1..=6)
                .filter(|h| (*h as f64) * pitch < sr / 2.0)
                .map(|h| (h as f64 * phase).sin() / h as f64)
                .sum();
            (0.35 * amp * voiced).clamp(-1.0, 1.0)
        })
        .collect();
    let audio = WaveformClip::new(samples, sample_rate)?;
    Ok(ToyClip { frames: frames_px, anchors, audio, sentence, envelope })
}

/// Writes a raw toy corpus in the standard on-disk layout.
pub fn write_toy_corpus(root: &Path, spec: &ToyCorpusSpec) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for &speaker in &spec.speakers {
        let dir = root.join(format!("s{speaker}"));
        for i in 0..spec.clips_per_speaker {
            let clip = toy_clip(&mut rng, speaker, spec.frames, spec.sample_rate)?;
            let stem = format!("clip{i:03}");
            write_frames(&dir.join(format!("{stem}.frames")), &clip.frames)?;
            write_anchors(&dir.join(format!("{stem}.anchors")), &clip.anchors)?;
            write_wav(&dir.join(format!("{stem}.wav")), &clip.audio)?;
            write_atomic(&dir.join(format!("{stem}.txt")), format!("{}\n", clip.sentence).as_bytes())?;
        }
    }
    Ok(())
}

/// Preprocessed in-memory toy samples, for tests that skip the disk.
pub fn toy_samples(count: usize, frames: usize, sample_rate: u32, seed: u64) -> Result<Vec<VideoSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let speaker = [1u8, 2, 4, 29][i % 4];
            let clip = toy_clip(&mut rng, speaker, frames, sample_rate)?;
            let video = preprocess_frames(&clip.frames, &clip.anchors, &PreprocessConfig::default())?;
            VideoSample::new(format!("s{speaker}/toy{i:03}"), speaker, video, clip.audio, clip.sentence)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_clip_is_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = toy_clip(&mut rng, 3, 20, 8000).unwrap();
        assert_eq!(c.frames.len(), 20);
        assert_eq!(c.audio.len(), 20 * 320);
        assert!(c.audio.samples.iter().any(|v| v.abs() > 0.05));
    }

    #[test]
    fn toy_samples_are_deterministic() {
        let a = toy_samples(2, 6, 8000, 9).unwrap();
        let b = toy_samples(2, 6, 8000, 9).unwrap();
        assert_eq!(a, b);
        // The mouth region actually changes with the envelope.
        let v = &a[0].video;
        let diff: f64 = v.frame(2).iter().zip(v.frame(0)).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1.0);
    }
}
