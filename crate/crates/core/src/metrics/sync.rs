//! Audio-visual offset by envelope correlation.
//!
//! Mouth motion (mean absolute inter-frame difference) is correlated with the
//! per-frame audio RMS at integer lags; the best lag is the offset and the
//! margin of the peak over the median correlation is the confidence.

use crate::error::{Error, Result};
use crate::grid::video::{VideoTensor, WaveformClip, FPS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AvSync {
    /// Positive when the audio lags the video.
    pub offset_frames: i32,
    pub confidence: f64,
}

/// Mean absolute difference to the previous frame, for frames `1..T`.
pub fn motion_energy(video: &VideoTensor) -> Vec<f64> {
    (1..video.frames())
        .map(|t| {
            let (a, b) = (video.frame(t), video.frame(t - 1));
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
        })
        .collect()
}

/// RMS of each `hop`-sample frame.
pub fn frame_rms(samples: &[f64], hop: usize, frames: usize) -> Vec<f64> {
    (0..frames)
        .map(|t| {
            let s = &samples[(t * hop).min(samples.len())..((t + 1) * hop).min(samples.len())];
            if s.is_empty() {
                0.0
            } else {
                (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
            }
        })
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut num = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    let den = (va * vb).sqrt();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Correlation at each lag in `-range..=range`.
pub fn correlation_curve(motion: &[f64], audio_env: &[f64], range: usize) -> Vec<f64> {
    let r = range as i64;
    (-r..=r)
        .map(|k| {
            // motion[i] belongs to video frame i + 1.
            let pairs: Vec<(f64, f64)> = motion
                .iter()
                .enumerate()
                .filter_map(|(i, &m)| {
                    let j = i as i64 + 1 + k;
                    (j >= 0 && (j as usize) < audio_env.len()).then(|| (m, audio_env[j as usize]))
                })
                .collect();
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if a.len() < 2 {
                0.0
            } else {
                pearson(&a, &b)
            }
        })
        .collect()
}

pub fn av_offset(video: &VideoTensor, audio: &WaveformClip, search_range: usize) -> Result<AvSync> {
    let t = video.frames();
    if t < 2 * search_range + 3 {
        return Err(Error::Metric(format!(
            "{t} frames are too few for an offset search of +/-{search_range} frames"
        )));
    }
    if audio.sample_rate % FPS != 0 {
        return Err(Error::Metric(format!("sample rate {} is not a multiple of {FPS} fps", audio.sample_rate)));
    }
    let hop = (audio.sample_rate / FPS) as usize;
    let audio_frames = audio.len() / hop;
    if audio_frames.abs_diff(t) > search_range {
        return Err(Error::Metric(format!("audio covers {audio_frames} frames, video has {t}")));
    }
    let curve = correlation_curve(&motion_energy(video), &frame_rms(&audio.samples, hop, audio_frames), search_range);
    let (best, peak) = curve
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
    let mut sorted = curve.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    Ok(AvSync { offset_frames: best as i32 - search_range as i32, confidence: peak - median })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Video whose motion energy is `env[t]` exactly, and audio whose frame RMS is `env` delayed by `shift`.
    pub(crate) fn shifted_pair(env: &[f64], shift: i32, hop: usize) -> (VideoTensor, WaveformClip) {
        let t = env.len();
        let mut level = 0.0f64;
        let mut data = Vec::with_capacity(t * 16);
        for (i, &e) in env.iter().enumerate() {
            if i > 0 {
                level = if level + e <= 1.0 { level + e } else { level - e };
            }
            data.extend(std::iter::repeat(level).take(16));
        }
        let video = VideoTensor::new(Tensor::new([t, 1, 4, 4], data)).unwrap();
        let mut samples = Vec::with_capacity(t * hop);
        for i in 0..t as i32 {
            let src = (i - shift).clamp(0, t as i32 - 1) as usize;
            let a = env[src];
            samples.extend((0..hop).map(|k| if k % 2 == 0 { a } else { -a }));
        }
        (video, WaveformClip::new(samples, hop as u32 * FPS).unwrap())
    }

    #[test]
    fn recovers_synthetic_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let env: Vec<f64> = (0..60).map(|_| rng.gen_range(0.05..0.5)).collect();
        for shift in -5..=5 {
            let (v, a) = shifted_pair(&env, shift, 40);
            assert_eq!(av_offset(&v, &a, 5).unwrap().offset_frames, shift);
        }
    }

    #[test]
    fn noise_lowers_confidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let env: Vec<f64> = (0..60).map(|_| rng.gen_range(0.05..0.5)).collect();
        let (v, a) = shifted_pair(&env, 2, 40);
        let good = av_offset(&v, &a, 5).unwrap();
        let noise: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let bad = av_offset(&v, &WaveformClip::new(noise, a.sample_rate).unwrap(), 5).unwrap();
        assert!(bad.confidence < good.confidence);
    }

    #[test]
    fn too_short_is_an_error() {
        let env = vec![0.1; 8];
        let (v, a) = shifted_pair(&env, 0, 40);
        assert!(av_offset(&v, &a, 5).is_err());
    }
}
