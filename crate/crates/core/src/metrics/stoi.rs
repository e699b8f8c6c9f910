//! Short-time objective intelligibility.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::resample;
use crate::error::{Error, Result};

const FS: u32 = 10_000;
const N_FRAME: usize = 256;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per intermediate-intelligibility segment (384 ms).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Hann window of `n` points without its zero end points.
fn inner_hann(n: usize) -> Vec<f64> {
    let m = n + 2;
    (1..=n).map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (m - 1) as f64).cos()).collect()
}

fn frame_starts(len: usize, win: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(win)).step_by(hop)
}

/// Drops frames more than `DYN_RANGE_DB` below the loudest reference frame, then overlap-adds.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = inner_hann(N_FRAME);
    let window = |s: &[f64], i: usize| -> Vec<f64> { (0..N_FRAME).map(|k| w[k] * s[i + k]).collect() };
    let starts: Vec<usize> = frame_starts(x.len(), N_FRAME, hop).collect();
    let xf: Vec<Vec<f64>> = starts.iter().map(|&i| window(x, i)).collect();
    let yf: Vec<Vec<f64>> = starts.iter().map(|&i| window(y, i)).collect();
    let energy: Vec<f64> =
        xf.iter().map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10()).collect();
    let max = energy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len()).filter(|&i| max - DYN_RANGE_DB - energy[i] < 0.0).collect();
    let ola = |frames: &[Vec<f64>]| {
        if keep.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (keep.len() - 1) * hop + N_FRAME];
        for (j, &i) in keep.iter().enumerate() {
            for (k, v) in frames[i].iter().enumerate() {
                out[j * hop + k] += v;
            }
        }
        out
    };
    (ola(&xf), ola(&yf))
}

/// Magnitude-squared STFT, `[frames][NFFT / 2 + 1]`.
fn power_stft(x: &[f64]) -> Vec<Vec<f64>> {
    let w = inner_hann(N_FRAME);
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    frame_starts(x.len(), N_FRAME, N_FRAME / 2)
        .map(|i| {
            let mut buf: Vec<Complex<f64>> =
                (0..NFFT).map(|k| Complex::new(if k < N_FRAME { w[k] * x[i + k] } else { 0.0 }, 0.0)).collect();
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// One-third-octave band edges as FFT bin ranges `[lo, hi)`.
fn third_octave_bins() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let f: Vec<f64> = (0..bins).map(|i| i as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (f[a] - target).powi(2).partial_cmp(&(f[b] - target).powi(2)).unwrap())
            .unwrap()
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes `[band][frame]`.
fn band_envelopes(spec: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands.iter().map(|&(lo, hi)| spec.iter().map(|frame| frame[lo..hi].iter().sum::<f64>().sqrt()).collect()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// STOI of `processed` against `reference`, both at `sample_rate`.
pub fn stoi(reference: &[f64], processed: &[f64], sample_rate: u32) -> Result<f64> {
    if reference.len() != processed.len() {
        return Err(Error::Metric(format!(
            "STOI needs equal-length signals, got {} and {}",
            reference.len(),
            processed.len()
        )));
    }
    let (x, y) = if sample_rate == FS {
        (reference.to_vec(), processed.to_vec())
    } else {
        (resample(reference, sample_rate, FS), resample(processed, sample_rate, FS))
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bins();
    let xt = band_envelopes(&power_stft(&x), &bands);
    let yt = band_envelopes(&power_stft(&y), &bands);
    let frames = xt[0].len();
    if frames < SEGMENT {
        return Err(Error::Metric(format!(
            "only {frames} frames remain after silence removal; STOI needs at least {SEGMENT} (384 ms)"
        )));
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - SEGMENT + 1;
    for m in SEGMENT..=frames {
        for band in 0..NUM_BANDS {
            let xs = &xt[band][m - SEGMENT..m];
            let ys = &yt[band][m - SEGMENT..m];
            let scale = norm(xs) / (norm(ys) + EPS);
            let yp: Vec<f64> = ys.iter().zip(xs).map(|(&yv, &xv)| (yv * scale).min(xv * clip)).collect();
            let ym = yp.iter().sum::<f64>() / SEGMENT as f64;
            let xm = xs.iter().sum::<f64>() / SEGMENT as f64;
            let yc: Vec<f64> = yp.iter().map(|v| v - ym).collect();
            let xc: Vec<f64> = xs.iter().map(|v| v - xm).collect();
            let (ny, nx) = (norm(&yc) + EPS, norm(&xc) + EPS);
            total += yc.iter().zip(&xc).map(|(a, b)| (a / ny) * (b / nx)).sum::<f64>();
        }
    }
    Ok(total / (segments * NUM_BANDS) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// Amplitude-modulated harmonic signal with pauses, a crude speech stand-in.
    pub(crate) fn speechlike(n: usize, sr: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = rng.gen_range(100.0..180.0);
        let rate = rng.gen_range(3.0..5.0);
        (0..n)
            .map(|i| {
                let t = i as f64 / sr;
                let env = 0.1 + 0.9 * (2.0 * PI * rate * t).sin().max(0.0).powi(2);
                let v: f64 = (1..12).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum();
                0.3 * env * v
            })
            .collect()
    }

    #[test]
    fn third_octave_bands_span_expected_range() {
        let b = third_octave_bins();
        assert_eq!(b.len(), 15);
        assert_eq!(b[0], (7, 9));
        assert!(b.windows(2).all(|w| w[0].1 <= w[1].1));
        assert!(b[14].1 as f64 * FS as f64 / NFFT as f64 > 4000.0);
    }

    #[test]
    fn identical_signals_score_one() {
        let x = speechlike(16000, 8000.0, 1);
        assert!((stoi(&x, &x, 8000).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn amplitude_scaling_is_invisible() {
        let x = speechlike(20000, 10000.0, 2);
        let y: Vec<f64> = x.iter().map(|v| v * 0.37).collect();
        assert!((stoi(&x, &y, 10000).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn noise_scores_low() {
        let x = speechlike(24000, 8000.0, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let s = stoi(&x, &n, 8000).unwrap();
        assert!(s < 0.2, "{s}");
    }

    #[test]
    fn short_input_is_an_error() {
        let x = speechlike(2000, 8000.0, 4);
        assert!(stoi(&x, &x, 8000).is_err());
        assert!(stoi(&x, &x[..1000], 8000).is_err());
    }
}
