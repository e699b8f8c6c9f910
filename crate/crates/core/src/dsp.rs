//! Signal-processing helpers shared by the speech encoder and the metrics.

use std::f64::consts::PI;

/// Periodic-free symmetric Hann window of `n` points (`0.5 - 0.5 cos(2 pi k / (n - 1))`).
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos()).collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `[bands, n_fft / 2 + 1]` row-major, spanning 0 Hz to Nyquist.
pub fn mel_filterbank(bands: usize, n_fft: usize, sample_rate: u32) -> Vec<f64> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..bands + 2).map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64)).collect();
    let mut fb = vec![0.0; bands * bins];
    for b in 0..bands {
        let (left, centre, right) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f >= left && f <= centre {
                (f - left) / (centre - left)
            } else if f > centre && f <= right {
                (right - f) / (right - centre)
            } else {
                0.0
            };
            fb[b * bins + k] = w.max(0.0);
        }
    }
    fb
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Band-limited resampling by windowed-sinc interpolation (Hann-windowed, 16 zero crossings).
///
/// The anti-aliasing cutoff sits at the lower of the two Nyquist frequencies.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    const ZEROS: f64 = 16.0;
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0);
    let half_width = ZEROS / cutoff;
    let out_len = (x.len() as f64 * ratio).round() as usize;
    (0..out_len)
        .map(|m| {
            let t = m as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
            let mut acc = 0.0;
            for (k, &xk) in x.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += xk * cutoff * sinc(cutoff * d) * window;
            }
            acc
        })
        .collect()
}

/// Orthonormal DCT-II of `x`, first `n_out` coefficients, by direct summation.
pub fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let s: f64 = x.iter().enumerate().map(|(i, v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos()).sum();
            s * if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() }
        })
        .collect()
}
