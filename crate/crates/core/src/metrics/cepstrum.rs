//! Mel-cepstral analysis and mel-cepstral distortion.

use std::f64::consts::LN_10;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{dct2, hann, mel_filterbank};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CepstrumConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub mel_bands: usize,
    /// Coefficients kept, starting at c1.
    pub coefficients: usize,
}

impl Default for CepstrumConfig {
    fn default() -> Self {
        Self { window_ms: 25.0, hop_ms: 10.0, mel_bands: 40, coefficients: 13 }
    }
}

/// Floor added to mel energies before the logarithm.
pub const ENERGY_FLOOR: f64 = 1e-10;

impl CepstrumConfig {
    /// `(window, hop)` in samples.
    pub fn framing(&self, sample_rate: u32) -> (usize, usize) {
        let win = (self.window_ms * sample_rate as f64 / 1000.0).round() as usize;
        let hop = (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize;
        (win, hop.max(1))
    }

    pub fn frame_count(&self, len: usize, sample_rate: u32) -> usize {
        let (win, hop) = self.framing(sample_rate);
        if len < win {
            0
        } else {
            (len - win) / hop + 1
        }
    }
}

/// Mel cepstra `c1..c{n}` per frame, as a `[frames, n]` tensor.
pub fn mel_cepstrum(x: &[f64], sample_rate: u32, config: &CepstrumConfig) -> Result<Tensor> {
    if sample_rate < 8000 {
        return Err(Error::Metric(format!("mel cepstrum needs at least 8 kHz audio, got {sample_rate} Hz")));
    }
    if config.coefficients + 1 > config.mel_bands {
        return Err(Error::Metric("more cepstral coefficients requested than mel bands".into()));
    }
    let (win, hop) = config.framing(sample_rate);
    let frames = config.frame_count(x.len(), sample_rate);
    if frames == 0 {
        return Err(Error::Metric(format!("clip of {} samples is shorter than one {win}-sample window", x.len())));
    }
    let n_fft = win.next_power_of_two();
    let bins = n_fft / 2 + 1;
    let window = hann(win);
    let fb = mel_filterbank(config.mel_bands, n_fft, sample_rate);
    let fft = FftPlanner::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames * config.coefficients);
    for f in 0..frames {
        for (k, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(if k < win { x[f * hop + k] * window[k] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let log_mel: Vec<f64> = (0..config.mel_bands)
            .map(|b| {
                let e: f64 = (0..bins).map(|k| fb[b * bins + k] * buf[k].norm_sqr()).sum();
                (e + ENERGY_FLOOR).ln()
            })
            .collect();
        out.extend_from_slice(&dct2(&log_mel, config.coefficients + 1)[1..]);
    }
    Ok(Tensor::new([frames, config.coefficients], out))
}

/// `(10 / ln 10) * sqrt(2 * sum_d diff_d^2)`, averaged over frames.
///
/// Frame counts may differ by one; the longer sequence is trimmed.
pub fn mcd_from_cepstra(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1] {
        return Err(Error::Metric(format!("cepstra shapes {:?} and {:?} are incompatible", a.shape(), b.shape())));
    }
    let (fa, fb) = (a.shape()[0], b.shape()[0]);
    if fa.abs_diff(fb) > 1 {
        return Err(Error::Metric(format!("frame counts {fa} and {fb} differ by more than one")));
    }
    let frames = fa.min(fb);
    if frames == 0 {
        return Err(Error::Metric("no frames to compare".into()));
    }
    let d = a.shape()[1];
    let k = 10.0 / LN_10;
    let total: f64 = (0..frames)
        .map(|f| {
            let sq: f64 = (0..d).map(|j| (a.data()[f * d + j] - b.data()[f * d + j]).powi(2)).sum();
            k * (2.0 * sq).sqrt()
        })
        .sum();
    Ok(total / frames as f64)
}

/// Mel-cepstral distortion in dB between two time-aligned waveforms.
pub fn mcd(reference: &[f64], generated: &[f64], sample_rate: u32, config: &CepstrumConfig) -> Result<f64> {
    let a = mel_cepstrum(reference, sample_rate, config)?;
    let b = mel_cepstrum(generated, sample_rate, config)?;
    mcd_from_cepstra(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn one_second_gives_98_frames() {
        let c = CepstrumConfig::default();
        assert_eq!(c.frame_count(8000, 8000), 98);
        assert_eq!(c.frame_count(16000, 16000), 98);
        assert_eq!(mel_cepstrum(&vec![0.0; 8000], 8000, &c).unwrap().shape(), &[98, 13]);
    }

    #[test]
    fn silence_gives_constant_cepstra() {
        let cep = mel_cepstrum(&vec![0.0; 4000], 8000, &CepstrumConfig::default()).unwrap();
        let first = cep.data()[..13].to_vec();
        for row in cep.data().chunks(13) {
            assert_eq!(row, first.as_slice());
        }
    }

    #[test]
    fn single_coefficient_unit_difference() {
        let a = Tensor::new([1, 13], vec![0.0; 13]);
        let mut bv = vec![0.0; 13];
        bv[4] = 1.0;
        let d = mcd_from_cepstra(&a, &Tensor::new([1, 13], bv)).unwrap();
        assert!((d - 10.0 / LN_10 * 2f64.sqrt()).abs() < 1e-12);
        assert!((d - 6.1421).abs() < 5e-4);
    }

    #[test]
    fn mcd_is_reflexive_symmetric_and_rejects_misaligned_input() {
        let c = CepstrumConfig::default();
        let x: Vec<f64> = (0..4000).map(|i| 0.3 * (2.0 * PI * 300.0 * i as f64 / 8000.0).sin()).collect();
        let y: Vec<f64> = (0..4000).map(|i| 0.2 * (2.0 * PI * 700.0 * i as f64 / 8000.0).sin()).collect();
        assert_eq!(mcd(&x, &x, 8000, &c).unwrap(), 0.0);
        assert_eq!(mcd(&x, &y, 8000, &c).unwrap(), mcd(&y, &x, 8000, &c).unwrap());
        assert!(mcd(&x, &y, 8000, &c).unwrap() > 0.0);
        assert!(mcd(&x, &y[..3000], 8000, &c).is_err());
        assert!(mcd(&x[..100], &x[..100], 8000, &c).is_err());
    }
}
