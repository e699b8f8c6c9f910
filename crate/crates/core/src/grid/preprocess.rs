//! Face alignment, resize and mouth crop.
//!
//! Each raw frame is mapped onto a 128x96 canonical face canvas by the
//! similarity transform (rotation, uniform scale, translation) that best
//! fits its five anchor points to [`CANONICAL_ANCHORS`] in the least-squares
//! sense. The bottom half of the canvas (64x96, the mouth region) is kept and
//! pixel values are mapped from `[0, 255]` to `[-1, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::video::{VideoTensor, FRAME_HEIGHT, FRAME_WIDTH};
use crate::tensor::Tensor;

pub const ANCHOR_COUNT: usize = 5;
pub const CANVAS_HEIGHT: usize = 128;
pub const CANVAS_WIDTH: usize = 96;

/// Template anchor positions `(x, y)` on the 96-wide, 128-tall canvas:
/// outer and inner corner of the left eye, inner and outer corner of the
/// right eye, nose tip.
pub const CANONICAL_ANCHORS: [(f64, f64); ANCHOR_COUNT] =
    [(20.0, 44.0), (38.0, 44.0), (58.0, 44.0), (76.0, 44.0), (48.0, 72.0)];

/// Five `(x, y)` landmark positions in raw-frame pixel coordinates.
pub type Anchors = [(f64, f64); ANCHOR_COUNT];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub anchor_count: usize,
    /// Output channels, 1 (luma) or 3 (RGB).
    pub channels: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { anchor_count: ANCHOR_COUNT, channels: 1 }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchor_count != ANCHOR_COUNT {
            return Err(Error::Config(format!("anchor_count must be {ANCHOR_COUNT}, got {}", self.anchor_count)));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }
}

/// An 8-bit interleaved raw frame (1 = gray, 3 = RGB).
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl RawFrame {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::InvalidInput(format!("bad raw frame geometry {width}x{height}x{channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidInput(format!(
                "raw frame has {} bytes, expected {}",
                pixels.len(),
                width * height * channels
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    fn sample(&self, x: f64, y: f64, channel: usize) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (xc.floor() as usize, yc.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (xc - x0 as f64, yc - y0 as f64);
        let px = |xx: usize, yy: usize| self.pixels[(yy * self.width + xx) * self.channels + channel] as f64;
        let top = px(x0, y0) * (1.0 - fx) + px(x1, y0) * fx;
        let bottom = px(x0, y1) * (1.0 - fx) + px(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// `q = a * p + t` with `a` a complex number (scale and rotation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub a_re: f64,
    pub a_im: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Similarity {
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (self.a_re * x - self.a_im * y + self.tx, self.a_im * x + self.a_re * y + self.ty)
    }

    pub fn inverse(&self) -> Self {
        let n = self.a_re * self.a_re + self.a_im * self.a_im;
        let (re, im) = (self.a_re / n, -self.a_im / n);
        let (tx, ty) = (-(re * self.tx - im * self.ty), -(im * self.tx + re * self.ty));
        Self { a_re: re, a_im: im, tx, ty }
    }

    pub fn scale(&self) -> f64 {
        self.a_re.hypot(self.a_im)
    }

    pub fn rotation(&self) -> f64 {
        self.a_im.atan2(self.a_re)
    }
}

fn centroid(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    (points.iter().map(|p| p.0).sum::<f64>() / n, points.iter().map(|p| p.1).sum::<f64>() / n)
}

/// Least-squares similarity transform taking `src` onto `dst`.
///
/// Fails when `src` is coincident or collinear, where rotation is not determined.
pub fn fit_similarity(src: &[(f64, f64)], dst: &[(f64, f64)]) -> Result<Similarity> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(Error::Alignment(format!("need matching point sets, got {} and {}", src.len(), dst.len())));
    }
    if src.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Alignment("non-finite anchor coordinate".into()));
    }
    let (px, py) = centroid(src);
    let (qx, qy) = centroid(dst);
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in src {
        let (dx, dy) = (x - px, y - py);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let spread = sxx + syy;
    if spread < 1e-9 {
        return Err(Error::Alignment("anchor points coincide".into()));
    }
    // Eigenvalues of the 2x2 scatter matrix; a vanishing minor one means collinear points.
    let half_gap = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    let minor = spread / 2.0 - half_gap;
    let major = spread / 2.0 + half_gap;
    if minor <= 1e-6 * major {
        return Err(Error::Alignment("anchor points are collinear".into()));
    }
    let (mut num_re, mut num_im) = (0.0, 0.0);
    for (&(x, y), &(u, v)) in src.iter().zip(dst) {
        let (dx, dy) = (x - px, y - py);
        let (du, dv) = (u - qx, v - qy);
        // (du + i dv) * conj(dx + i dy)
        num_re += du * dx + dv * dy;
        num_im += dv * dx - du * dy;
    }
    let (a_re, a_im) = (num_re / spread, num_im / spread);
    Ok(Similarity { a_re, a_im, tx: qx - (a_re * px - a_im * py), ty: qy - (a_im * px + a_re * py) })
}

/// Aligns, resizes and crops a frame sequence into a `[T, C, 64, 96]` tensor.
pub fn preprocess_frames(frames: &[RawFrame], anchors: &[Anchors], config: &PreprocessConfig) -> Result<VideoTensor> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to preprocess".into()));
    }
    if frames.len() != anchors.len() {
        return Err(Error::InvalidInput(format!("{} frames but {} anchor sets", frames.len(), anchors.len())));
    }
    let c = config.channels;
    let per_frame = c * FRAME_HEIGHT * FRAME_WIDTH;
    let mut out = Vec::with_capacity(frames.len() * per_frame);
    let row_offset = CANVAS_HEIGHT - FRAME_HEIGHT;
    for (t, (frame, anchor)) in frames.iter().zip(anchors).enumerate() {
        let to_canvas = fit_similarity(anchor, &CANONICAL_ANCHORS).map_err(|e| match e {
            Error::Alignment(msg) => Error::Alignment(format!("frame {t}: {msg}")),
            other => other,
        })?;
        let to_raw = to_canvas.inverse();
        for ch in 0..c {
            for r in 0..FRAME_HEIGHT {
                for col in 0..FRAME_WIDTH {
                    let (x, y) = to_raw.apply((col as f64, (r + row_offset) as f64));
                    let v = match (frame.channels, c) {
                        (1, _) => frame.sample(x, y, 0),
                        (3, 3) => frame.sample(x, y, ch),
                        _ => 0.299 * frame.sample(x, y, 0) + 0.587 * frame.sample(x, y, 1) + 0.114 * frame.sample(x, y, 2),
                    };
                    out.push(v / 127.5 - 1.0);
                }
            }
        }
    }
    VideoTensor::new(Tensor::new([frames.len(), c, FRAME_HEIGHT, FRAME_WIDTH], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas_frame(f: impl Fn(usize, usize) -> u8) -> RawFrame {
        let mut px = Vec::with_capacity(CANVAS_WIDTH * CANVAS_HEIGHT);
        for y in 0..CANVAS_HEIGHT {
            for x in 0..CANVAS_WIDTH {
                px.push(f(x, y));
            }
        }
        RawFrame::new(CANVAS_WIDTH, CANVAS_HEIGHT, 1, px).unwrap()
    }

    #[test]
    fn seventy_five_frames_give_expected_shape() {
        let frames = vec![canvas_frame(|x, y| ((x + y) % 256) as u8); 75];
        let anchors = vec![CANONICAL_ANCHORS; 75];
        let v = preprocess_frames(&frames, &anchors, &PreprocessConfig::default()).unwrap();
        assert_eq!(v.tensor().shape(), &[75, 1, 64, 96]);
    }

    #[test]
    fn canonical_pose_is_identity() {
        let t = fit_similarity(&CANONICAL_ANCHORS, &CANONICAL_ANCHORS).unwrap();
        assert!((t.a_re - 1.0).abs() < 1e-12 && t.a_im.abs() < 1e-12);
        assert!(t.tx.abs() < 1e-9 && t.ty.abs() < 1e-9);
        let frame = canvas_frame(|x, y| ((x * 7 + y * 3) % 256) as u8);
        let v = preprocess_frames(&[frame.clone()], &[CANONICAL_ANCHORS], &PreprocessConfig::default()).unwrap();
        for r in 0..FRAME_HEIGHT {
            for c in 0..FRAME_WIDTH {
                let want = frame.pixels[(r + 64) * CANVAS_WIDTH + c] as f64 / 127.5 - 1.0;
                assert!((v.frame(0)[r * FRAME_WIDTH + c] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_frames_stay_constant() {
        let frame = RawFrame::new(200, 150, 3, vec![51; 200 * 150 * 3]).unwrap();
        let anchors: Anchors = [(60.0, 50.0), (85.0, 52.0), (115.0, 53.0), (140.0, 55.0), (100.0, 90.0)];
        let v = preprocess_frames(&[frame], &[anchors], &PreprocessConfig::default()).unwrap();
        let want = 51.0 / 127.5 - 1.0;
        assert!(v.tensor().data().iter().all(|&x| (x - want).abs() < 1e-12));
    }

    #[test]
    fn recovers_known_similarity() {
        let truth = Similarity { a_re: 0.8 * 0.3f64.cos(), a_im: 0.8 * 0.3f64.sin(), tx: 12.0, ty: -7.0 };
        let src: Vec<(f64, f64)> = CANONICAL_ANCHORS.iter().map(|&p| truth.inverse().apply(p)).collect();
        let fit = fit_similarity(&src, &CANONICAL_ANCHORS).unwrap();
        assert!((fit.scale() - 0.8).abs() < 1e-9);
        assert!((fit.rotation() - 0.3).abs() < 1e-9);
        let back = fit.inverse().apply(fit.apply((3.0, 4.0)));
        assert!((back.0 - 3.0).abs() < 1e-9 && (back.1 - 4.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_anchors_are_rejected() {
        let coincident = [(10.0, 10.0); 5];
        let collinear = [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)];
        let frame = canvas_frame(|_, _| 0);
        for bad in [coincident, collinear] {
            let err = preprocess_frames(&[frame.clone()], &[bad], &PreprocessConfig::default()).unwrap_err();
            assert!(matches!(err, Error::Alignment(_)), "{err}");
        }
    }

    #[test]
    fn preprocessing_is_deterministic() {
        let frame = RawFrame::new(120, 140, 1, (0..120 * 140).map(|i| (i * 31 % 251) as u8).collect()).unwrap();
        let anchors: Anchors = [(30.0, 50.0), (50.0, 51.0), (72.0, 52.0), (92.0, 53.0), (61.0, 80.0)];
        let cfg = PreprocessConfig::default();
        let a = preprocess_frames(&[frame.clone()], &[anchors], &cfg).unwrap();
        let b = preprocess_frames(&[frame], &[anchors], &cfg).unwrap();
        assert!(a.tensor().data().iter().zip(b.tensor().data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
