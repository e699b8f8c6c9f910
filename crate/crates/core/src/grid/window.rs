use crate::error::{Error, Result};
use crate::grid::video::VideoTensor;
use crate::tensor::Tensor;

/// Frame indices of the `n`-frame window centred on each of `frames` frames,
/// clamped at the ends (replicate padding).
pub fn window_indices(frames: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    if n % 2 == 0 {
        return Err(Error::InvalidInput(format!("window length {n} must be odd")));
    }
    let half = (n / 2) as isize;
    Ok((0..frames as isize)
        .map(|t| (t - half..=t + half).map(|i| i.clamp(0, frames as isize - 1) as usize).collect())
        .collect())
}

/// One window per frame, laid out for 3-D convolution as `[T, C, N, H, W]`.
pub fn sliding_windows(video: &VideoTensor, n: usize) -> Result<Tensor> {
    let windows = window_indices(video.frames(), n)?;
    let [c, h, w] = video.frame_shape();
    let plane = h * w;
    let mut out = Vec::with_capacity(windows.len() * c * n * plane);
    for idx in &windows {
        for ch in 0..c {
            for &f in idx {
                out.extend_from_slice(&video.frame(f)[ch * plane..(ch + 1) * plane]);
            }
        }
    }
    Ok(Tensor::new([windows.len(), c, n, h, w], out))
}
