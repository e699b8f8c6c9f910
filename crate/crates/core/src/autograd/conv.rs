//! Strided, zero-padded N-d convolution (N = 1, 2 or 3) via im2col + GEMM.
//!
//! The three kernels here are the three partial contractions of the trilinear
//! form `<gy, conv(x, w)>`, which is what makes the convolution family closed
//! under differentiation:
//!
//! * [`conv_forward`]      `(x, w)  -> y`
//! * [`conv_input_grad`]   `(gy, w) -> x-shaped` (also the transposed convolution)
//! * [`conv_weight_grad`]  `(x, gy) -> w-shaped`

use crate::tensor::{gemm, Tensor};

/// Geometry of a convolution from `in_size` to `out_size` spatial extents.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub rank: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub in_size: [usize; 3],
    pub out_size: [usize; 3],
}

fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    assert!((1..=3).contains(&v.len()), "convolutions support 1 to 3 spatial dims");
    let mut out = [fill; 3];
    let off = 3 - v.len();
    out[off..].copy_from_slice(v);
    out
}

impl ConvGeom {
    /// Geometry of a forward convolution; `None` when the kernel does not fit.
    pub fn new(in_size: &[usize], kernel: &[usize], stride: &[usize], padding: &[usize]) -> Option<Self> {
        let rank = in_size.len();
        if kernel.len() != rank || stride.len() != rank || padding.len() != rank {
            return None;
        }
        let in3 = pad3(in_size, 1);
        let k3 = pad3(kernel, 1);
        let s3 = pad3(stride, 1);
        let p3 = pad3(padding, 0);
        let mut out = [1; 3];
        for d in 0..3 {
            if s3[d] == 0 || in3[d] + 2 * p3[d] < k3[d] {
                return None;
            }
            out[d] = (in3[d] + 2 * p3[d] - k3[d]) / s3[d] + 1;
        }
        Some(Self { rank, kernel: k3, stride: s3, padding: p3, in_size: in3, out_size: out })
    }

    /// Geometry of the convolution whose input-gradient is a transposed
    /// convolution taking `input` to `(input - 1) * stride - 2 * padding + kernel`.
    pub fn transposed(input: &[usize], kernel: &[usize], stride: &[usize], padding: &[usize]) -> Option<Self> {
        let rank = input.len();
        if kernel.len() != rank || stride.len() != rank || padding.len() != rank {
            return None;
        }
        let mut full = Vec::with_capacity(rank);
        for d in 0..rank {
            let len = (input[d].checked_sub(1)? * stride[d] + kernel[d]).checked_sub(2 * padding[d])?;
            full.push(len);
        }
        let g = Self::new(&full, kernel, stride, padding)?;
        (g.out_dims() == input).then_some(g)
    }

    pub fn in_dims(&self) -> &[usize] {
        &self.in_size[3 - self.rank..]
    }

    pub fn out_dims(&self) -> &[usize] {
        &self.out_size[3 - self.rank..]
    }

    pub fn kernel_dims(&self) -> &[usize] {
        &self.kernel[3 - self.rank..]
    }

    fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    fn in_volume(&self) -> usize {
        self.in_size.iter().product()
    }

    fn out_volume(&self) -> usize {
        self.out_size.iter().product()
    }
}

/// Unfolds one sample `[cin, in...]` into `[cin * kvol, out_vol]`.
fn im2col(x: &[f64], cin: usize, g: &ConvGeom, col: &mut [f64]) {
    let [id, ih, iw] = g.in_size;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.out_size;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..cin {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for zo in 0..od {
                        let z = (zo * sd + a) as isize - pd as isize;
                        if z < 0 || z >= id as isize {
                            dst[q..q + oh * ow].fill(0.0);
                            q += oh * ow;
                            continue;
                        }
                        for yo in 0..oh {
                            let y = (yo * sh + b) as isize - ph as isize;
                            if y < 0 || y >= ih as isize {
                                dst[q..q + ow].fill(0.0);
                                q += ow;
                                continue;
                            }
                            let base = (z as usize * ih + y as usize) * iw;
                            for xo in 0..ow {
                                let xi = (xo * sw + e) as isize - pw as isize;
                                dst[q] = if xi < 0 || xi >= iw as isize { 0.0 } else { xc[base + xi as usize] };
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds `col` back into `x`.
fn col2im(col: &[f64], cin: usize, g: &ConvGeom, x: &mut [f64]) {
    let [id, ih, iw] = g.in_size;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = g.out_size;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let p = od * oh * ow;
    let mut row = 0;
    for c in 0..cin {
        let xc = &mut x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut q = 0;
                    for zo in 0..od {
                        let z = (zo * sd + a) as isize - pd as isize;
                        if z < 0 || z >= id as isize {
                            q += oh * ow;
                            continue;
                        }
                        for yo in 0..oh {
                            let y = (yo * sh + b) as isize - ph as isize;
                            if y < 0 || y >= ih as isize {
                                q += ow;
                                continue;
                            }
                            let base = (z as usize * ih + y as usize) * iw;
                            for xo in 0..ow {
                                let xi = (xo * sw + e) as isize - pw as isize;
                                if xi >= 0 && xi < iw as isize {
                                    xc[base + xi as usize] += src[q];
                                }
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn batch_and_channels(t: &Tensor, rank: usize) -> (usize, usize) {
    assert_eq!(t.rank(), rank + 2, "expected [N, C, spatial x{rank}], got {:?}", t.shape());
    (t.shape()[0], t.shape()[1])
}

/// `y[n, o, p] = sum_{c, k} w[o, c, k] * x[n, c, p * s + k - pad]`.
pub fn conv_forward(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let (n, cin) = batch_and_channels(x, g.rank);
    assert_eq!(&x.shape()[2..], g.in_dims(), "conv input extent mismatch");
    let cout = w.shape()[0];
    assert_eq!(w.shape()[1], cin, "conv weight/input channel mismatch");
    let kdim = cin * g.kernel_volume();
    let (ivol, ovol) = (g.in_volume(), g.out_volume());
    let mut col = vec![0.0; kdim * ovol];
    let mut out = vec![0.0; n * cout * ovol];
    for s in 0..n {
        im2col(&x.data()[s * cin * ivol..(s + 1) * cin * ivol], cin, g, &mut col);
        gemm(cout, kdim, ovol, w.data(), false, &col, false, &mut out[s * cout * ovol..(s + 1) * cout * ovol], false);
    }
    let mut shape = vec![n, cout];
    shape.extend_from_slice(g.out_dims());
    Tensor::new(shape, out)
}

/// Gradient of `<gy, conv(x, w)>` with respect to `x`.
pub fn conv_input_grad(gy: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
    let (n, cout) = batch_and_channels(gy, g.rank);
    assert_eq!(&gy.shape()[2..], g.out_dims(), "conv output extent mismatch");
    assert_eq!(w.shape()[0], cout, "conv weight/output channel mismatch");
    let cin = w.shape()[1];
    let kdim = cin * g.kernel_volume();
    let (ivol, ovol) = (g.in_volume(), g.out_volume());
    let mut col = vec![0.0; kdim * ovol];
    let mut out = vec![0.0; n * cin * ivol];
    for s in 0..n {
        gemm(kdim, cout, ovol, w.data(), true, &gy.data()[s * cout * ovol..(s + 1) * cout * ovol], false, &mut col, false);
        col2im(&col, cin, g, &mut out[s * cin * ivol..(s + 1) * cin * ivol]);
    }
    let mut shape = vec![n, cin];
    shape.extend_from_slice(g.in_dims());
    Tensor::new(shape, out)
}

/// Gradient of `<gy, conv(x, w)>` with respect to `w`.
pub fn conv_weight_grad(x: &Tensor, gy: &Tensor, g: &ConvGeom) -> Tensor {
    let (n, cin) = batch_and_channels(x, g.rank);
    let (n2, cout) = batch_and_channels(gy, g.rank);
    assert_eq!(n, n2, "conv batch mismatch");
    let kdim = cin * g.kernel_volume();
    let (ivol, ovol) = (g.in_volume(), g.out_volume());
    let mut col = vec![0.0; kdim * ovol];
    let mut out = vec![0.0; cout * kdim];
    for s in 0..n {
        im2col(&x.data()[s * cin * ivol..(s + 1) * cin * ivol], cin, g, &mut col);
        gemm(cout, ovol, kdim, &gy.data()[s * cout * ovol..(s + 1) * cout * ovol], false, &col, true, &mut out, s > 0);
    }
    let mut shape = vec![cout, cin];
    shape.extend_from_slice(g.kernel_dims());
    Tensor::new(shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct-summation convolution, independent of im2col.
    fn conv_oracle(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Tensor {
        let (n, cin) = (x.shape()[0], x.shape()[1]);
        let cout = w.shape()[0];
        let [id, ih, iw] = g.in_size;
        let [od, oh, ow] = g.out_size;
        let [kd, kh, kw] = g.kernel;
        let mut out = vec![0.0; n * cout * od * oh * ow];
        for s in 0..n {
            for o in 0..cout {
                for zo in 0..od {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let mut acc = 0.0;
                            for c in 0..cin {
                                for a in 0..kd {
                                    for b in 0..kh {
                                        for e in 0..kw {
                                            let z = (zo * g.stride[0] + a) as isize - g.padding[0] as isize;
                                            let y = (yo * g.stride[1] + b) as isize - g.padding[1] as isize;
                                            let xx = (xo * g.stride[2] + e) as isize - g.padding[2] as isize;
                                            if z < 0 || y < 0 || xx < 0 || z >= id as isize || y >= ih as isize || xx >= iw as isize {
                                                continue;
                                            }
                                            let xi = (((s * cin + c) * id + z as usize) * ih + y as usize) * iw + xx as usize;
                                            let wi = (((o * cin + c) * kd + a) * kh + b) * kw + e;
                                            acc += x.data()[xi] * w.data()[wi];
                                        }
                                    }
                                }
                            }
                            out[(((s * cout + o) * od + zo) * oh + yo) * ow + xo] = acc;
                        }
                    }
                }
            }
        }
        let mut shape = vec![n, cout];
        shape.extend_from_slice(g.out_dims());
        Tensor::new(shape, out)
    }

    fn pseudo(shape: &[usize], seed: f64) -> Tensor {
        Tensor::from_fn(shape.to_vec(), |i| ((i as f64 + 1.0) * seed).sin())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn forward_matches_direct_summation_3d() {
        let g = ConvGeom::new(&[5, 6, 7], &[3, 3, 2], &[1, 2, 2], &[1, 1, 0]).unwrap();
        let x = pseudo(&[2, 3, 5, 6, 7], 0.31);
        let w = pseudo(&[4, 3, 3, 3, 2], 0.77);
        let y = conv_forward(&x, &w, &g);
        let want = conv_oracle(&x, &w, &g);
        assert_eq!(y.shape(), want.shape());
        for (a, b) in y.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn gradients_are_adjoint_to_forward_1d() {
        // <gy, conv(x, w)> == <conv_input_grad(gy, w), x> == <conv_weight_grad(x, gy), w>
        let g = ConvGeom::new(&[37], &[9], &[4], &[4]).unwrap();
        let x = pseudo(&[3, 2, 37], 0.13);
        let w = pseudo(&[5, 2, 9], 0.41);
        let y = conv_forward(&x, &w, &g);
        let gy = pseudo(y.shape(), 0.59);
        let lhs = dot(&gy, &y);
        let via_x = dot(&conv_input_grad(&gy, &w, &g), &x);
        let via_w = dot(&conv_weight_grad(&x, &gy, &g), &w);
        assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0));
        assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn transposed_geometry_upsamples_exactly() {
        for s in [2usize, 4] {
            let g = ConvGeom::transposed(&[5], &[2 * s], &[s], &[s / 2]).unwrap();
            assert_eq!(g.in_dims(), &[5 * s]);
            assert_eq!(g.out_dims(), &[5]);
        }
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        assert!(ConvGeom::new(&[2], &[9], &[4], &[0]).is_none());
        let g = ConvGeom::new(&[1], &[9], &[4], &[4]).unwrap();
        assert_eq!(g.out_dims(), &[1]);
    }
}
