use rand::Rng;

use super::{fan_in_uniform, Bound, ForwardCtx, Mode, ParamId, TensorSet};
use crate::autograd::{ConvGeom, Var};
use crate::tensor::Tensor;

/// `y = x W^T + b` on `[N, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(params: &mut TensorSet, rng: &mut impl Rng, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = params.add(format!("{name}.weight"), fan_in_uniform(rng, &[out_dim, in_dim], in_dim));
        let bias = params.add(format!("{name}.bias"), fan_in_uniform(rng, &[out_dim], in_dim));
        Self { weight, bias, in_dim, out_dim }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        x.matmul_t(p.get(self.weight), false, true).add_channel(p.get(self.bias))
    }
}

/// Strided convolution over 1 to 3 spatial axes.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut TensorSet,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: &[usize],
        stride: &[usize],
        padding: &[usize],
    ) -> Self {
        let fan_in = cin * kernel.iter().product::<usize>();
        let mut shape = vec![cout, cin];
        shape.extend_from_slice(kernel);
        let weight = params.add(format!("{name}.weight"), fan_in_uniform(rng, &shape, fan_in));
        let bias = params.add(format!("{name}.bias"), fan_in_uniform(rng, &[cout], fan_in));
        Self { weight, bias, kernel: kernel.to_vec(), stride: stride.to_vec(), padding: padding.to_vec() }
    }

    pub fn geometry(&self, in_dims: &[usize]) -> Option<ConvGeom> {
        ConvGeom::new(in_dims, &self.kernel, &self.stride, &self.padding)
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let shape = x.shape();
        let geom = self
            .geometry(&shape[2..])
            .unwrap_or_else(|| panic!("kernel {:?} does not fit input {:?}", self.kernel, shape));
        x.conv(p.get(self.weight), &geom).add_channel(p.get(self.bias))
    }
}

/// Transposed 1-D convolution upsampling by `stride` (weights `[cin, cout, k]`).
#[derive(Clone, Debug)]
pub struct ConvTranspose {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut TensorSet,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = cin * kernel / stride.max(1);
        let weight = params.add(format!("{name}.weight"), fan_in_uniform(rng, &[cin, cout, kernel], fan_in));
        let bias = params.add(format!("{name}.bias"), fan_in_uniform(rng, &[cout], fan_in));
        Self { weight, bias, kernel, stride, padding }
    }

    pub fn output_len(&self, len: usize) -> usize {
        ((len - 1) * self.stride + self.kernel).saturating_sub(2 * self.padding)
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, x: Var<'g>) -> Var<'g> {
        let len = x.shape()[2];
        let geom = ConvGeom::transposed(&[len], &[self.kernel], &[self.stride], &[self.padding])
            .unwrap_or_else(|| panic!("invalid transposed convolution for length {len}"));
        x.conv_transpose(p.get(self.weight), &geom).add_channel(p.get(self.bias))
    }
}

/// Batch normalization over axis 1 of `[N, C, ...]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(params: &mut TensorSet, buffers: &mut TensorSet, name: &str, channels: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Tensor::full([channels], 1.0)),
            beta: params.add(format!("{name}.beta"), Tensor::zeros([channels])),
            running_mean: buffers.add(format!("{name}.running_mean"), Tensor::zeros([channels])),
            running_var: buffers.add(format!("{name}.running_var"), Tensor::full([channels], 1.0)),
            eps: 1e-5,
        }
    }

    pub fn forward<'g>(&self, p: &Bound<'g>, buffers: &TensorSet, ctx: &mut ForwardCtx, x: Var<'g>) -> Var<'g> {
        let g = x.graph();
        let gamma = p.get(self.gamma);
        let beta = p.get(self.beta);
        match ctx.mode {
            Mode::Train => {
                let shape = x.shape();
                let n = (x.value().len() / shape[1]) as f64;
                let mean = x.channel_sum().scale(1.0 / n);
                let centered = x - mean.broadcast_channel(shape.clone());
                let var = centered.square().channel_sum().scale(1.0 / n);
                let inv_std = var.add_scalar(self.eps).powf(-0.5);
                let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                ctx.record_stats(
                    self.running_mean,
                    self.running_var,
                    mean.value().as_ref().clone(),
                    var.value().map(|v| v * unbiased),
                );
                centered.mul_channel(inv_std * gamma).add_channel(beta)
            }
            Mode::Eval => {
                let rm = buffers.get(self.running_mean);
                let inv_std = buffers.get(self.running_var).map(|v| 1.0 / (v + self.eps).sqrt());
                let scale = gamma * g.constant(inv_std.clone());
                let shift = beta - gamma * g.constant(rm.zip_map(&inv_std, |m, s| m * s));
                x.mul_channel(scale).add_channel(shift)
            }
        }
    }
}

/// Single-layer unidirectional gated recurrent unit (gate order r, z, n).
#[derive(Clone, Debug)]
pub struct Gru {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(params: &mut TensorSet, rng: &mut impl Rng, name: &str, input: usize, hidden: usize) -> Self {
        Self {
            w_ih: params.add(format!("{name}.w_ih"), fan_in_uniform(rng, &[3 * hidden, input], hidden)),
            w_hh: params.add(format!("{name}.w_hh"), fan_in_uniform(rng, &[3 * hidden, hidden], hidden)),
            b_ih: params.add(format!("{name}.b_ih"), fan_in_uniform(rng, &[3 * hidden], hidden)),
            b_hh: params.add(format!("{name}.b_hh"), fan_in_uniform(rng, &[3 * hidden], hidden)),
            input,
            hidden,
        }
    }

    /// Runs over `xs: [B, T, input]` from `h0: [B, hidden]`, returning `[B, T, hidden]`.
    pub fn forward<'g>(&self, p: &Bound<'g>, xs: Var<'g>, h0: Var<'g>) -> Var<'g> {
        let shape = xs.shape();
        let (b, t, h) = (shape[0], shape[1], self.hidden);
        let gi = xs
            .reshape([b * t, self.input])
            .matmul_t(p.get(self.w_ih), false, true)
            .add_channel(p.get(self.b_ih))
            .reshape([b, t, 3 * h]);
        let mut state = h0;
        let mut outputs = Vec::with_capacity(t);
        for step in 0..t {
            let gi_t = gi.narrow(1, step, 1).reshape([b, 3 * h]);
            let gh = state.matmul_t(p.get(self.w_hh), false, true).add_channel(p.get(self.b_hh));
            let r = (gi_t.narrow(1, 0, h) + gh.narrow(1, 0, h)).sigmoid();
            let z = (gi_t.narrow(1, h, h) + gh.narrow(1, h, h)).sigmoid();
            let n = (gi_t.narrow(1, 2 * h, h) + r * gh.narrow(1, 2 * h, h)).tanh();
            state = n + z * (state - n);
            outputs.push(state.reshape([b, 1, h]));
        }
        xs.graph().concat(&outputs, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn gru_matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = TensorSet::new();
        let gru = Gru::new(&mut params, &mut rng, "gru", 2, 3);
        let xs = Tensor::from_fn([1, 4, 2], |i| (i as f64 * 0.7).sin());
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let out = gru.forward(&p, g.constant(xs.clone()), g.constant(Tensor::zeros([1, 3])));

        // Per-unit reference implementation of the same recurrence.
        let w_ih = params.get(gru.w_ih);
        let w_hh = params.get(gru.w_hh);
        let b_ih = params.get(gru.b_ih);
        let b_hh = params.get(gru.b_hh);
        let row = |w: &Tensor, r: usize, v: &[f64]| -> f64 {
            v.iter().enumerate().map(|(c, x)| w.data()[r * v.len() + c] * x).sum()
        };
        let mut h = vec![0.0; 3];
        for t in 0..4 {
            let x = &xs.data()[t * 2..t * 2 + 2];
            let mut next = vec![0.0; 3];
            for u in 0..3 {
                let r = sigmoid(row(w_ih, u, x) + b_ih.data()[u] + row(w_hh, u, &h) + b_hh.data()[u]);
                let z = sigmoid(row(w_ih, 3 + u, x) + b_ih.data()[3 + u] + row(w_hh, 3 + u, &h) + b_hh.data()[3 + u]);
                let n = (row(w_ih, 6 + u, x) + b_ih.data()[6 + u] + r * (row(w_hh, 6 + u, &h) + b_hh.data()[6 + u])).tanh();
                next[u] = (1.0 - z) * n + z * h[u];
            }
            h = next;
            for u in 0..3 {
                assert!((out.value().data()[t * 3 + u] - h[u]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_norm_train_normalizes_each_channel() {
        let mut params = TensorSet::new();
        let mut buffers = TensorSet::new();
        let bn = BatchNorm::new(&mut params, &mut buffers, "bn", 2);
        let x = Tensor::from_fn([3, 2, 5], |i| (i as f64 * 1.7).sin() * 4.0 + 1.0);
        let g = Graph::new();
        let p = params.bind(&g);
        let mut ctx = ForwardCtx::train();
        let y = bn.forward(&p, &buffers, &mut ctx, g.constant(x)).value();
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.data()[(n * 2 + c) * 5..(n * 2 + c + 1) * 5].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 15.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 15.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        ctx.commit(&mut buffers, 0.1);
        assert!(buffers.get(bn.running_mean).max_abs() > 0.0);
    }

    #[test]
    fn batch_norm_eval_uses_running_statistics() {
        let mut params = TensorSet::new();
        let mut buffers = TensorSet::new();
        let bn = BatchNorm::new(&mut params, &mut buffers, "bn", 1);
        *buffers.get_mut(bn.running_mean) = Tensor::new([1], vec![2.0]);
        *buffers.get_mut(bn.running_var) = Tensor::new([1], vec![4.0 - 1e-5]);
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let y = bn.forward(&p, &buffers, &mut ForwardCtx::eval(), g.constant(Tensor::new([1, 1, 2], vec![2.0, 6.0])));
        let v = y.value();
        assert!((v.data()[0]).abs() < 1e-12);
        assert!((v.data()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn conv_transpose_upsamples_by_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = TensorSet::new();
        let up = ConvTranspose::new(&mut params, &mut rng, "up", 3, 2, 8, 4, 2);
        let g = Graph::new();
        let p = params.bind_frozen(&g);
        let y = up.forward(&p, g.constant(Tensor::zeros([2, 3, 5])));
        assert_eq!(y.shape(), vec![2, 2, 20]);
        assert_eq!(up.output_len(5), 20);
    }
}
