//! Minimal CNN layers with hand-rolled backpropagation.
//!
//! Layers own their parameters, their gradients, and whatever forward-pass
//! state the backward pass needs — calling `forward` then `backward` on the
//! same layer instance replays the chain rule without any global tape.
//! Everything is `f64` NCHW on a flat buffer. The layer set is exactly what
//! the coefficient predictor needs: 3x3/1x1 convolutions, batch norm, leaky
//! ReLU, 2x2 max pooling, nearest-neighbor upsampling, channel concat.

use rayon::prelude::*;

use crate::seed;

/// Dense NCHW tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length mismatch");
        Self { n, c, h, w, data }
    }

    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    /// One (sample, channel) plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    pub fn same_shape(&self, other: &Tensor4) -> bool {
        self.n == other.n && self.c == other.c && self.h == other.h && self.w == other.w
    }
}

/// Stride-1 2D convolution with square kernel and symmetric zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub pad: usize,
    pub weight: Vec<f64>, // [out_ch][in_ch][k][k]
    pub bias: Vec<f64>,   // [out_ch]
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
    input: Option<Tensor4>,
}

impl Conv2d {
    /// Kaiming-normal weights (std = sqrt(2 / fan_in)), zero bias.
    pub fn kaiming(in_ch: usize, out_ch: usize, ksize: usize, pad: usize, rng: &mut impl rand::Rng) -> Self {
        let fan_in = in_ch * ksize * ksize;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = (0..out_ch * fan_in).map(|_| std * seed::standard_normal(rng)).collect();
        Self {
            in_ch,
            out_ch,
            ksize,
            pad,
            weight,
            bias: vec![0.0; out_ch],
            grad_weight: vec![0.0; out_ch * fan_in],
            grad_bias: vec![0.0; out_ch],
            input: None,
        }
    }

    /// All-zero weights and bias — used for the final projection so the
    /// untrained network predicts exactly zero everywhere.
    pub fn zeroed(in_ch: usize, out_ch: usize, ksize: usize, pad: usize) -> Self {
        let fan_in = in_ch * ksize * ksize;
        Self {
            in_ch,
            out_ch,
            ksize,
            pad,
            weight: vec![0.0; out_ch * fan_in],
            bias: vec![0.0; out_ch],
            grad_weight: vec![0.0; out_ch * fan_in],
            grad_bias: vec![0.0; out_ch],
            input: None,
        }
    }

    #[inline]
    fn w_at(&self, oc: usize, ic: usize, u: usize, v: usize) -> f64 {
        self.weight[((oc * self.in_ch + ic) * self.ksize + u) * self.ksize + v]
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let mut out = Tensor4::zeros(x.n, self.out_ch, x.h, x.w);
        let (h, w, k, pad) = (x.h, x.w, self.ksize, self.pad);
        let plane = h * w;
        out.data
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(chunk, out_plane)| {
                let n = chunk / self.out_ch;
                let oc = chunk % self.out_ch;
                for i in 0..h {
                    for j in 0..w {
                        let mut acc = self.bias[oc];
                        for ic in 0..self.in_ch {
                            let xp = x.plane(n, ic);
                            for u in 0..k {
                                let yy = i as isize + u as isize - pad as isize;
                                if yy < 0 || yy >= h as isize {
                                    continue;
                                }
                                for v in 0..k {
                                    let xx = j as isize + v as isize - pad as isize;
                                    if xx < 0 || xx >= w as isize {
                                        continue;
                                    }
                                    acc += self.w_at(oc, ic, u, v)
                                        * xp[yy as usize * w + xx as usize];
                                }
                            }
                        }
                        out_plane[i * w + j] = acc;
                    }
                }
            });
        self.input = Some(x.clone());
        out
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let x = self.input.as_ref().expect("conv backward before forward");
        assert_eq!(dy.c, self.out_ch);
        let (h, w, k, pad) = (x.h, x.w, self.ksize, self.pad);
        let plane = h * w;

        // d/d input: full correlation with the flipped kernel.
        let mut dx = Tensor4::zeros(x.n, self.in_ch, h, w);
        dx.data
            .par_chunks_mut(plane)
            .enumerate()
            .for_each(|(chunk, dx_plane)| {
                let n = chunk / self.in_ch;
                let ic = chunk % self.in_ch;
                for p in 0..h {
                    for q in 0..w {
                        let mut acc = 0.0;
                        for oc in 0..self.out_ch {
                            let dyp = dy.plane(n, oc);
                            for u in 0..k {
                                let i = p as isize - u as isize + pad as isize;
                                if i < 0 || i >= h as isize {
                                    continue;
                                }
                                for v in 0..k {
                                    let j = q as isize - v as isize + pad as isize;
                                    if j < 0 || j >= w as isize {
                                        continue;
                                    }
                                    acc += self.w_at(oc, ic, u, v)
                                        * dyp[i as usize * w + j as usize];
                                }
                            }
                        }
                        dx_plane[p * w + q] = acc;
                    }
                }
            });

        // d/d weight, one output channel per task so writes stay disjoint.
        let fan = self.in_ch * k * k;
        let in_ch = self.in_ch;
        self.grad_weight
            .par_chunks_mut(fan)
            .enumerate()
            .for_each(|(oc, gw)| {
                gw.fill(0.0);
                for n in 0..x.n {
                    let dyp = dy.plane(n, oc);
                    for ic in 0..in_ch {
                        let xp = x.plane(n, ic);
                        for u in 0..k {
                            for v in 0..k {
                                let mut acc = 0.0;
                                for i in 0..h {
                                    let yy = i as isize + u as isize - pad as isize;
                                    if yy < 0 || yy >= h as isize {
                                        continue;
                                    }
                                    for j in 0..w {
                                        let xx = j as isize + v as isize - pad as isize;
                                        if xx < 0 || xx >= w as isize {
                                            continue;
                                        }
                                        acc += dyp[i * w + j] * xp[yy as usize * w + xx as usize];
                                    }
                                }
                                gw[(ic * k + u) * k + v] += acc;
                            }
                        }
                    }
                }
            });

        for oc in 0..self.out_ch {
            let mut acc = 0.0;
            for n in 0..x.n {
                acc += dy.plane(n, oc).iter().sum::<f64>();
            }
            self.grad_bias[oc] = acc;
        }
        dx
    }
}

/// Per-channel batch normalization over the (batch, height, width) axes.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub ch: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    /// Fraction of the *old* running statistic kept per training step.
    pub momentum: f64,
    pub eps: f64,
    pub training: bool,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct BnCache {
    x_hat: Tensor4,
    inv_std: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(ch: usize) -> Self {
        Self {
            ch,
            gamma: vec![1.0; ch],
            beta: vec![0.0; ch],
            grad_gamma: vec![0.0; ch],
            grad_beta: vec![0.0; ch],
            running_mean: vec![0.0; ch],
            running_var: vec![1.0; ch],
            momentum: 0.9,
            eps: 1e-5,
            training: true,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, self.ch, "batchnorm channels");
        let mut out = Tensor4::zeros(x.n, x.c, x.h, x.w);
        let per_ch = x.n * x.h * x.w;
        if self.training {
            let mut x_hat = Tensor4::zeros(x.n, x.c, x.h, x.w);
            let mut inv_std = vec![0.0; self.ch];
            for c in 0..self.ch {
                let mut sum = 0.0;
                let mut sq = 0.0;
                for n in 0..x.n {
                    for &v in x.plane(n, c) {
                        sum += v;
                        sq += v * v;
                    }
                }
                let mean = sum / per_ch as f64;
                let var = (sq / per_ch as f64 - mean * mean).max(0.0);
                let inv = 1.0 / (var + self.eps).sqrt();
                inv_std[c] = inv;
                self.running_mean[c] = self.momentum * self.running_mean[c] + (1.0 - self.momentum) * mean;
                self.running_var[c] = self.momentum * self.running_var[c] + (1.0 - self.momentum) * var;
                for n in 0..x.n {
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            let xh = (x.at(n, c, y, xx) - mean) * inv;
                            x_hat.set(n, c, y, xx, xh);
                            out.set(n, c, y, xx, self.gamma[c] * xh + self.beta[c]);
                        }
                    }
                }
            }
            self.cache = Some(BnCache { x_hat, inv_std });
        } else {
            // Inference is a pure per-pixel affine map; nothing is mutated.
            for c in 0..self.ch {
                let inv = 1.0 / (self.running_var[c] + self.eps).sqrt();
                let (g, b, m) = (self.gamma[c], self.beta[c], self.running_mean[c]);
                for n in 0..x.n {
                    for y in 0..x.h {
                        for xx in 0..x.w {
                            out.set(n, c, y, xx, g * (x.at(n, c, y, xx) - m) * inv + b);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let cache = self.cache.as_ref().expect("batchnorm backward before training forward");
        let x_hat = &cache.x_hat;
        let per_ch = (dy.n * dy.h * dy.w) as f64;
        let mut dx = Tensor4::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..self.ch {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for n in 0..dy.n {
                let dyp = dy.plane(n, c);
                let xhp = x_hat.plane(n, c);
                for (d, xh) in dyp.iter().zip(xhp) {
                    sum_dy += d;
                    sum_dy_xhat += d * xh;
                }
            }
            self.grad_beta[c] = sum_dy;
            self.grad_gamma[c] = sum_dy_xhat;
            let scale = self.gamma[c] * cache.inv_std[c] / per_ch;
            for n in 0..dy.n {
                for y in 0..dy.h {
                    for xx in 0..dy.w {
                        let d = dy.at(n, c, y, xx);
                        let xh = x_hat.at(n, c, y, xx);
                        dx.set(n, c, y, xx, scale * (per_ch * d - sum_dy - xh * sum_dy_xhat));
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    mask: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let mask: Vec<bool> = x.data.iter().map(|&v| v > 0.0).collect();
        let out = Tensor4 {
            n: x.n,
            c: x.c,
            h: x.h,
            w: x.w,
            data: x.data.iter().map(|&v| if v > 0.0 { v } else { self.slope * v }).collect(),
        };
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let mask = self.mask.as_ref().expect("leaky relu backward before forward");
        Tensor4 {
            n: dy.n,
            c: dy.c,
            h: dy.h,
            w: dy.w,
            data: dy
                .data
                .iter()
                .zip(mask)
                .map(|(&d, &pos)| if pos { d } else { self.slope * d })
                .collect(),
        }
    }
}

/// 2x2 max pooling with stride 2; input height/width must be even.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    argmax: Option<Vec<usize>>,
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert!(x.h % 2 == 0 && x.w % 2 == 0, "maxpool needs even spatial dims");
        let (oh, ow) = (x.h / 2, x.w / 2);
        let mut out = Tensor4::zeros(x.n, x.c, oh, ow);
        let mut argmax = vec![0usize; out.data.len()];
        for n in 0..x.n {
            for c in 0..x.c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                let idx = x.idx(n, c, 2 * i + di, 2 * j + dj);
                                // Strict > keeps the first maximum on ties.
                                if x.data[idx] > best {
                                    best = x.data[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oi = out.idx(n, c, i, j);
                        out.data[oi] = best;
                        argmax[oi] = best_idx;
                    }
                }
            }
        }
        self.argmax = Some(argmax);
        self.in_shape = (x.n, x.c, x.h, x.w);
        out
    }

    pub fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let argmax = self.argmax.as_ref().expect("maxpool backward before forward");
        let (n, c, h, w) = self.in_shape;
        let mut dx = Tensor4::zeros(n, c, h, w);
        for (o, &src) in argmax.iter().enumerate() {
            dx.data[src] += dy.data[o];
        }
        dx
    }
}

/// Nearest-neighbor 2x upsampling.
#[derive(Debug, Clone, Default)]
pub struct UpsampleNearest2;

impl UpsampleNearest2 {
    pub fn forward(&self, x: &Tensor4) -> Tensor4 {
        let mut out = Tensor4::zeros(x.n, x.c, x.h * 2, x.w * 2);
        for n in 0..x.n {
            for c in 0..x.c {
                for i in 0..x.h {
                    for j in 0..x.w {
                        let v = x.at(n, c, i, j);
                        out.set(n, c, 2 * i, 2 * j, v);
                        out.set(n, c, 2 * i, 2 * j + 1, v);
                        out.set(n, c, 2 * i + 1, 2 * j, v);
                        out.set(n, c, 2 * i + 1, 2 * j + 1, v);
                    }
                }
            }
        }
        out
    }

    /// Adjoint of replication: each source cell collects its 2x2 block.
    pub fn backward(&self, dy: &Tensor4) -> Tensor4 {
        assert!(dy.h % 2 == 0 && dy.w % 2 == 0);
        let mut dx = Tensor4::zeros(dy.n, dy.c, dy.h / 2, dy.w / 2);
        for n in 0..dy.n {
            for c in 0..dy.c {
                for i in 0..dx.h {
                    for j in 0..dx.w {
                        let sum = dy.at(n, c, 2 * i, 2 * j)
                            + dy.at(n, c, 2 * i, 2 * j + 1)
                            + dy.at(n, c, 2 * i + 1, 2 * j)
                            + dy.at(n, c, 2 * i + 1, 2 * j + 1);
                        dx.set(n, c, i, j, sum);
                    }
                }
            }
        }
        dx
    }
}

/// Stacks `a`'s channels before `b`'s.
pub fn concat_channels(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    assert!(a.n == b.n && a.h == b.h && a.w == b.w, "concat spatial dims");
    let mut out = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        for c in 0..a.c {
            let dst = out.idx(n, c, 0, 0);
            out.data[dst..dst + a.h * a.w].copy_from_slice(a.plane(n, c));
        }
        for c in 0..b.c {
            let dst = out.idx(n, a.c + c, 0, 0);
            out.data[dst..dst + b.h * b.w].copy_from_slice(b.plane(n, c));
        }
    }
    out
}

/// Splits a gradient back into the two concat inputs.
pub fn split_channels(dy: &Tensor4, c_first: usize) -> (Tensor4, Tensor4) {
    let c_second = dy.c - c_first;
    let mut a = Tensor4::zeros(dy.n, c_first, dy.h, dy.w);
    let mut b = Tensor4::zeros(dy.n, c_second, dy.h, dy.w);
    let plane = dy.h * dy.w;
    for n in 0..dy.n {
        for c in 0..c_first {
            let dst = a.idx(n, c, 0, 0);
            a.data[dst..dst + plane].copy_from_slice(dy.plane(n, c));
        }
        for c in 0..c_second {
            let dst = b.idx(n, c, 0, 0);
            b.data[dst..dst + plane].copy_from_slice(dy.plane(n, c_first + c));
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn rand_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Tensor4 {
        Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Scalar probe loss: sum(out * probe), whose gradient w.r.t. out is the
    /// probe itself. Central differences through the full layer forward then
    /// validate whatever backward claims.
    fn probe_loss(out: &Tensor4, probe: &Tensor4) -> f64 {
        out.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum()
    }

    fn fd_check(analytic: f64, numeric: f64, label: &str) {
        let denom = analytic.abs().max(numeric.abs()).max(1e-6);
        assert!(
            ((analytic - numeric) / denom).abs() < 1e-6,
            "{label}: analytic {analytic} vs fd {numeric}"
        );
    }

    #[test]
    fn conv_known_kernel() {
        let mut rng = crate::seed::stream_rng(1, "nn-conv");
        let mut conv = Conv2d::kaiming(1, 1, 3, 1, &mut rng);
        // Identity kernel: center tap 1, rest 0, bias 2.
        conv.weight.fill(0.0);
        conv.weight[4] = 1.0;
        conv.bias[0] = 2.0;
        let x = rand_tensor(1, 1, 4, 4, &mut rng);
        let y = conv.forward(&x);
        for i in 0..16 {
            assert_relative_eq!(y.data[i], x.data[i] + 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = crate::seed::stream_rng(2, "nn-conv-fd");
        for (ic, oc, k, pad) in [(2, 3, 3, 1), (3, 2, 1, 0)] {
            let mut conv = Conv2d::kaiming(ic, oc, k, pad, &mut rng);
            let x = rand_tensor(2, ic, 5, 4, &mut rng);
            let probe = rand_tensor(2, oc, 5, 4, &mut rng);
            let out = conv.forward(&x);
            let dx = conv.backward(&probe);
            let eps = 1e-5;
            assert_eq!(out.data.len(), probe.data.len());

            for &i in &[0usize, 7, x.data.len() - 1] {
                let mut xp = x.clone();
                xp.data[i] += eps;
                let up = probe_loss(&conv.forward(&xp), &probe);
                xp.data[i] -= 2.0 * eps;
                let down = probe_loss(&conv.forward(&xp), &probe);
                fd_check(dx.data[i], (up - down) / (2.0 * eps), "conv dx");
            }
            // Re-prime the cache for parameter checks.
            conv.forward(&x);
            conv.backward(&probe);
            for &wi in &[0usize, conv.weight.len() / 2, conv.weight.len() - 1] {
                let orig = conv.weight[wi];
                conv.weight[wi] = orig + eps;
                let up = probe_loss(&conv.forward(&x), &probe);
                conv.weight[wi] = orig - eps;
                let down = probe_loss(&conv.forward(&x), &probe);
                conv.weight[wi] = orig;
                fd_check(conv.grad_weight[wi], (up - down) / (2.0 * eps), "conv dw");
            }
            let orig = conv.bias[1];
            conv.bias[1] = orig + eps;
            let up = probe_loss(&conv.forward(&x), &probe);
            conv.bias[1] = orig - eps;
            let down = probe_loss(&conv.forward(&x), &probe);
            conv.bias[1] = orig;
            fd_check(conv.grad_bias[1], (up - down) / (2.0 * eps), "conv db");
        }
    }

    #[test]
    fn batchnorm_normalizes_and_backprops() {
        let mut rng = crate::seed::stream_rng(3, "nn-bn");
        let mut bn = BatchNorm2d::new(2);
        bn.gamma = vec![1.3, 0.7];
        bn.beta = vec![0.2, -0.4];
        let x = rand_tensor(3, 2, 4, 4, &mut rng);
        let y = bn.forward(&x);
        // Per-channel output mean beta, variance gamma^2 (up to eps).
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.plane(n, c).to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert_relative_eq!(mean, bn.beta[c], epsilon = 1e-9);
            assert_relative_eq!(var.sqrt(), bn.gamma[c].abs(), epsilon = 1e-3);
        }

        let probe = rand_tensor(3, 2, 4, 4, &mut rng);
        bn.forward(&x);
        let dx = bn.backward(&probe);
        let eps = 1e-5;
        for &i in &[0usize, 31, x.data.len() - 1] {
            // Freeze running stats so the perturbed forwards are comparable.
            let mut bn2 = bn.clone();
            let mut xp = x.clone();
            xp.data[i] += eps;
            let up = probe_loss(&bn2.forward(&xp), &probe);
            xp.data[i] -= 2.0 * eps;
            let down = probe_loss(&bn2.forward(&xp), &probe);
            fd_check(dx.data[i], (up - down) / (2.0 * eps), "bn dx");
        }
        for c in 0..2 {
            let mut bn2 = bn.clone();
            bn2.gamma[c] += eps;
            let up = probe_loss(&bn2.forward(&x), &probe);
            bn2.gamma[c] -= 2.0 * eps;
            let down = probe_loss(&bn2.forward(&x), &probe);
            fd_check(bn.grad_gamma[c], (up - down) / (2.0 * eps), "bn dgamma");
            let mut bn3 = bn.clone();
            bn3.beta[c] += eps;
            let up = probe_loss(&bn3.forward(&x), &probe);
            bn3.beta[c] -= 2.0 * eps;
            let down = probe_loss(&bn3.forward(&x), &probe);
            fd_check(bn.grad_beta[c], (up - down) / (2.0 * eps), "bn dbeta");
        }
    }

    #[test]
    fn batchnorm_inference_uses_running_stats_and_is_pure() {
        let mut rng = crate::seed::stream_rng(4, "nn-bn-eval");
        let mut bn = BatchNorm2d::new(1);
        for _ in 0..20 {
            bn.forward(&rand_tensor(4, 1, 3, 3, &mut rng));
        }
        bn.training = false;
        let saved_mean = bn.running_mean.clone();
        let x = rand_tensor(1, 1, 3, 3, &mut rng);
        let y1 = bn.forward(&x);
        let y2 = bn.forward(&x);
        assert_eq!(y1, y2);
        assert_eq!(bn.running_mean, saved_mean);
        // Running stats should hover near the stream's true moments (0, 1/3 var of uniform).
        assert!(bn.running_mean[0].abs() < 0.15, "running mean {}", bn.running_mean[0]);
    }

    #[test]
    fn leaky_relu_slope_and_gradient() {
        let mut act = LeakyRelu::new(0.01);
        let x = Tensor4::from_vec(1, 1, 1, 4, vec![-2.0, -0.5, 0.5, 2.0]);
        let y = act.forward(&x);
        assert_eq!(y.data, vec![-0.02, -0.005, 0.5, 2.0]);
        let dy = Tensor4::from_vec(1, 1, 1, 4, vec![1.0, 1.0, 1.0, 1.0]);
        let dx = act.backward(&dy);
        assert_eq!(dx.data, vec![0.01, 0.01, 1.0, 1.0]);
    }

    #[test]
    fn maxpool_selects_and_routes() {
        let x = Tensor4::from_vec(
            1,
            1,
            4,
            4,
            vec![
                1.0, 2.0, 5.0, 5.0, //
                3.0, 0.0, 4.0, 1.0, //
                9.0, 8.0, -1.0, -2.0, //
                7.0, 6.0, -3.0, -4.0,
            ],
        );
        let mut pool = MaxPool2::new();
        let y = pool.forward(&x);
        assert_eq!(y.data, vec![3.0, 5.0, 9.0, -1.0]);
        let dy = Tensor4::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let dx = pool.backward(&dy);
        // Ties (the two 5s) route to the first maximum in scan order.
        assert_eq!(dx.data[2], 2.0);
        assert_eq!(dx.data[3], 0.0);
        assert_eq!(dx.data[4], 1.0);
        assert_eq!(dx.data[8], 3.0);
        assert_eq!(dx.data[10], 4.0);
        assert_eq!(dx.data.iter().sum::<f64>(), 10.0);
    }

    #[test]
    fn upsample_is_adjoint_of_its_backward() {
        let mut rng = crate::seed::stream_rng(5, "nn-up");
        let up = UpsampleNearest2;
        let x = rand_tensor(2, 3, 3, 2, &mut rng);
        let y = rand_tensor(2, 3, 6, 4, &mut rng);
        // <up(x), y> == <x, up_backward(y)>
        let lhs = probe_loss(&up.forward(&x), &y);
        let rhs = probe_loss(&x, &up.backward(&y));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn concat_split_round_trip() {
        let mut rng = crate::seed::stream_rng(6, "nn-cat");
        let a = rand_tensor(2, 3, 4, 4, &mut rng);
        let b = rand_tensor(2, 5, 4, 4, &mut rng);
        let cat = concat_channels(&a, &b);
        assert_eq!(cat.c, 8);
        assert_eq!(cat.plane(1, 2), a.plane(1, 2));
        assert_eq!(cat.plane(1, 5), b.plane(1, 2));
        let (a2, b2) = split_channels(&cat, 3);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }
}
