//! Encoder–decoder network that maps a normalized elevation crop to
//! per-pixel reflectance-model coefficients.
//!
//! Four encoder stages (3x3 conv, batch norm, leaky ReLU, 2x2 max pool) and
//! four mirrored decoder stages (nearest upsample, skip concat, 3x3 conv,
//! batch norm, leaky ReLU), closed by a zero-initialized 1x1 projection so an
//! untrained network predicts all-zero coefficients. Input height and width
//! must be divisible by 16 to survive the four poolings.

use crate::brdf::ModelKind;
use crate::infer::nn::{
    concat_channels, split_channels, BatchNorm2d, Conv2d, LeakyRelu, MaxPool2, Tensor4,
    UpsampleNearest2,
};
use crate::seed;

/// Channel widths of the four encoder stages, shallow to deep.
pub const DEFAULT_WIDTHS: [usize; 4] = [10, 20, 40, 80];

/// How far the input must divide for the pool/upsample pairs to round-trip.
pub const SPATIAL_DIVISOR: usize = 16;

#[derive(Debug, Clone)]
struct EncStage {
    conv: Conv2d,
    bn: BatchNorm2d,
    act: LeakyRelu,
    pool: MaxPool2,
}

#[derive(Debug, Clone)]
struct DecStage {
    up: UpsampleNearest2,
    conv: Conv2d,
    bn: BatchNorm2d,
    act: LeakyRelu,
    skip_ch: usize,
}

/// Coefficient predictor with explicit forward/backward passes.
#[derive(Debug, Clone)]
pub struct PredictorNet {
    model: ModelKind,
    widths: [usize; 4],
    leaky_slope: f64,
    enc: Vec<EncStage>,
    dec: Vec<DecStage>,
    head: Conv2d,
}

impl PredictorNet {
    /// Builds a freshly initialized network. Convolution weights are
    /// Kaiming-normal from a dedicated RNG stream of `seed`; the head is
    /// zeroed.
    pub fn new(model: ModelKind, widths: [usize; 4], leaky_slope: f64, seed: u64) -> Self {
        let mut rng = seed::stream_rng(seed, "net-init");
        let mut enc = Vec::with_capacity(4);
        let mut in_ch = 1;
        for &w in &widths {
            enc.push(EncStage {
                conv: Conv2d::kaiming(in_ch, w, 3, 1, &mut rng),
                bn: BatchNorm2d::new(w),
                act: LeakyRelu::new(leaky_slope),
                pool: MaxPool2::new(),
            });
            in_ch = w;
        }
        // Decoder i consumes the upsampled deeper features plus the skip from
        // encoder stage (3 - i); its width mirrors the encoder one level up.
        let mut dec = Vec::with_capacity(4);
        let mut deep_ch = widths[3];
        for i in 0..4 {
            let skip_ch = widths[3 - i];
            let out_ch = if i < 3 { widths[2 - i] } else { widths[0] };
            dec.push(DecStage {
                up: UpsampleNearest2,
                conv: Conv2d::kaiming(deep_ch + skip_ch, out_ch, 3, 1, &mut rng),
                bn: BatchNorm2d::new(out_ch),
                act: LeakyRelu::new(leaky_slope),
                skip_ch,
            });
            deep_ch = out_ch;
        }
        let head = Conv2d::zeroed(widths[0], model.n_params(), 1, 0);
        Self { model, widths, leaky_slope, enc, dec, head }
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn widths(&self) -> [usize; 4] {
        self.widths
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    /// Switches every batch norm between batch statistics (training) and
    /// running statistics (inference).
    pub fn set_training(&mut self, training: bool) {
        for stage in &mut self.enc {
            stage.bn.training = training;
        }
        for stage in &mut self.dec {
            stage.bn.training = training;
        }
    }

    pub fn is_training(&self) -> bool {
        self.enc[0].bn.training
    }

    /// Total trainable parameter count.
    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p, _| n += p.len());
        n
    }

    /// Input -> coefficient tensor (`n_params` channels, same spatial size).
    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        assert_eq!(x.c, 1, "predictor expects a single elevation channel");
        assert!(
            x.h % SPATIAL_DIVISOR == 0 && x.w % SPATIAL_DIVISOR == 0,
            "input {}x{} not divisible by {SPATIAL_DIVISOR}",
            x.h,
            x.w,
        );
        let mut skips = Vec::with_capacity(4);
        let mut cur = x.clone();
        for stage in &mut self.enc {
            let pre_pool = stage.act.forward(&stage.bn.forward(&stage.conv.forward(&cur)));
            cur = stage.pool.forward(&pre_pool);
            skips.push(pre_pool);
        }
        for stage in &mut self.dec {
            let skip = skips.pop().expect("one skip per decoder stage");
            let cat = concat_channels(&skip, &stage.up.forward(&cur));
            cur = stage.act.forward(&stage.bn.forward(&stage.conv.forward(&cat)));
        }
        self.head.forward(&cur)
    }

    /// Backpropagates a gradient w.r.t. the output tensor, filling every
    /// layer's parameter gradients; returns the gradient w.r.t. the input.
    pub fn backward(&mut self, dy: &Tensor4) -> Tensor4 {
        let mut cur = self.head.backward(dy);
        let mut skip_grads = Vec::with_capacity(4);
        for stage in self.dec.iter_mut().rev() {
            let d_cat = stage.conv.backward(&stage.bn.backward(&stage.act.backward(&cur)));
            let (d_skip, d_up) = split_channels(&d_cat, stage.skip_ch);
            cur = stage.up.backward(&d_up);
            skip_grads.push(d_skip);
        }
        // skip_grads now holds decoder gradients for encoder stages 0..4 in
        // that order (deepest decoder popped the deepest skip first).
        for (stage, d_skip) in self.enc.iter_mut().rev().zip(skip_grads) {
            let mut d_pre = stage.pool.backward(&cur);
            for (a, b) in d_pre.data.iter_mut().zip(&d_skip.data) {
                *a += b;
            }
            cur = stage.conv.backward(&stage.bn.backward(&stage.act.backward(&d_pre)));
        }
        cur
    }

    /// Visits every trainable (parameter, gradient) buffer pair in a fixed
    /// order. The optimizer and the checkpoint format both rely on this
    /// order being stable.
    pub fn visit_params(&self, f: &mut impl FnMut(&[f64], &[f64])) {
        for stage in &self.enc {
            f(&stage.conv.weight, &stage.conv.grad_weight);
            f(&stage.conv.bias, &stage.conv.grad_bias);
            f(&stage.bn.gamma, &stage.bn.grad_gamma);
            f(&stage.bn.beta, &stage.bn.grad_beta);
        }
        for stage in &self.dec {
            f(&stage.conv.weight, &stage.conv.grad_weight);
            f(&stage.conv.bias, &stage.conv.grad_bias);
            f(&stage.bn.gamma, &stage.bn.grad_gamma);
            f(&stage.bn.beta, &stage.bn.grad_beta);
        }
        f(&self.head.weight, &self.head.grad_weight);
        f(&self.head.bias, &self.head.grad_bias);
    }

    /// Mutable variant of [`visit_params`](Self::visit_params), same order.
    pub fn visit_params_mut(&mut self, f: &mut impl FnMut(&mut [f64], &[f64])) {
        for stage in &mut self.enc {
            f(&mut stage.conv.weight, &stage.conv.grad_weight);
            f(&mut stage.conv.bias, &stage.conv.grad_bias);
            f(&mut stage.bn.gamma, &stage.bn.grad_gamma);
            f(&mut stage.bn.beta, &stage.bn.grad_beta);
        }
        for stage in &mut self.dec {
            f(&mut stage.conv.weight, &stage.conv.grad_weight);
            f(&mut stage.conv.bias, &stage.conv.grad_bias);
            f(&mut stage.bn.gamma, &stage.bn.grad_gamma);
            f(&mut stage.bn.beta, &stage.bn.grad_beta);
        }
        f(&mut self.head.weight, &self.head.grad_weight);
        f(&mut self.head.bias, &self.head.grad_bias);
    }

    /// Visits the non-trainable batch-norm running statistics, in the same
    /// stage order as the parameters. Needed to checkpoint inference state.
    pub fn visit_buffers_mut(&mut self, f: &mut impl FnMut(&mut [f64])) {
        for stage in &mut self.enc {
            f(&mut stage.bn.running_mean);
            f(&mut stage.bn.running_var);
        }
        for stage in &mut self.dec {
            f(&mut stage.bn.running_mean);
            f(&mut stage.bn.running_var);
        }
    }
}
