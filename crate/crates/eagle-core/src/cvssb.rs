//! Convolutional vision state-space block and its depthwise-aware
//! feed-forward network.
//!
//! The block computes
//!
//! ```text
//! Z1 = X + SS2D(LN(X))
//! Y  = Conv1x1(Z1) + DAFFN(LN(Z1))
//! ```
//!
//! where the 1x1 convolution and the feed-forward output both target the
//! block's output width. The first block of a group changes the channel
//! count by the group's channel rule (x2 in the encoder, x1/2 in the
//! decoder); interior blocks preserve it.

use crate::init::{self, Named};
use crate::precision::Real;
use crate::rng::Rng;
use crate::ss2d::{Ss2dBlock, Ss2dConfig};
use crate::tensor::{conv::conv2d, norm::layer_norm_channels, ops, Result, Tensor, TensorError};

pub const LN_EPS: f64 = 1e-5;

/// How the first block of a group maps input width P to output width.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRule {
    /// Encoder: P -> 2P.
    Double,
    /// Decoder: P -> P/2 (P must be even).
    Halve,
    /// Interior blocks: P -> P.
    Keep,
}

impl ChannelRule {
    pub fn apply(self, in_ch: usize) -> Result<usize> {
        match self {
            ChannelRule::Double => Ok(2 * in_ch),
            ChannelRule::Halve => {
                if !in_ch.is_multiple_of(2) {
                    Err(TensorError::invalid(
                        "cvssb",
                        format!("halving rule needs even input width, got {in_ch}"),
                    ))
                } else {
                    Ok(in_ch / 2)
                }
            }
            ChannelRule::Keep => Ok(in_ch),
        }
    }
}

/// Squeeze/excite-style channel attention: global average pool, bottleneck
/// MLP, sigmoid gate in (0, 1).
#[derive(Debug, Clone)]
pub struct ChannelAttention<T: Real> {
    fc1_w: Tensor<T>,
    fc1_b: Tensor<T>,
    fc2_w: Tensor<T>,
    fc2_b: Tensor<T>,
}

pub const CA_REDUCTION: usize = 4;

impl<T: Real> ChannelAttention<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng) -> Self {
        let hidden = (channels / reduction).max(1);
        ChannelAttention {
            fc1_w: init::kaiming(rng, &[hidden, channels], channels),
            fc1_b: init::zeros_param(&[hidden]),
            fc2_w: init::kaiming(rng, &[channels, hidden], hidden),
            fc2_b: init::zeros_param(&[channels]),
        }
    }

    /// Per-channel gate weights in (0, 1), shape `[B, C]`.
    pub fn weights(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let pooled = ops::global_avg_pool(x)?;
        let hidden = ops::silu(&ops::linear_features(&pooled, &self.fc1_w, Some(&self.fc1_b))?);
        Ok(ops::sigmoid(&ops::linear_features(&hidden, &self.fc2_w, Some(&self.fc2_b))?))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::mul_channel_gate(x, &self.weights(x)?)
    }

    fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "fc1_w", &self.fc1_w);
        init::push(out, prefix, "fc1_b", &self.fc1_b);
        init::push(out, prefix, "fc2_w", &self.fc2_w);
        init::push(out, prefix, "fc2_b", &self.fc2_b);
    }
}

/// Depthwise-aware feed-forward network.
///
/// SiLU -> 1x1 conv C -> 4C -> split into four C-chunks -> depthwise convs
/// with kernels {1, 3, 5} on the first three, a standard 3x3 conv on the
/// fourth -> concat -> 1x1 conv 4C -> out -> channel attention.
#[derive(Debug, Clone)]
pub struct Daffn<T: Real> {
    in_ch: usize,
    out_ch: usize,
    proj_in_w: Tensor<T>,
    proj_in_b: Tensor<T>,
    dw1_w: Tensor<T>,
    dw1_b: Tensor<T>,
    dw3_w: Tensor<T>,
    dw3_b: Tensor<T>,
    dw5_w: Tensor<T>,
    dw5_b: Tensor<T>,
    conv4_w: Tensor<T>,
    conv4_b: Tensor<T>,
    proj_out_w: Tensor<T>,
    proj_out_b: Tensor<T>,
    ca: ChannelAttention<T>,
}

impl<T: Real> Daffn<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Self {
        let c = in_ch;
        Daffn {
            in_ch,
            out_ch,
            proj_in_w: init::kaiming(rng, &[4 * c, c, 1, 1], c),
            proj_in_b: init::zeros_param(&[4 * c]),
            dw1_w: init::kaiming(rng, &[c, 1, 1, 1], 1),
            dw1_b: init::zeros_param(&[c]),
            dw3_w: init::kaiming(rng, &[c, 1, 3, 3], 9),
            dw3_b: init::zeros_param(&[c]),
            dw5_w: init::kaiming(rng, &[c, 1, 5, 5], 25),
            dw5_b: init::zeros_param(&[c]),
            conv4_w: init::kaiming(rng, &[c, c, 3, 3], 9 * c),
            conv4_b: init::zeros_param(&[c]),
            proj_out_w: init::kaiming(rng, &[out_ch, 4 * c, 1, 1], 4 * c),
            proj_out_b: init::zeros_param(&[out_ch]),
            ca: ChannelAttention::new(out_ch, CA_REDUCTION, rng),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_ch {
            return Err(TensorError::shape(
                "daffn",
                format!("expected [B, {}, H, W], got {:?}", self.in_ch, s),
            ));
        }
        let c = self.in_ch;
        let wide = conv2d(&ops::silu(x), &self.proj_in_w, Some(&self.proj_in_b), 1, 0, 1)?;
        let x1 = ops::slice_channels(&wide, 0, c)?;
        let x2 = ops::slice_channels(&wide, c, c)?;
        let x3 = ops::slice_channels(&wide, 2 * c, c)?;
        let x4 = ops::slice_channels(&wide, 3 * c, c)?;
        let y1 = conv2d(&x1, &self.dw1_w, Some(&self.dw1_b), 1, 0, c)?;
        let y2 = conv2d(&x2, &self.dw3_w, Some(&self.dw3_b), 1, 1, c)?;
        let y3 = conv2d(&x3, &self.dw5_w, Some(&self.dw5_b), 1, 2, c)?;
        let y4 = conv2d(&x4, &self.conv4_w, Some(&self.conv4_b), 1, 1, 1)?;
        let merged = ops::concat_channels(&[y1, y2, y3, y4])?;
        let projected = conv2d(&merged, &self.proj_out_w, Some(&self.proj_out_b), 1, 0, 1)?;
        self.ca.forward(&projected)
    }

    fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "proj_in_w", &self.proj_in_w);
        init::push(out, prefix, "proj_in_b", &self.proj_in_b);
        init::push(out, prefix, "dw1_w", &self.dw1_w);
        init::push(out, prefix, "dw1_b", &self.dw1_b);
        init::push(out, prefix, "dw3_w", &self.dw3_w);
        init::push(out, prefix, "dw3_b", &self.dw3_b);
        init::push(out, prefix, "dw5_w", &self.dw5_w);
        init::push(out, prefix, "dw5_b", &self.dw5_b);
        init::push(out, prefix, "conv4_w", &self.conv4_w);
        init::push(out, prefix, "conv4_b", &self.conv4_b);
        init::push(out, prefix, "proj_out_w", &self.proj_out_w);
        init::push(out, prefix, "proj_out_b", &self.proj_out_b);
        self.ca.collect_params(&format!("{prefix}.ca"), out);
    }
}

/// One convolutional vision state-space block.
#[derive(Debug, Clone)]
pub struct Cvssb<T: Real> {
    in_ch: usize,
    out_ch: usize,
    ln1_gamma: Tensor<T>,
    ln1_beta: Tensor<T>,
    ss2d: Ss2dBlock<T>,
    ln2_gamma: Tensor<T>,
    ln2_beta: Tensor<T>,
    conv_w: Tensor<T>,
    conv_b: Tensor<T>,
    daffn: Daffn<T>,
}

impl<T: Real> Cvssb<T> {
    pub fn new(in_ch: usize, rule: ChannelRule, ss2d: Ss2dConfig, rng: &mut Rng) -> Result<Self> {
        let out_ch = rule.apply(in_ch)?;
        if ss2d.dim != in_ch {
            return Err(TensorError::invalid(
                "cvssb",
                format!("ss2d dim {} must equal input width {in_ch}", ss2d.dim),
            ));
        }
        Ok(Cvssb {
            in_ch,
            out_ch,
            ln1_gamma: init::ones_param(&[in_ch]),
            ln1_beta: init::zeros_param(&[in_ch]),
            ss2d: Ss2dBlock::new(ss2d, rng)?,
            ln2_gamma: init::ones_param(&[in_ch]),
            ln2_beta: init::zeros_param(&[in_ch]),
            conv_w: init::kaiming(rng, &[out_ch, in_ch, 1, 1], in_ch),
            conv_b: init::zeros_param(&[out_ch]),
            daffn: Daffn::new(in_ch, out_ch, rng),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    /// `[B, P, H, W] -> [B, P_out, H, W]`; spatial dims preserved.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.in_ch {
            return Err(TensorError::shape(
                "cvssb",
                format!("expected [B, {}, H, W], got {:?}", self.in_ch, s),
            ));
        }
        let z1 = ops::add(
            x,
            &self.ss2d.forward(&layer_norm_channels(x, &self.ln1_gamma, &self.ln1_beta, LN_EPS)?)?,
        )?;
        let conv_path = conv2d(&z1, &self.conv_w, Some(&self.conv_b), 1, 0, 1)?;
        let ffn_path = self
            .daffn
            .forward(&layer_norm_channels(&z1, &self.ln2_gamma, &self.ln2_beta, LN_EPS)?)?;
        ops::add(&conv_path, &ffn_path)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "ln1_gamma", &self.ln1_gamma);
        init::push(out, prefix, "ln1_beta", &self.ln1_beta);
        self.ss2d.collect_params(&format!("{prefix}.ss2d"), out);
        init::push(out, prefix, "ln2_gamma", &self.ln2_gamma);
        init::push(out, prefix, "ln2_beta", &self.ln2_beta);
        init::push(out, prefix, "conv_w", &self.conv_w);
        init::push(out, prefix, "conv_b", &self.conv_b);
        self.daffn.collect_params(&format!("{prefix}.daffn"), out);
    }
}

/// A stack of CVSSBs: the first block applies the channel rule, the remaining
/// `depth - 1` blocks are channel-preserving.
#[derive(Debug, Clone)]
pub struct CvssbGroup<T: Real> {
    blocks: Vec<Cvssb<T>>,
}

impl<T: Real> CvssbGroup<T> {
    pub fn new(
        in_ch: usize,
        rule: ChannelRule,
        depth: usize,
        ss2d_template: impl Fn(usize) -> Ss2dConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        if depth == 0 {
            return Err(TensorError::invalid("cvssb_group", "depth must be >= 1"));
        }
        let mut blocks = Vec::with_capacity(depth);
        blocks.push(Cvssb::new(in_ch, rule, ss2d_template(in_ch), rng)?);
        let width = blocks[0].out_channels();
        for _ in 1..depth {
            blocks.push(Cvssb::new(width, ChannelRule::Keep, ss2d_template(width), rng)?);
        }
        Ok(CvssbGroup { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn out_channels(&self) -> usize {
        self.blocks.last().expect("depth >= 1").out_channels()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for block in &self.blocks {
            cur = block.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        for (i, block) in self.blocks.iter().enumerate() {
            block.collect_params(&format!("{prefix}.block{i}"), out);
        }
    }
}
