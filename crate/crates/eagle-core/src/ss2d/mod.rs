//! 2D selective scan block.
//!
//! The feature map is flattened along four raster orders (row/column, forward/
//! backward), each sequence runs through its own discrete state-space
//! recurrence, and the four directional outputs are placed back and summed. The
//! merged map is layer-normalized, gated by a SiLU branch of the input, and
//! projected back to the model width.

pub mod scan;

pub use scan::{
    flatten_direction, selective_scan, selective_scan_parallel, selective_scan_seq,
    unflatten_direction, ScanDirection, ScanInput, ALL_DIRECTIONS,
};

use crate::init::{self, Named};
use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{conv::conv2d, norm::layer_norm_channels, ops, Result, Tensor, TensorError};

/// Hyperparameters of one SS2D block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ss2dConfig {
    /// Model width C at the block boundary.
    pub dim: usize,
    /// Inner width multiplier; the scans run at `expand * dim`.
    pub expand: usize,
    /// State dimension N of each recurrence.
    pub state_dim: usize,
    /// Depthwise convolution kernel size (odd).
    pub dwconv_kernel: usize,
    /// Rank of the factored dt projection.
    pub dt_rank: usize,
}

impl Ss2dConfig {
    pub fn new(dim: usize) -> Self {
        Ss2dConfig {
            dim,
            expand: 2,
            state_dim: 16,
            dwconv_kernel: 3,
            dt_rank: (dim / 16).max(1),
        }
    }

    pub fn inner(&self) -> usize {
        self.expand * self.dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.expand == 0 || self.state_dim == 0 || self.dt_rank == 0 {
            return Err(TensorError::invalid("ss2d", "dims must be >= 1"));
        }
        if self.dwconv_kernel.is_multiple_of(2) {
            return Err(TensorError::invalid("ss2d", "dwconv kernel must be odd"));
        }
        Ok(())
    }
}

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;
/// Additive floor keeping `dt` strictly positive even if softplus underflows.
pub const DT_FLOOR: f64 = 1e-12;

/// Per-direction recurrence parameters. The state matrix is diagonal and
/// parameterized as `A = -exp(a_log)`, so it stays strictly negative.
#[derive(Debug, Clone)]
pub struct SsmParams<T: Real> {
    pub a_log: Tensor<T>,
    pub d_skip: Tensor<T>,
    pub dt_low: Tensor<T>,
    pub dt_up: Tensor<T>,
    pub dt_bias: Tensor<T>,
    pub b_proj: Tensor<T>,
    pub c_proj: Tensor<T>,
}

impl<T: Real> SsmParams<T> {
    fn new(cfg: &Ss2dConfig, rng: &mut Rng) -> Self {
        let inner = cfg.inner();
        let n = cfg.state_dim;
        // S4D-real initialization: A_{d,n} = -(n+1)
        let a_log_data: Vec<T> = (0..inner * n)
            .map(|i| T::from_f64(((i % n + 1) as f64).ln()))
            .collect();
        // softplus(dt_bias) lands log-uniformly in [DT_MIN, DT_MAX]
        let dt_bias_data: Vec<T> = (0..inner)
            .map(|_| {
                let dt = (rng.uniform(DT_MIN.ln(), DT_MAX.ln())).exp();
                T::from_f64((dt.exp() - 1.0).ln())
            })
            .collect();
        SsmParams {
            a_log: Tensor::parameter(&[inner, n], a_log_data).expect("valid"),
            d_skip: init::ones_param(&[inner]),
            dt_low: init::kaiming(rng, &[cfg.dt_rank, inner], inner),
            dt_up: init::kaiming(rng, &[inner, cfg.dt_rank], cfg.dt_rank),
            dt_bias: Tensor::parameter(&[inner], dt_bias_data).expect("valid"),
            b_proj: init::kaiming(rng, &[n, inner], inner),
            c_proj: init::kaiming(rng, &[n, inner], inner),
        }
    }

    /// Run one direction: `u: [B, inner, L] -> y: [B, inner, L]`.
    pub fn scan_sequence(&self, u: &Tensor<T>) -> Result<Tensor<T>> {
        let dt = ops::linear_seq(&ops::linear_seq(u, &self.dt_low, None)?, &self.dt_up, Some(&self.dt_bias))?;
        let delta = ops::add_scalar(&ops::softplus(&dt), DT_FLOOR);
        let b_in = ops::linear_seq(u, &self.b_proj, None)?;
        let c_in = ops::linear_seq(u, &self.c_proj, None)?;
        let a = ops::neg(&ops::exp(&self.a_log));
        selective_scan(u, &delta, &a, &b_in, &c_in, &self.d_skip)
    }

    fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "a_log", &self.a_log);
        init::push(out, prefix, "d_skip", &self.d_skip);
        init::push(out, prefix, "dt_low", &self.dt_low);
        init::push(out, prefix, "dt_up", &self.dt_up);
        init::push(out, prefix, "dt_bias", &self.dt_bias);
        init::push(out, prefix, "b_proj", &self.b_proj);
        init::push(out, prefix, "c_proj", &self.c_proj);
    }
}

/// The full SS2D block: shared projections, four direction-specific scans.
#[derive(Debug, Clone)]
pub struct Ss2dBlock<T: Real> {
    pub cfg: Ss2dConfig,
    proj_x_w: Tensor<T>,
    proj_x_b: Tensor<T>,
    proj_z_w: Tensor<T>,
    proj_z_b: Tensor<T>,
    dw_w: Tensor<T>,
    dw_b: Tensor<T>,
    directions: Vec<SsmParams<T>>,
    norm_gamma: Tensor<T>,
    norm_beta: Tensor<T>,
    proj_out_w: Tensor<T>,
    proj_out_b: Tensor<T>,
}

pub const LN_EPS: f64 = 1e-5;

impl<T: Real> Ss2dBlock<T> {
    pub fn new(cfg: Ss2dConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (c, inner, k) = (cfg.dim, cfg.inner(), cfg.dwconv_kernel);
        Ok(Ss2dBlock {
            cfg,
            proj_x_w: init::kaiming(rng, &[inner, c, 1, 1], c),
            proj_x_b: init::zeros_param(&[inner]),
            proj_z_w: init::kaiming(rng, &[inner, c, 1, 1], c),
            proj_z_b: init::zeros_param(&[inner]),
            dw_w: init::kaiming(rng, &[inner, 1, k, k], k * k),
            dw_b: init::zeros_param(&[inner]),
            directions: (0..4).map(|_| SsmParams::new(&cfg, rng)).collect(),
            norm_gamma: init::ones_param(&[inner]),
            norm_beta: init::zeros_param(&[inner]),
            proj_out_w: init::kaiming(rng, &[c, inner, 1, 1], inner),
            proj_out_b: init::zeros_param(&[c]),
        })
    }

    pub fn direction_params(&self, dir: usize) -> &SsmParams<T> {
        &self.directions[dir]
    }

    /// Copy direction `src`'s scan parameters into slot `dst`; the
    /// direction-reversal identity only holds under shared parameters.
    pub fn share_direction_params(&mut self, src: usize, dst: usize) {
        self.directions[dst] = self.directions[src].clone();
    }

    /// Scan stage only (projection + dwconv + four scans + merge), exposed for
    /// the direction-equivariance checks.
    pub fn scan_stage(&self, xin: &Tensor<T>) -> Result<Tensor<T>> {
        let s = xin.shape().to_vec();
        let (h, w) = (s[2], s[3]);
        let mut merged: Option<Tensor<T>> = None;
        for (dir, params) in ALL_DIRECTIONS.iter().zip(&self.directions) {
            let u = flatten_direction(xin, *dir)?;
            let y = params.scan_sequence(&u)?;
            let img = unflatten_direction(&y, *dir, h, w)?;
            merged = Some(match merged {
                None => img,
                Some(acc) => ops::add(&acc, &img)?,
            });
        }
        Ok(merged.expect("four directions"))
    }

    /// `[B, C, H, W] -> [B, C, H, W]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape().to_vec();
        if s.len() != 4 || s[1] != self.cfg.dim {
            return Err(TensorError::shape(
                "ss2d_block",
                format!("expected [B, {}, H, W], got {:?}", self.cfg.dim, s),
            ));
        }
        let pad = self.cfg.dwconv_kernel / 2;
        let xin = conv2d(x, &self.proj_x_w, Some(&self.proj_x_b), 1, 0, 1)?;
        let xin = ops::silu(&conv2d(&xin, &self.dw_w, Some(&self.dw_b), 1, pad, self.cfg.inner())?);
        let merged = self.scan_stage(&xin)?;
        let normed = layer_norm_channels(&merged, &self.norm_gamma, &self.norm_beta, LN_EPS)?;
        let gate = ops::silu(&conv2d(x, &self.proj_z_w, Some(&self.proj_z_b), 1, 0, 1)?);
        let gated = ops::mul(&normed, &gate)?;
        conv2d(&gated, &self.proj_out_w, Some(&self.proj_out_b), 1, 0, 1)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "proj_x_w", &self.proj_x_w);
        init::push(out, prefix, "proj_x_b", &self.proj_x_b);
        init::push(out, prefix, "proj_z_w", &self.proj_z_w);
        init::push(out, prefix, "proj_z_b", &self.proj_z_b);
        init::push(out, prefix, "dw_w", &self.dw_w);
        init::push(out, prefix, "dw_b", &self.dw_b);
        for (i, d) in self.directions.iter().enumerate() {
            d.collect_params(&format!("{prefix}.dir{i}"), out);
        }
        init::push(out, prefix, "norm_gamma", &self.norm_gamma);
        init::push(out, prefix, "norm_beta", &self.norm_beta);
        init::push(out, prefix, "proj_out_w", &self.proj_out_w);
        init::push(out, prefix, "proj_out_b", &self.proj_out_b);
    }
}
