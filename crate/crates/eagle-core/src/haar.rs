//! Haar wavelet transform block: lossless spatial downsampling.
//!
//! A single decomposition level splits each non-overlapping 2x2 block
//! `[[a, b], [c, d]]` into four sub-bands with the orthonormal factor 1/2:
//!
//! ```text
//! L  = (a + b + c + d) / 2      low-frequency approximation
//! HV = (a - b + c - d) / 2      vertical detail
//! HH = (a + b - c - d) / 2      horizontal detail
//! HD = (a - b - c + d) / 2      diagonal detail
//! ```
//!
//! The transform is orthonormal, so energy is preserved (Parseval) and the
//! inverse reconstructs the input exactly up to roundoff. The block packs the
//! four bands into the channel axis in the fixed order `[L, HV, HH, HD]`,
//! restores the channel count with a 1x1 convolution, and applies batch
//! normalization and ReLU.

use crate::init::{self, Named};
use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{conv::conv2d, norm::batch_norm2d, ops, Mode, Result, Tensor, TensorError};

/// The four Haar components of a feature map, each `[..., H/2, W/2]`.
#[derive(Debug, Clone)]
pub struct SubBands<T: Real> {
    pub low: Tensor<T>,
    pub vert: Tensor<T>,
    pub horiz: Tensor<T>,
    pub diag: Tensor<T>,
}

fn check_even(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(TensorError::shape(op, format!("need at least 2 dims, got {:?}", shape)));
    }
    let h = shape[shape.len() - 2];
    let w = shape[shape.len() - 1];
    if h == 0 || w == 0 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(TensorError::shape(
            op,
            format!("spatial dims must be even and nonzero, got {h}x{w}"),
        ));
    }
    let lead: usize = shape[..shape.len() - 2].iter().product();
    Ok((lead, h, w))
}

/// One-level decomposition into a band-major packed tensor: the leading axes
/// are preserved and the channel axis (second-to-last of the leading axes'
/// view) is quadrupled — for `[B, C, H, W]` the output is `[B, 4C, H/2, W/2]`
/// with channel blocks `[L, HV, HH, HD]`.
pub fn haar_pack<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = x.shape().to_vec();
    let (lead, h, w) = check_even("haar_pack", &shape)?;
    if shape.len() < 3 {
        return Err(TensorError::shape("haar_pack", format!("need a channel axis, got {:?}", shape)));
    }
    let (hh, hw) = (h / 2, w / 2);
    let c = shape[shape.len() - 3];
    let batch = lead / c;
    let half = T::from_f64(0.5);

    let mut out = vec![T::ZERO; lead * 4 * hh * hw];
    let band_sz = hh * hw;
    x.with_data(|xd| {
        for bi in 0..batch {
            for ci in 0..c {
                let in_base = (bi * c + ci) * h * w;
                let out_base = |band: usize| (bi * 4 * c + band * c + ci) * band_sz;
                for by in 0..hh {
                    for bx in 0..hw {
                        let a = xd[in_base + (2 * by) * w + 2 * bx];
                        let b = xd[in_base + (2 * by) * w + 2 * bx + 1];
                        let cc = xd[in_base + (2 * by + 1) * w + 2 * bx];
                        let d = xd[in_base + (2 * by + 1) * w + 2 * bx + 1];
                        let p = by * hw + bx;
                        out[out_base(0) + p] = (a + b + cc + d) * half;
                        out[out_base(1) + p] = (a - b + cc - d) * half;
                        out[out_base(2) + p] = (a + b - cc - d) * half;
                        out[out_base(3) + p] = (a - b - cc + d) * half;
                    }
                }
            }
        }
    });

    let mut out_shape = shape.clone();
    let n = out_shape.len();
    out_shape[n - 3] = 4 * c;
    out_shape[n - 2] = hh;
    out_shape[n - 1] = hw;
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![x.clone()],
        move |go, needs, _| {
            // orthonormal: the adjoint scatters each band value back with the
            // same +/- pattern and factor 1/2
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; batch * c * h * w];
                for bi in 0..batch {
                    for ci in 0..c {
                        let gx_base = (bi * c + ci) * h * w;
                        let go_base = |band: usize| (bi * 4 * c + band * c + ci) * band_sz;
                        for by in 0..hh {
                            for bx in 0..hw {
                                let p = by * hw + bx;
                                let l = go[go_base(0) + p];
                                let hv = go[go_base(1) + p];
                                let hh_ = go[go_base(2) + p];
                                let hd = go[go_base(3) + p];
                                gx[gx_base + (2 * by) * w + 2 * bx] = (l + hv + hh_ + hd) * half;
                                gx[gx_base + (2 * by) * w + 2 * bx + 1] = (l - hv + hh_ - hd) * half;
                                gx[gx_base + (2 * by + 1) * w + 2 * bx] = (l + hv - hh_ - hd) * half;
                                gx[gx_base + (2 * by + 1) * w + 2 * bx + 1] = (l - hv - hh_ + hd) * half;
                            }
                        }
                    }
                }
                gx
            })]
        },
    ))
}

/// Inverse of [`haar_pack`]: `[B, 4C, H/2, W/2] -> [B, C, H, W]`.
pub fn haar_unpack<T: Real>(packed: &Tensor<T>) -> Result<Tensor<T>> {
    let shape = packed.shape().to_vec();
    if shape.len() < 3 {
        return Err(TensorError::shape("haar_unpack", format!("need a channel axis, got {:?}", shape)));
    }
    let c4 = shape[shape.len() - 3];
    if !c4.is_multiple_of(4) {
        return Err(TensorError::shape("haar_unpack", format!("channel count {c4} not divisible by 4")));
    }
    let c = c4 / 4;
    let hh = shape[shape.len() - 2];
    let hw = shape[shape.len() - 1];
    let (h, w) = (2 * hh, 2 * hw);
    let lead: usize = shape[..shape.len() - 2].iter().product();
    let batch = lead / c4;
    let half = T::from_f64(0.5);
    let band_sz = hh * hw;

    let mut out = vec![T::ZERO; batch * c * h * w];
    packed.with_data(|pd| {
        for bi in 0..batch {
            for ci in 0..c {
                let out_base = (bi * c + ci) * h * w;
                let in_base = |band: usize| (bi * 4 * c + band * c + ci) * band_sz;
                for by in 0..hh {
                    for bx in 0..hw {
                        let p = by * hw + bx;
                        let l = pd[in_base(0) + p];
                        let hv = pd[in_base(1) + p];
                        let hh_ = pd[in_base(2) + p];
                        let hd = pd[in_base(3) + p];
                        out[out_base + (2 * by) * w + 2 * bx] = (l + hv + hh_ + hd) * half;
                        out[out_base + (2 * by) * w + 2 * bx + 1] = (l - hv + hh_ - hd) * half;
                        out[out_base + (2 * by + 1) * w + 2 * bx] = (l + hv - hh_ - hd) * half;
                        out[out_base + (2 * by + 1) * w + 2 * bx + 1] = (l - hv - hh_ + hd) * half;
                    }
                }
            }
        }
    });

    let mut out_shape = shape.clone();
    let n = out_shape.len();
    out_shape[n - 3] = c;
    out_shape[n - 2] = h;
    out_shape[n - 1] = w;
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![packed.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gp = vec![T::ZERO; batch * c4 * band_sz];
                for bi in 0..batch {
                    for ci in 0..c {
                        let go_base = (bi * c + ci) * h * w;
                        let gp_base = |band: usize| (bi * 4 * c + band * c + ci) * band_sz;
                        for by in 0..hh {
                            for bx in 0..hw {
                                let a = go[go_base + (2 * by) * w + 2 * bx];
                                let b = go[go_base + (2 * by) * w + 2 * bx + 1];
                                let cc = go[go_base + (2 * by + 1) * w + 2 * bx];
                                let d = go[go_base + (2 * by + 1) * w + 2 * bx + 1];
                                let p = by * hw + bx;
                                gp[gp_base(0) + p] = (a + b + cc + d) * half;
                                gp[gp_base(1) + p] = (a - b + cc - d) * half;
                                gp[gp_base(2) + p] = (a + b - cc - d) * half;
                                gp[gp_base(3) + p] = (a - b - cc + d) * half;
                            }
                        }
                    }
                }
                gp
            })]
        },
    ))
}

/// Decompose into the four sub-bands.
///
/// Accepts `[C, H, W]` or `[B, C, H, W]`; odd spatial dims are rejected
/// (padding is the caller's job).
pub fn haar_forward<T: Real>(x: &Tensor<T>) -> Result<SubBands<T>> {
    let rank3 = x.shape().len() == 3;
    let x4 = if rank3 {
        let s = x.shape();
        ops::reshape(x, &[1, s[0], s[1], s[2]])?
    } else {
        x.clone()
    };
    let c = x4.shape()[1];
    let packed = haar_pack(&x4)?;
    let mut bands = Vec::with_capacity(4);
    for band in 0..4 {
        let sl = ops::slice_channels(&packed, band * c, c)?;
        bands.push(if rank3 {
            let s = sl.shape().to_vec();
            ops::reshape(&sl, &[s[1], s[2], s[3]])?
        } else {
            sl
        });
    }
    let diag = bands.pop().unwrap();
    let horiz = bands.pop().unwrap();
    let vert = bands.pop().unwrap();
    let low = bands.pop().unwrap();
    Ok(SubBands { low, vert, horiz, diag })
}

/// Reconstruct the input from its sub-bands (verification oracle for the
/// lossless-downsampling property).
pub fn haar_inverse<T: Real>(bands: &SubBands<T>) -> Result<Tensor<T>> {
    let rank3 = bands.low.shape().len() == 3;
    let as4 = |t: &Tensor<T>| -> Result<Tensor<T>> {
        if rank3 {
            let s = t.shape();
            ops::reshape(t, &[1, s[0], s[1], s[2]])
        } else {
            Ok(t.clone())
        }
    };
    let packed = ops::concat_channels(&[
        as4(&bands.low)?,
        as4(&bands.vert)?,
        as4(&bands.horiz)?,
        as4(&bands.diag)?,
    ])?;
    let x = haar_unpack(&packed)?;
    if rank3 {
        let s = x.shape().to_vec();
        ops::reshape(&x, &[s[1], s[2], s[3]])
    } else {
        Ok(x)
    }
}

/// Parameters of the Haar wavelet transform block: 1x1 projection `4C -> C`
/// plus batch-norm affine weights and running statistics.
#[derive(Debug, Clone)]
pub struct Hwtb<T: Real> {
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub bn_gamma: Tensor<T>,
    pub bn_beta: Tensor<T>,
    pub bn_mean: Tensor<T>,
    pub bn_var: Tensor<T>,
    channels: usize,
}

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

impl<T: Real> Hwtb<T> {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        Hwtb {
            proj_w: init::kaiming(rng, &[channels, 4 * channels, 1, 1], 4 * channels),
            proj_b: init::zeros_param(&[channels]),
            bn_gamma: init::ones_param(&[channels]),
            bn_beta: init::zeros_param(&[channels]),
            bn_mean: init::buffer(&[channels], 0.0),
            bn_var: init::buffer(&[channels], 1.0),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[B, C, H, W] -> [B, C, H/2, W/2]`: Haar pack, 1x1 conv, BN, ReLU.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(TensorError::shape(
                "hwtb_forward",
                format!("expected [B, {}, H, W], got {:?}", self.channels, s),
            ));
        }
        let packed = haar_pack(x)?;
        let mixed = conv2d(&packed, &self.proj_w, Some(&self.proj_b), 1, 0, 1)?;
        let normed = batch_norm2d(
            &mixed,
            &self.bn_gamma,
            &self.bn_beta,
            &self.bn_mean,
            &self.bn_var,
            mode,
            BN_MOMENTUM,
            BN_EPS,
        )?;
        Ok(ops::relu(&normed))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "proj_w", &self.proj_w);
        init::push(out, prefix, "proj_b", &self.proj_b);
        init::push(out, prefix, "bn_gamma", &self.bn_gamma);
        init::push(out, prefix, "bn_beta", &self.bn_beta);
    }

    pub fn collect_buffers(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "bn_mean", &self.bn_mean);
        init::push(out, prefix, "bn_var", &self.bn_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_input;
    use crate::tensor::ops::{mul, sum_all};

    fn energy(data: &[f64]) -> f64 {
        data.iter().map(|v| v * v).sum()
    }

    #[test]
    fn constant_block_concentrates_in_low() {
        let x = Tensor::<f64>::full(&[1, 2, 2], 1.0);
        let bands = haar_forward(&x).unwrap();
        assert_eq!(bands.low.to_vec(), vec![2.0]);
        assert_eq!(bands.vert.to_vec(), vec![0.0]);
        assert_eq!(bands.horiz.to_vec(), vec![0.0]);
        assert_eq!(bands.diag.to_vec(), vec![0.0]);
    }

    #[test]
    fn identity_pattern_block() {
        // [[1, 0], [0, 1]] -> L = 1, HV = 0, HH = 0, HD = 1
        let x = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let bands = haar_forward(&x).unwrap();
        assert_eq!(bands.low.to_vec(), vec![1.0]);
        assert_eq!(bands.vert.to_vec(), vec![0.0]);
        assert_eq!(bands.horiz.to_vec(), vec![0.0]);
        assert_eq!(bands.diag.to_vec(), vec![1.0]);
    }

    #[test]
    fn rejects_odd_dims() {
        assert!(haar_forward(&Tensor::<f64>::zeros(&[1, 3, 4])).is_err());
        assert!(haar_forward(&Tensor::<f64>::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn energy_is_preserved() {
        let x = random_input::<f64>(&[2, 8, 8], 61, 0.0);
        let bands = haar_forward(&x).unwrap();
        let e_in = energy(&x.to_vec());
        let e_out = energy(&bands.low.to_vec())
            + energy(&bands.vert.to_vec())
            + energy(&bands.horiz.to_vec())
            + energy(&bands.diag.to_vec());
        assert!((e_in - e_out).abs() / e_in < 1e-6, "{e_in} vs {e_out}");
    }

    #[test]
    fn zero_bands_invert_to_zero() {
        let bands = SubBands {
            low: Tensor::<f64>::zeros(&[1, 2, 2]),
            vert: Tensor::<f64>::zeros(&[1, 2, 2]),
            horiz: Tensor::<f64>::zeros(&[1, 2, 2]),
            diag: Tensor::<f64>::zeros(&[1, 2, 2]),
        };
        let x = haar_inverse(&bands).unwrap();
        assert_eq!(x.shape(), &[1, 4, 4]);
        assert!(x.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn low_only_invert_is_constant_block() {
        // L = 2, others 0 -> [[1, 1], [1, 1]]
        let bands = SubBands {
            low: Tensor::<f64>::full(&[1, 1, 1], 2.0),
            vert: Tensor::<f64>::zeros(&[1, 1, 1]),
            horiz: Tensor::<f64>::zeros(&[1, 1, 1]),
            diag: Tensor::<f64>::zeros(&[1, 1, 1]),
        };
        let x = haar_inverse(&bands).unwrap();
        assert_eq!(x.to_vec(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn roundtrip_reconstructs_exactly() {
        for seed in 0..5u64 {
            let x = random_input::<f64>(&[3, 8, 6], 100 + seed, 0.0);
            let back = haar_inverse(&haar_forward(&x).unwrap()).unwrap();
            let max_err = x
                .to_vec()
                .iter()
                .zip(back.to_vec())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_err < 1e-12, "roundtrip error {max_err}");
        }
    }

    #[test]
    fn hwtb_shapes_and_nonnegativity() {
        let mut rng = crate::rng::Rng::new(9);
        let block = Hwtb::<f32>::new(32, &mut rng);
        let x = random_input::<f32>(&[1, 32, 64, 64], 62, 0.0);
        let y = block.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[1, 32, 32, 32]);
        assert!(y.to_vec().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn hwtb_with_low_selector_equals_relu_of_low_band() {
        // proj_w = identity on the first C channels (the L band), bias 0,
        // BN bypassed via stored stats mean 0 / var (1 - eps).
        let c = 3;
        let mut rng = crate::rng::Rng::new(10);
        let block = {
            let mut b = Hwtb::<f64>::new(c, &mut rng);
            let mut w = vec![0.0; c * 4 * c];
            for ci in 0..c {
                w[ci * 4 * c + ci] = 1.0; // pick band 0 (L), channel ci
            }
            b.proj_w = Tensor::parameter(&[c, 4 * c, 1, 1], w).unwrap();
            b.proj_b = Tensor::parameter(&[c], vec![0.0; c]).unwrap();
            b.bn_var = Tensor::full(&[c], 1.0 - BN_EPS);
            b
        };
        let x = random_input::<f64>(&[1, c, 6, 6], 63, 0.0);
        let y = block.forward(&x, Mode::Eval).unwrap();
        let low = haar_forward(&x).unwrap().low;
        let expect: Vec<f64> = low.to_vec().iter().map(|v| v.max(0.0)).collect();
        let max_err = y
            .to_vec()
            .iter()
            .zip(&expect)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12, "selector mismatch {max_err}");
    }

    #[test]
    fn hwtb_gradient_matches_finite_differences() {
        let mut rng = crate::rng::Rng::new(11);
        let block = Hwtb::<f64>::new(2, &mut rng);
        let x0 = random_input::<f64>(&[1, 2, 4, 4], 64, 0.3);
        crate::gradcheck::assert_grad_close(
            &x0,
            |x| {
                let y = block.forward(x, Mode::Train)?;
                Ok(sum_all(&mul(&y, &y)?))
            },
            1e-5,
        );
    }

    #[test]
    fn param_and_buffer_names() {
        let mut rng = crate::rng::Rng::new(12);
        let block = Hwtb::<f32>::new(4, &mut rng);
        let mut params = Vec::new();
        let mut buffers = Vec::new();
        block.collect_params("hwtb", &mut params);
        block.collect_buffers("hwtb", &mut buffers);
        assert_eq!(params.len(), 4);
        assert_eq!(buffers.len(), 2);
        assert_eq!(params[0].0, "hwtb.proj_w");
    }
}
