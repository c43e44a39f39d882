//! 2D convolution with zero padding, stride, and channel groups.

use super::{Result, Tensor, TensorError};
use crate::precision::Real;

/// `x: [B, C_in, H, W]`, `weight: [C_out, C_in/groups, k, k]`, optional bias
/// `[C_out]`. Kernels must be odd-sized or equal to the stride (the
/// patch-embedding case). Output spatial dims follow
/// `H' = floor((H + 2*padding - k) / stride) + 1`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape().to_vec();
    let ws = weight.shape().to_vec();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(TensorError::shape(
            "conv2d",
            format!("x {:?} and weight {:?} must be rank 4", xs, ws),
        ));
    }
    let (b, c_in, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (c_out, c_in_pg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if kh != kw {
        return Err(TensorError::shape("conv2d", format!("kernel must be square, got {kh}x{kw}")));
    }
    let k = kh;
    if stride == 0 {
        return Err(TensorError::invalid("conv2d", "stride must be >= 1"));
    }
    if k.is_multiple_of(2) && k != stride {
        return Err(TensorError::invalid(
            "conv2d",
            format!("even kernel {k} only allowed when it equals the stride {stride}"),
        ));
    }
    if groups == 0 || !c_in.is_multiple_of(groups) || !c_out.is_multiple_of(groups) {
        return Err(TensorError::shape(
            "conv2d",
            format!("groups {groups} must divide C_in {c_in} and C_out {c_out}"),
        ));
    }
    if c_in / groups != c_in_pg {
        return Err(TensorError::shape(
            "conv2d",
            format!("weight expects {c_in_pg} in-channels per group, input provides {}", c_in / groups),
        ));
    }
    if let Some(bias) = bias {
        if bias.shape() != [c_out] {
            return Err(TensorError::shape(
                "conv2d",
                format!("bias {:?} vs C_out {c_out}", bias.shape()),
            ));
        }
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(TensorError::shape(
            "conv2d",
            format!("kernel {k} exceeds padded input {}x{}", h + 2 * padding, w + 2 * padding),
        ));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let (cout_pg, cin_pg) = (c_out / groups, c_in / groups);

    // valid output range for a kernel tap: in = out*stride + tap - padding in [0, extent)
    let out_range = move |tap: usize, extent: usize, out_extent: usize| -> (usize, usize) {
        let lo = padding.saturating_sub(tap).div_ceil(stride);
        let hi = if extent + padding > tap {
            ((extent + padding - tap - 1) / stride + 1).min(out_extent)
        } else {
            0
        };
        (lo.min(hi), hi)
    };

    let mut out = vec![T::ZERO; b * c_out * oh * ow];
    x.with_data(|xd| {
        weight.with_data(|wd| {
            for bi in 0..b {
                for co in 0..c_out {
                    let g = co / cout_pg;
                    let out_base = (bi * c_out + co) * oh * ow;
                    for ci_l in 0..cin_pg {
                        let ci = g * cin_pg + ci_l;
                        let x_base = (bi * c_in + ci) * h * w;
                        let w_base = ((co * cin_pg) + ci_l) * k * k;
                        for th in 0..k {
                            let (oy_lo, oy_hi) = out_range(th, h, oh);
                            for tw in 0..k {
                                let wv = wd[w_base + th * k + tw];
                                let (ox_lo, ox_hi) = out_range(tw, w, ow);
                                for oy in oy_lo..oy_hi {
                                    let iy = oy * stride + th - padding;
                                    let x_row = x_base + iy * w;
                                    let o_row = out_base + oy * ow;
                                    for ox in ox_lo..ox_hi {
                                        let ix = ox * stride + tw - padding;
                                        out[o_row + ox] += wv * xd[x_row + ix];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
    });
    if let Some(bias) = bias {
        bias.with_data(|bd| {
            for bi in 0..b {
                for co in 0..c_out {
                    let base = (bi * c_out + co) * oh * ow;
                    for v in &mut out[base..base + oh * ow] {
                        *v += bd[co];
                    }
                }
            }
        });
    }

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(bias) = bias {
        parents.push(bias.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        vec![b, c_out, oh, ow],
        out,
        parents,
        move |go, needs, parents| {
            let gx = needs[0].then(|| {
                parents[1].with_data(|wd| {
                    let mut gx = vec![T::ZERO; b * c_in * h * w];
                    for bi in 0..b {
                        for co in 0..c_out {
                            let g = co / cout_pg;
                            let go_base = (bi * c_out + co) * oh * ow;
                            for ci_l in 0..cin_pg {
                                let ci = g * cin_pg + ci_l;
                                let gx_base = (bi * c_in + ci) * h * w;
                                let w_base = ((co * cin_pg) + ci_l) * k * k;
                                for th in 0..k {
                                    let (oy_lo, oy_hi) = out_range(th, h, oh);
                                    for tw in 0..k {
                                        let wv = wd[w_base + th * k + tw];
                                        let (ox_lo, ox_hi) = out_range(tw, w, ow);
                                        for oy in oy_lo..oy_hi {
                                            let iy = oy * stride + th - padding;
                                            let gx_row = gx_base + iy * w;
                                            let go_row = go_base + oy * ow;
                                            for ox in ox_lo..ox_hi {
                                                let ix = ox * stride + tw - padding;
                                                gx[gx_row + ix] += wv * go[go_row + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    gx
                })
            });
            let gw = needs[1].then(|| {
                parents[0].with_data(|xd| {
                    let mut gw = vec![T::ZERO; c_out * cin_pg * k * k];
                    for bi in 0..b {
                        for co in 0..c_out {
                            let g = co / cout_pg;
                            let go_base = (bi * c_out + co) * oh * ow;
                            for ci_l in 0..cin_pg {
                                let ci = g * cin_pg + ci_l;
                                let x_base = (bi * c_in + ci) * h * w;
                                let w_base = ((co * cin_pg) + ci_l) * k * k;
                                for th in 0..k {
                                    let (oy_lo, oy_hi) = out_range(th, h, oh);
                                    for tw in 0..k {
                                        let (ox_lo, ox_hi) = out_range(tw, w, ow);
                                        let mut acc = T::ZERO;
                                        for oy in oy_lo..oy_hi {
                                            let iy = oy * stride + th - padding;
                                            let x_row = x_base + iy * w;
                                            let go_row = go_base + oy * ow;
                                            for ox in ox_lo..ox_hi {
                                                let ix = ox * stride + tw - padding;
                                                acc += go[go_row + ox] * xd[x_row + ix];
                                            }
                                        }
                                        gw[w_base + th * k + tw] += acc;
                                    }
                                }
                            }
                        }
                    }
                    gw
                })
            });
            let mut outs = vec![gx, gw];
            if has_bias {
                outs.push(needs[2].then(|| {
                    let mut gb = vec![T::ZERO; c_out];
                    for bi in 0..b {
                        for co in 0..c_out {
                            let base = (bi * c_out + co) * oh * ow;
                            gb[co] += go[base..base + oh * ow].iter().copied().sum();
                        }
                    }
                    gb
                }));
            }
            outs
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{assert_grad_close, random_input};
    use crate::tensor::ops::sum_all;

    #[test]
    fn identity_1x1_conv() {
        // w = identity-permutation kernel over 2 channels, b = 0
        let x = Tensor::<f64>::from_vec(&[1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let w = Tensor::<f64>::from_vec(&[2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y = conv2d(&x, &w, None, 1, 0, 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn constant_input_counting() {
        // all-ones 3x3 input, all-ones 3x3 kernel, pad 1: center 9, corner 4
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, 1, 1, 1).unwrap();
        let d = y.to_vec();
        assert_eq!(d[4], 9.0);
        assert_eq!(d[0], 4.0);
        assert_eq!(d[1], 6.0);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::<f64>::zeros(&[1, 1, 7, 5]);
        let w = Tensor::<f64>::zeros(&[3, 1, 3, 3]);
        let y = conv2d(&x, &w, None, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4, 3]);
    }

    #[test]
    fn patch_embed_stride_equals_kernel() {
        let x = Tensor::<f64>::full(&[1, 1, 8, 8], 0.5);
        let w = Tensor::<f64>::full(&[4, 1, 4, 4], 1.0);
        let y = conv2d(&x, &w, None, 4, 0, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 2, 2]);
        assert!(y.to_vec().iter().all(|v| (*v - 8.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_shape_violations() {
        let x = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        let w = Tensor::<f64>::zeros(&[2, 2, 3, 3]);
        // weight expects C_in/groups == 2 but input has 3
        let err = conv2d(&x, &w, None, 1, 1, 1).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("in-channels"), "unexpected diagnostic: {msg}");
        // even kernel with stride != kernel
        let w_even = Tensor::<f64>::zeros(&[2, 3, 4, 4]);
        assert!(conv2d(&x, &w_even, None, 1, 1, 1).is_err());
        // groups must divide channels
        let w_g = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        assert!(conv2d(&x, &w_g, None, 1, 1, 2).is_err());
    }

    #[test]
    fn depthwise_groups_match_per_channel_conv() {
        let x = random_input::<f64>(&[1, 2, 4, 4], 1, 0.0);
        let w = random_input::<f64>(&[2, 1, 3, 3], 2, 0.0);
        let y = conv2d(&x, &w, None, 1, 1, 2).unwrap();
        // channel 0 of output only depends on channel 0 of input
        let x0 = crate::tensor::ops::slice_channels(&x, 0, 1).unwrap();
        let w0 = Tensor::from_vec(&[1, 1, 3, 3], w.to_vec()[..9].to_vec()).unwrap();
        let y0 = conv2d(&x0, &w0, None, 1, 1, 1).unwrap();
        let full = y.to_vec();
        assert_eq!(&full[..16], y0.to_vec().as_slice());
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let x = random_input::<f64>(&[2, 3, 5, 5], 10, 0.0);
        let w0 = random_input::<f64>(&[4, 3, 3, 3], 11, 0.0);
        assert_grad_close(
            &w0,
            |w| {
                let y = conv2d(&x, w, None, 1, 1, 1)?;
                Ok(sum_all(&crate::tensor::ops::mul(&y, &y)?))
            },
            1e-5,
        );
    }

    #[test]
    fn input_bias_gradients_match_finite_differences() {
        let w = random_input::<f64>(&[2, 2, 3, 3], 21, 0.0);
        let b = random_input::<f64>(&[2], 22, 0.0);
        let x0 = random_input::<f64>(&[1, 2, 4, 4], 23, 0.0);
        assert_grad_close(
            &x0,
            |x| {
                let y = conv2d(x, &w, Some(&b), 2, 1, 1)?;
                Ok(sum_all(&crate::tensor::ops::mul(&y, &y)?))
            },
            1e-5,
        );
        assert_grad_close(
            &b,
            |bias| {
                let y = conv2d(&x0, &w, Some(bias), 2, 1, 1)?;
                Ok(sum_all(&crate::tensor::ops::mul(&y, &y)?))
            },
            1e-5,
        );
    }

    #[test]
    fn grouped_gradient_matches_finite_differences() {
        let x = random_input::<f64>(&[1, 4, 4, 4], 31, 0.0);
        let w0 = random_input::<f64>(&[4, 1, 3, 3], 32, 0.0);
        assert_grad_close(
            &w0,
            |w| {
                let y = conv2d(&x, w, None, 1, 1, 4)?;
                Ok(sum_all(&crate::tensor::ops::mul(&y, &y)?))
            },
            1e-5,
        );
    }
}
