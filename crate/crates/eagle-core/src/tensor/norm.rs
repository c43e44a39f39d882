//! Normalization layers: channel-axis layer norm and 2D batch norm.

use super::{Mode, Result, Tensor, TensorError};
use crate::precision::Real;

/// Layer normalization over the channel axis at each spatial position of a
/// `[B, C, H, W]` tensor (the channel-last-LN convention applied to NCHW).
/// Pre-affine, each position has zero mean and unit variance up to `eps`.
pub fn layer_norm_channels<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return Err(TensorError::shape("layer_norm_channels", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    if c == 0 {
        return Err(TensorError::shape("layer_norm_channels", "C must be >= 1"));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape(
            "layer_norm_channels",
            format!("gamma {:?} / beta {:?} vs C {}", gamma.shape(), beta.shape(), c),
        ));
    }
    if eps <= 0.0 {
        return Err(TensorError::invalid("layer_norm_channels", format!("eps must be > 0, got {eps}")));
    }
    let eps = T::from_f64(eps);
    let inv_c = T::from_f64(1.0 / c as f64);

    let mut xhat = vec![T::ZERO; x.numel()];
    let mut inv_std = vec![T::ZERO; b * hw];
    let mut out = vec![T::ZERO; x.numel()];
    x.with_data(|xd| {
        gamma.with_data(|gd| {
            beta.with_data(|bd| {
                for bi in 0..b {
                    for p in 0..hw {
                        let mut mean = T::ZERO;
                        for ci in 0..c {
                            mean += xd[(bi * c + ci) * hw + p];
                        }
                        mean *= inv_c;
                        let mut var = T::ZERO;
                        for ci in 0..c {
                            let d = xd[(bi * c + ci) * hw + p] - mean;
                            var += d * d;
                        }
                        var *= inv_c;
                        let istd = T::ONE / (var + eps).sqrt();
                        inv_std[bi * hw + p] = istd;
                        for ci in 0..c {
                            let idx = (bi * c + ci) * hw + p;
                            let xh = (xd[idx] - mean) * istd;
                            xhat[idx] = xh;
                            out[idx] = gd[ci] * xh + bd[ci];
                        }
                    }
                }
            });
        });
    });

    Ok(Tensor::from_op(
        s.clone(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        move |go, needs, parents| {
            let gx = needs[0].then(|| {
                parents[1].with_data(|gd| {
                    let mut gx = vec![T::ZERO; go.len()];
                    for bi in 0..b {
                        for p in 0..hw {
                            let istd = inv_std[bi * hw + p];
                            let mut mean_g = T::ZERO;
                            let mut mean_gx = T::ZERO;
                            for ci in 0..c {
                                let idx = (bi * c + ci) * hw + p;
                                let g = go[idx] * gd[ci];
                                mean_g += g;
                                mean_gx += g * xhat[idx];
                            }
                            mean_g *= inv_c;
                            mean_gx *= inv_c;
                            for ci in 0..c {
                                let idx = (bi * c + ci) * hw + p;
                                let g = go[idx] * gd[ci];
                                gx[idx] = (g - mean_g - xhat[idx] * mean_gx) * istd;
                            }
                        }
                    }
                    gx
                })
            });
            let gg = needs[1].then(|| {
                let mut gg = vec![T::ZERO; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let mut acc = T::ZERO;
                        for p in 0..hw {
                            let idx = (bi * c + ci) * hw + p;
                            acc += go[idx] * xhat[idx];
                        }
                        gg[ci] += acc;
                    }
                }
                gg
            });
            let gb = needs[2].then(|| {
                let mut gb = vec![T::ZERO; c];
                for bi in 0..b {
                    for ci in 0..c {
                        let base = (bi * c + ci) * hw;
                        gb[ci] += go[base..base + hw].iter().copied().sum();
                    }
                }
                gb
            });
            vec![gx, gg, gb]
        },
    ))
}

/// Batch normalization over `[B, C, H, W]` with running statistics.
///
/// Train mode normalizes with batch statistics (biased variance) and updates
/// the running buffers in place: `running = (1 - momentum) * running +
/// momentum * batch_stat` (unbiased variance for the running buffer). Eval
/// mode normalizes with the stored statistics.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm2d<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    mode: Mode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return Err(TensorError::shape("batch_norm2d", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c] {
            return Err(TensorError::shape(
                "batch_norm2d",
                format!("{name} {:?} vs C {}", t.shape(), c),
            ));
        }
    }
    if eps <= 0.0 {
        return Err(TensorError::invalid("batch_norm2d", format!("eps must be > 0, got {eps}")));
    }
    let eps_t = T::from_f64(eps);
    let n = b * hw;

    match mode {
        Mode::Train => {
            let inv_n = T::from_f64(1.0 / n as f64);
            let mut mean = vec![T::ZERO; c];
            let mut var = vec![T::ZERO; c];
            x.with_data(|xd| {
                for ci in 0..c {
                    let mut acc = T::ZERO;
                    for bi in 0..b {
                        let base = (bi * c + ci) * hw;
                        acc += xd[base..base + hw].iter().copied().sum();
                    }
                    mean[ci] = acc * inv_n;
                    let mut vacc = T::ZERO;
                    for bi in 0..b {
                        let base = (bi * c + ci) * hw;
                        for &v in &xd[base..base + hw] {
                            let d = v - mean[ci];
                            vacc += d * d;
                        }
                    }
                    var[ci] = vacc * inv_n;
                }
            });
            // update running buffers (unbiased variance when possible)
            let mom = T::from_f64(momentum);
            let keep = T::ONE - mom;
            let bessel = if n > 1 {
                T::from_f64(n as f64 / (n as f64 - 1.0))
            } else {
                T::ONE
            };
            running_mean.update_data(|rm| {
                for (r, &m) in rm.iter_mut().zip(&mean) {
                    *r = keep * *r + mom * m;
                }
            });
            running_var.update_data(|rv| {
                for (r, &v) in rv.iter_mut().zip(&var) {
                    *r = keep * *r + mom * (v * bessel);
                }
            });

            let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
            let mut xhat = vec![T::ZERO; x.numel()];
            let mut out = vec![T::ZERO; x.numel()];
            x.with_data(|xd| {
                gamma.with_data(|gd| {
                    beta.with_data(|bd| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    let xh = (xd[base + p] - mean[ci]) * inv_std[ci];
                                    xhat[base + p] = xh;
                                    out[base + p] = gd[ci] * xh + bd[ci];
                                }
                            }
                        }
                    });
                });
            });
            Ok(Tensor::from_op(
                s.clone(),
                out,
                vec![x.clone(), gamma.clone(), beta.clone()],
                move |go, needs, parents| {
                    let gx = needs[0].then(|| {
                        parents[1].with_data(|gd| {
                            let mut sum_g = vec![T::ZERO; c];
                            let mut sum_gx = vec![T::ZERO; c];
                            for bi in 0..b {
                                for ci in 0..c {
                                    let base = (bi * c + ci) * hw;
                                    for p in 0..hw {
                                        sum_g[ci] += go[base + p];
                                        sum_gx[ci] += go[base + p] * xhat[base + p];
                                    }
                                }
                            }
                            let mut gx = vec![T::ZERO; go.len()];
                            let inv_n = T::from_f64(1.0 / n as f64);
                            for bi in 0..b {
                                for ci in 0..c {
                                    let base = (bi * c + ci) * hw;
                                    let coeff = gd[ci] * inv_std[ci];
                                    for p in 0..hw {
                                        gx[base + p] = coeff
                                            * (go[base + p]
                                                - inv_n * sum_g[ci]
                                                - xhat[base + p] * inv_n * sum_gx[ci]);
                                    }
                                }
                            }
                            gx
                        })
                    });
                    let gg = needs[1].then(|| {
                        let mut gg = vec![T::ZERO; c];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    gg[ci] += go[base + p] * xhat[base + p];
                                }
                            }
                        }
                        gg
                    });
                    let gb = needs[2].then(|| {
                        let mut gb = vec![T::ZERO; c];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                gb[ci] += go[base..base + hw].iter().copied().sum();
                            }
                        }
                        gb
                    });
                    vec![gx, gg, gb]
                },
            ))
        }
        Mode::Eval => {
            let rm = running_mean.to_vec();
            let rv = running_var.to_vec();
            let inv_std: Vec<T> = rv.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
            let mut out = vec![T::ZERO; x.numel()];
            let mut xhat = vec![T::ZERO; x.numel()];
            x.with_data(|xd| {
                gamma.with_data(|gd| {
                    beta.with_data(|bd| {
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    let xh = (xd[base + p] - rm[ci]) * inv_std[ci];
                                    xhat[base + p] = xh;
                                    out[base + p] = gd[ci] * xh + bd[ci];
                                }
                            }
                        }
                    });
                });
            });
            let inv_std_c = inv_std.clone();
            Ok(Tensor::from_op(
                s.clone(),
                out,
                vec![x.clone(), gamma.clone(), beta.clone()],
                move |go, needs, parents| {
                    // stored statistics are constants here
                    let gx = needs[0].then(|| {
                        parents[1].with_data(|gd| {
                            let mut gx = vec![T::ZERO; go.len()];
                            for bi in 0..b {
                                for ci in 0..c {
                                    let base = (bi * c + ci) * hw;
                                    let coeff = gd[ci] * inv_std_c[ci];
                                    for p in 0..hw {
                                        gx[base + p] = go[base + p] * coeff;
                                    }
                                }
                            }
                            gx
                        })
                    });
                    let gg = needs[1].then(|| {
                        let mut gg = vec![T::ZERO; c];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                for p in 0..hw {
                                    gg[ci] += go[base + p] * xhat[base + p];
                                }
                            }
                        }
                        gg
                    });
                    let gb = needs[2].then(|| {
                        let mut gb = vec![T::ZERO; c];
                        for bi in 0..b {
                            for ci in 0..c {
                                let base = (bi * c + ci) * hw;
                                gb[ci] += go[base..base + hw].iter().copied().sum();
                            }
                        }
                        gb
                    });
                    vec![gx, gg, gb]
                },
            ))
        }
    }
}
