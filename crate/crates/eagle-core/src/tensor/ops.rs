//! Differentiable tensor operations.
//!
//! Broadcasting is deliberately restricted: scalar·tensor plus the explicit
//! channel/spatial gate ops below. Everything else demands exact shapes so
//! pullbacks stay auditable.

use super::{Result, Tensor, TensorError};
use crate::precision::Real;

fn check_same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            op,
            format!("lhs {:?} vs rhs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("add", a, b)?;
    let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(x, y)| *x + *y).collect()));
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |go, needs, _| {
            vec![
                needs[0].then(|| go.to_vec()),
                needs[1].then(|| go.to_vec()),
            ]
        },
    ))
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("sub", a, b)?;
    let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(x, y)| *x - *y).collect()));
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |go, needs, _| {
            vec![
                needs[0].then(|| go.to_vec()),
                needs[1].then(|| go.iter().map(|g| -*g).collect()),
            ]
        },
    ))
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape("mul", a, b)?;
    let data = a.with_data(|ad| b.with_data(|bd| ad.iter().zip(bd).map(|(x, y)| *x * *y).collect()));
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |go, needs, parents| {
            vec![
                needs[0].then(|| parents[1].with_data(|bd| go.iter().zip(bd).map(|(g, y)| *g * *y).collect())),
                needs[1].then(|| parents[0].with_data(|ad| go.iter().zip(ad).map(|(g, x)| *g * *x).collect())),
            ]
        },
    ))
}

/// Sum a non-empty list of same-shape tensors in the given (fixed) order.
pub fn sum_tensors<T: Real>(tensors: &[Tensor<T>]) -> Result<Tensor<T>> {
    let mut acc = tensors
        .first()
        .cloned()
        .ok_or_else(|| TensorError::invalid("sum_tensors", "empty input list"))?;
    for t in &tensors[1..] {
        acc = add(&acc, t)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

fn unary<T: Real>(
    x: &Tensor<T>,
    forward: impl Fn(T) -> T,
    // local derivative as a function of (input, output)
    derivative: impl Fn(T, T) -> T + 'static,
) -> Tensor<T> {
    let data: Vec<T> = x.with_data(|xd| xd.iter().map(|v| forward(*v)).collect());
    let saved_out = data.clone();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        move |go, needs, parents| {
            vec![needs[0].then(|| {
                parents[0].with_data(|xd| {
                    go.iter()
                        .zip(xd.iter().zip(&saved_out))
                        .map(|(g, (xi, yi))| *g * derivative(*xi, *yi))
                        .collect()
                })
            })]
        },
    )
}

pub fn neg<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| -v, |_, _| -T::ONE)
}

pub fn scale<T: Real>(x: &Tensor<T>, factor: f64) -> Tensor<T> {
    let f = T::from_f64(factor);
    unary(x, move |v| v * f, move |_, _| f)
}

pub fn add_scalar<T: Real>(x: &Tensor<T>, c: f64) -> Tensor<T> {
    let c = T::from_f64(c);
    unary(x, move |v| v + c, |_, _| T::ONE)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| v.maximum(T::ZERO),
        |xi, _| if xi > T::ZERO { T::ONE } else { T::ZERO },
    )
}

fn sigmoid_scalar<T: Real>(v: T) -> T {
    // numerically stable in both tails
    if v >= T::ZERO {
        T::ONE / (T::ONE + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::ONE + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, sigmoid_scalar, |_, yi| yi * (T::ONE - yi))
}

pub fn silu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| v * sigmoid_scalar(v),
        |xi, _| {
            let s = sigmoid_scalar(xi);
            s * (T::ONE + xi * (T::ONE - s))
        },
    )
}

pub fn softplus<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| v.maximum(T::ZERO) + (T::ONE + (-v.abs()).exp()).ln(),
        |xi, _| sigmoid_scalar(xi),
    )
}

pub fn exp<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.exp(), |_, yi| yi)
}

/// Natural log; caller is responsible for keeping inputs positive (the loss
/// path clamps probabilities first).
pub fn ln<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| v.ln(), |xi, _| T::ONE / xi)
}

/// Elementwise reciprocal; caller keeps inputs away from zero.
pub fn recip<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    unary(x, |v| T::ONE / v, |_, yi| -yi * yi)
}

/// Clamp to [lo, hi]; gradient passes through the closed interval.
pub fn clamp<T: Real>(x: &Tensor<T>, lo: f64, hi: f64) -> Tensor<T> {
    let (lo, hi) = (T::from_f64(lo), T::from_f64(hi));
    unary(
        x,
        move |v| v.maximum(lo).minimum(hi),
        move |xi, _| if xi >= lo && xi <= hi { T::ONE } else { T::ZERO },
    )
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

pub fn sum_all<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let total: T = x.with_data(|xd| xd.iter().copied().sum());
    let n = x.numel();
    Tensor::from_op(vec![1], vec![total], vec![x.clone()], move |go, needs, _| {
        vec![needs[0].then(|| vec![go[0]; n])]
    })
}

pub fn mean_all<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    scale(&sum_all(x), 1.0 / x.numel() as f64)
}

// ---------------------------------------------------------------------------
// shape manipulation
// ---------------------------------------------------------------------------

pub fn reshape<T: Real>(x: &Tensor<T>, new_shape: &[usize]) -> Result<Tensor<T>> {
    if new_shape.iter().product::<usize>() != x.numel() {
        return Err(TensorError::shape(
            "reshape",
            format!("cannot view {:?} as {:?}", x.shape(), new_shape),
        ));
    }
    Ok(Tensor::from_op(
        new_shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        |go, needs, _| vec![needs[0].then(|| go.to_vec())],
    ))
}

/// Concatenate along the channel axis (axis 1) of `[B, C_i, ...]` tensors.
pub fn concat_channels<T: Real>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat_channels", "empty input list"))?;
    let rank = first.shape().len();
    if rank < 2 {
        return Err(TensorError::shape("concat_channels", "rank must be >= 2"));
    }
    let batch = first.shape()[0];
    let tail: Vec<usize> = first.shape()[2..].to_vec();
    let mut channels = Vec::with_capacity(parts.len());
    for p in parts {
        if p.shape()[0] != batch || p.shape()[2..] != tail[..] {
            return Err(TensorError::shape(
                "concat_channels",
                format!("incompatible {:?} vs {:?}", p.shape(), first.shape()),
            ));
        }
        channels.push(p.shape()[1]);
    }
    let spatial: usize = tail.iter().product();
    let total_c: usize = channels.iter().sum();
    let mut data = vec![T::ZERO; batch * total_c * spatial];
    let mut offset_c = 0;
    for (p, &c) in parts.iter().zip(&channels) {
        p.with_data(|pd| {
            for b in 0..batch {
                let src = &pd[b * c * spatial..(b + 1) * c * spatial];
                let dst_start = (b * total_c + offset_c) * spatial;
                data[dst_start..dst_start + c * spatial].copy_from_slice(src);
            }
        });
        offset_c += c;
    }
    let mut out_shape = vec![batch, total_c];
    out_shape.extend_from_slice(&tail);
    let channels_cl = channels.clone();
    Ok(Tensor::from_op(
        out_shape,
        data,
        parts.to_vec(),
        move |go, needs, _| {
            let mut outs = Vec::with_capacity(channels_cl.len());
            let mut offset_c = 0;
            for (i, &c) in channels_cl.iter().enumerate() {
                if needs[i] {
                    let mut pc = vec![T::ZERO; batch * c * spatial];
                    for b in 0..batch {
                        let src_start = (b * total_c + offset_c) * spatial;
                        pc[b * c * spatial..(b + 1) * c * spatial]
                            .copy_from_slice(&go[src_start..src_start + c * spatial]);
                    }
                    outs.push(Some(pc));
                } else {
                    outs.push(None);
                }
                offset_c += c;
            }
            outs
        },
    ))
}

/// Slice `len` channels starting at `start` from a `[B, C, ...]` tensor.
pub fn slice_channels<T: Real>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if shape.len() < 2 || start + len > shape[1] {
        return Err(TensorError::shape(
            "slice_channels",
            format!("slice [{start}, {}) of {:?}", start + len, shape),
        ));
    }
    let batch = shape[0];
    let c = shape[1];
    let spatial: usize = shape[2..].iter().product();
    let mut data = vec![T::ZERO; batch * len * spatial];
    x.with_data(|xd| {
        for b in 0..batch {
            let src_start = (b * c + start) * spatial;
            data[b * len * spatial..(b + 1) * len * spatial]
                .copy_from_slice(&xd[src_start..src_start + len * spatial]);
        }
    });
    let mut out_shape = vec![batch, len];
    out_shape.extend_from_slice(&shape[2..]);
    let total = x.numel();
    Ok(Tensor::from_op(
        out_shape,
        data,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut pc = vec![T::ZERO; total];
                for b in 0..batch {
                    let dst_start = (b * c + start) * spatial;
                    pc[dst_start..dst_start + len * spatial]
                        .copy_from_slice(&go[b * len * spatial..(b + 1) * len * spatial]);
                }
                pc
            })]
        },
    ))
}

// ---------------------------------------------------------------------------
// linear maps over tokens
// ---------------------------------------------------------------------------

/// Per-token affine map: `[B, C_in, L] -> [B, C_out, L]` with weight
/// `[C_out, C_in]` and optional bias `[C_out]`.
pub fn linear_seq<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 3 || ws.len() != 2 || ws[1] != xs[1] {
        return Err(TensorError::shape(
            "linear_seq",
            format!("x {:?} vs weight {:?}", xs, ws),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [ws[0]] {
            return Err(TensorError::shape(
                "linear_seq",
                format!("bias {:?} vs out channels {}", b.shape(), ws[0]),
            ));
        }
    }
    let (batch, c_in, seq) = (xs[0], xs[1], xs[2]);
    let c_out = ws[0];
    let mut data = vec![T::ZERO; batch * c_out * seq];
    x.with_data(|xd| {
        weight.with_data(|wd| {
            for b in 0..batch {
                for co in 0..c_out {
                    let w_row = &wd[co * c_in..(co + 1) * c_in];
                    let out_row = &mut data[(b * c_out + co) * seq..(b * c_out + co + 1) * seq];
                    for (ci, &w) in w_row.iter().enumerate() {
                        let x_row = &xd[(b * c_in + ci) * seq..(b * c_in + ci + 1) * seq];
                        for (o, &xv) in out_row.iter_mut().zip(x_row) {
                            *o += w * xv;
                        }
                    }
                }
            }
        });
    });
    if let Some(b) = bias {
        b.with_data(|bd| {
            for bi in 0..batch {
                for co in 0..c_out {
                    let out_row = &mut data[(bi * c_out + co) * seq..(bi * c_out + co + 1) * seq];
                    for o in out_row {
                        *o += bd[co];
                    }
                }
            }
        });
    }
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        vec![batch, c_out, seq],
        data,
        parents,
        move |go, needs, parents| {
            let gx = needs[0].then(|| {
                parents[1].with_data(|wd| {
                    let mut gx = vec![T::ZERO; batch * c_in * seq];
                    for b in 0..batch {
                        for co in 0..c_out {
                            let go_row = &go[(b * c_out + co) * seq..(b * c_out + co + 1) * seq];
                            let w_row = &wd[co * c_in..(co + 1) * c_in];
                            for (ci, &w) in w_row.iter().enumerate() {
                                let gx_row =
                                    &mut gx[(b * c_in + ci) * seq..(b * c_in + ci + 1) * seq];
                                for (g, &v) in gx_row.iter_mut().zip(go_row) {
                                    *g += w * v;
                                }
                            }
                        }
                    }
                    gx
                })
            });
            let gw = needs[1].then(|| {
                parents[0].with_data(|xd| {
                    let mut gw = vec![T::ZERO; c_out * c_in];
                    for b in 0..batch {
                        for co in 0..c_out {
                            let go_row = &go[(b * c_out + co) * seq..(b * c_out + co + 1) * seq];
                            for ci in 0..c_in {
                                let x_row = &xd[(b * c_in + ci) * seq..(b * c_in + ci + 1) * seq];
                                let mut acc = T::ZERO;
                                for (&g, &xv) in go_row.iter().zip(x_row) {
                                    acc += g * xv;
                                }
                                gw[co * c_in + ci] += acc;
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
                    for b in 0..batch {
                        for co in 0..c_out {
                            let go_row = &go[(b * c_out + co) * seq..(b * c_out + co + 1) * seq];
                            gb[co] += go_row.iter().copied().sum();
                        }
                    }
                    gb
                }));
            }
            outs
        },
    ))
}

/// Affine map on feature vectors: `[B, C_in] -> [B, C_out]`.
pub fn linear_features<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    if xs.len() != 2 {
        return Err(TensorError::shape(
            "linear_features",
            format!("expected rank-2 input, got {:?}", xs),
        ));
    }
    let as_seq = reshape(x, &[xs[0], xs[1], 1])?;
    let y = linear_seq(&as_seq, weight, bias)?;
    let c_out = y.shape()[1];
    reshape(&y, &[xs[0], c_out])
}

// ---------------------------------------------------------------------------
// pooling and gates
// ---------------------------------------------------------------------------

/// Global average pool `[B, C, H, W] -> [B, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::shape("global_avg_pool", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let inv = T::from_f64(1.0 / hw as f64);
    let data: Vec<T> = x.with_data(|xd| {
        (0..b * c)
            .map(|i| xd[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv)
            .collect()
    });
    Ok(Tensor::from_op(
        vec![b, c],
        data,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; b * c * hw];
                for i in 0..b * c {
                    let g = go[i] * inv;
                    for v in &mut gx[i * hw..(i + 1) * hw] {
                        *v = g;
                    }
                }
                gx
            })]
        },
    ))
}

/// Global max pool `[B, C, H, W] -> [B, C]`; the gradient routes to the first
/// maximal element, keeping backward deterministic under ties.
pub fn global_max_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::shape("global_max_pool", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut argmax = vec![0usize; b * c];
    let data: Vec<T> = x.with_data(|xd| {
        (0..b * c)
            .map(|i| {
                let row = &xd[i * hw..(i + 1) * hw];
                let mut best = row[0];
                let mut best_at = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        best_at = j;
                    }
                }
                argmax[i] = best_at;
                best
            })
            .collect()
    });
    Ok(Tensor::from_op(
        vec![b, c],
        data,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; b * c * hw];
                for i in 0..b * c {
                    gx[i * hw + argmax[i]] = go[i];
                }
                gx
            })]
        },
    ))
}

/// Per-position mean over channels: `[B, C, H, W] -> [B, 1, H, W]`.
pub fn channel_mean_map<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::shape("channel_mean_map", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let inv = T::from_f64(1.0 / c as f64);
    let data: Vec<T> = x.with_data(|xd| {
        let mut out = vec![T::ZERO; b * hw];
        for bi in 0..b {
            for ci in 0..c {
                let row = &xd[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                let acc = &mut out[bi * hw..(bi + 1) * hw];
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v * inv;
                }
            }
        }
        out
    });
    Ok(Tensor::from_op(
        vec![b, 1, s[2], s[3]],
        data,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; b * c * hw];
                for bi in 0..b {
                    for ci in 0..c {
                        let dst = &mut gx[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                        let src = &go[bi * hw..(bi + 1) * hw];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d = g * inv;
                        }
                    }
                }
                gx
            })]
        },
    ))
}

/// Per-position max over channels: `[B, C, H, W] -> [B, 1, H, W]`.
pub fn channel_max_map<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(TensorError::shape("channel_max_map", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut argmax = vec![0usize; b * hw];
    let data: Vec<T> = x.with_data(|xd| {
        let mut out = vec![T::ZERO; b * hw];
        for bi in 0..b {
            for p in 0..hw {
                let mut best = xd[(bi * c) * hw + p];
                let mut best_c = 0;
                for ci in 1..c {
                    let v = xd[(bi * c + ci) * hw + p];
                    if v > best {
                        best = v;
                        best_c = ci;
                    }
                }
                out[bi * hw + p] = best;
                argmax[bi * hw + p] = best_c;
            }
        }
        out
    });
    Ok(Tensor::from_op(
        vec![b, 1, s[2], s[3]],
        data,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; b * c * hw];
                for bi in 0..b {
                    for p in 0..hw {
                        let ci = argmax[bi * hw + p];
                        gx[(bi * c + ci) * hw + p] = go[bi * hw + p];
                    }
                }
                gx
            })]
        },
    ))
}

/// Multiply `[B, C, H, W]` by per-channel gates `[B, C]`.
pub fn mul_channel_gate<T: Real>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || gate.shape() != [s[0], s[1]] {
        return Err(TensorError::shape(
            "mul_channel_gate",
            format!("x {:?} vs gate {:?}", s, gate.shape()),
        ));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let data: Vec<T> = x.with_data(|xd| {
        gate.with_data(|gd| {
            let mut out = vec![T::ZERO; xd.len()];
            for i in 0..b * c {
                let g = gd[i];
                for (o, &v) in out[i * hw..(i + 1) * hw].iter_mut().zip(&xd[i * hw..(i + 1) * hw]) {
                    *o = v * g;
                }
            }
            out
        })
    });
    Ok(Tensor::from_op(
        s.to_vec(),
        data,
        vec![x.clone(), gate.clone()],
        move |go, needs, parents| {
            let gx = needs[0].then(|| {
                parents[1].with_data(|gd| {
                    let mut gx = vec![T::ZERO; go.len()];
                    for i in 0..b * c {
                        let g = gd[i];
                        for (d, &v) in gx[i * hw..(i + 1) * hw].iter_mut().zip(&go[i * hw..(i + 1) * hw]) {
                            *d = v * g;
                        }
                    }
                    gx
                })
            });
            let gg = needs[1].then(|| {
                parents[0].with_data(|xd| {
                    let mut gg = vec![T::ZERO; b * c];
                    for i in 0..b * c {
                        let mut acc = T::ZERO;
                        for (&g, &v) in go[i * hw..(i + 1) * hw].iter().zip(&xd[i * hw..(i + 1) * hw]) {
                            acc += g * v;
                        }
                        gg[i] = acc;
                    }
                    gg
                })
            });
            vec![gx, gg]
        },
    ))
}

/// Multiply `[B, C, H, W]` by a per-position map `[B, 1, H, W]`.
pub fn mul_spatial_gate<T: Real>(x: &Tensor<T>, gate: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 || gate.shape() != [s[0], 1, s[2], s[3]] {
        return Err(TensorError::shape(
            "mul_spatial_gate",
            format!("x {:?} vs gate {:?}", s, gate.shape()),
        ));
    }
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let data: Vec<T> = x.with_data(|xd| {
        gate.with_data(|gd| {
            let mut out = vec![T::ZERO; xd.len()];
            for bi in 0..b {
                let gate_row = &gd[bi * hw..(bi + 1) * hw];
                for ci in 0..c {
                    let base = (bi * c + ci) * hw;
                    for p in 0..hw {
                        out[base + p] = xd[base + p] * gate_row[p];
                    }
                }
            }
            out
        })
    });
    Ok(Tensor::from_op(
        s.to_vec(),
        data,
        vec![x.clone(), gate.clone()],
        move |go, needs, parents| {
            let gx = needs[0].then(|| {
                parents[1].with_data(|gd| {
                    let mut gx = vec![T::ZERO; go.len()];
                    for bi in 0..b {
                        let gate_row = &gd[bi * hw..(bi + 1) * hw];
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            for p in 0..hw {
                                gx[base + p] = go[base + p] * gate_row[p];
                            }
                        }
                    }
                    gx
                })
            });
            let gg = needs[1].then(|| {
                parents[0].with_data(|xd| {
                    let mut gg = vec![T::ZERO; b * hw];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * hw;
                            for p in 0..hw {
                                gg[bi * hw + p] += go[base + p] * xd[base + p];
                            }
                        }
                    }
                    gg
                })
            });
            vec![gx, gg]
        },
    ))
}
