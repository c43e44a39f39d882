//! Directional flattening and the selective-scan recurrence.
//!
//! The scan evaluates, causally in sequence order,
//!
//! ```text
//! h_t = exp(dt_t * A) .* h_{t-1} + (dt_t * u_t) * B_t
//! y_t = C_t . h_t + D * u_t
//! ```
//!
//! with diagonal state matrix `A` (elementwise negative), input-dependent
//! `dt, B, C`, and zero initial state. [`selective_scan_seq`] is the
//! step-by-step reference; [`selective_scan_parallel`] evaluates the same
//! recurrence through an associative divide-and-conquer prefix composition
//! and serves as the independent algebraic route for verification.

use crate::precision::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// One of the four raster orders used by the 2D scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanDirection {
    RowFwd,
    RowBwd,
    ColFwd,
    ColBwd,
}

pub const ALL_DIRECTIONS: [ScanDirection; 4] = [
    ScanDirection::RowFwd,
    ScanDirection::RowBwd,
    ScanDirection::ColFwd,
    ScanDirection::ColBwd,
];

impl ScanDirection {
    /// Map from sequence position `l` to row-major spatial index, for an
    /// `H x W` plane. Row-backward is exactly the reverse of row-forward;
    /// the column orders use the transposed raster.
    pub fn index_map(self, h: usize, w: usize) -> Vec<usize> {
        let hw = h * w;
        match self {
            ScanDirection::RowFwd => (0..hw).collect(),
            ScanDirection::RowBwd => (0..hw).map(|l| hw - 1 - l).collect(),
            ScanDirection::ColFwd => (0..hw).map(|l| (l % h) * w + l / h).collect(),
            ScanDirection::ColBwd => (0..hw).map(|l| ((hw - 1 - l) % h) * w + (hw - 1 - l) / h).collect(),
        }
    }
}

/// Flatten `[B, C, H, W]` into the direction's sequence order `[B, C, L]`.
pub fn flatten_direction<T: Real>(x: &Tensor<T>, dir: ScanDirection) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return Err(TensorError::shape("flatten_direction", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let map = dir.index_map(h, w);
    let hw = h * w;
    let mut out = vec![T::ZERO; b * c * hw];
    x.with_data(|xd| {
        for bc in 0..b * c {
            let base = bc * hw;
            for (l, &p) in map.iter().enumerate() {
                out[base + l] = xd[base + p];
            }
        }
    });
    let map_c = map.clone();
    Ok(Tensor::from_op(
        vec![b, c, hw],
        out,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; go.len()];
                for bc in 0..b * c {
                    let base = bc * hw;
                    for (l, &p) in map_c.iter().enumerate() {
                        gx[base + p] += go[base + l];
                    }
                }
                gx
            })]
        },
    ))
}

/// Inverse of [`flatten_direction`]: place `[B, C, L]` back onto the
/// `[B, C, H, W]` plane.
pub fn unflatten_direction<T: Real>(
    y: &Tensor<T>,
    dir: ScanDirection,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let s = y.shape().to_vec();
    if s.len() != 3 || s[2] != h * w {
        return Err(TensorError::shape(
            "unflatten_direction",
            format!("expected [B, C, {}], got {:?}", h * w, s),
        ));
    }
    let (b, c, hw) = (s[0], s[1], s[2]);
    let map = dir.index_map(h, w);
    let mut out = vec![T::ZERO; b * c * hw];
    y.with_data(|yd| {
        for bc in 0..b * c {
            let base = bc * hw;
            for (l, &p) in map.iter().enumerate() {
                out[base + p] = yd[base + l];
            }
        }
    });
    let map_c = map.clone();
    Ok(Tensor::from_op(
        vec![b, c, h, w],
        out,
        vec![y.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gy = vec![T::ZERO; go.len()];
                for bc in 0..b * c {
                    let base = bc * hw;
                    for (l, &p) in map_c.iter().enumerate() {
                        gy[base + l] += go[base + p];
                    }
                }
                gy
            })]
        },
    ))
}

/// Raw scan inputs, all slices in the layouts noted on each field.
pub struct ScanInput<'a, T> {
    /// `[B, D, L]`
    pub u: &'a [T],
    /// `[B, D, L]`, strictly positive
    pub delta: &'a [T],
    /// `[D, N]`, elementwise negative (decaying states)
    pub a: &'a [T],
    /// `[B, N, L]`
    pub b_in: &'a [T],
    /// `[B, N, L]`
    pub c_in: &'a [T],
    /// `[D]`
    pub d_skip: &'a [T],
    pub batch: usize,
    pub dim: usize,
    pub state: usize,
    pub len: usize,
}

impl<T: Real> ScanInput<'_, T> {
    fn validate(&self, op: &'static str) -> Result<()> {
        let (b, d, n, l) = (self.batch, self.dim, self.state, self.len);
        if self.u.len() != b * d * l
            || self.delta.len() != b * d * l
            || self.a.len() != d * n
            || self.b_in.len() != b * n * l
            || self.c_in.len() != b * n * l
            || self.d_skip.len() != d
        {
            return Err(TensorError::shape(op, "scan buffer lengths disagree with (B, D, N, L)"));
        }
        if self.delta.iter().any(|v| !(*v > T::ZERO)) {
            return Err(TensorError::invalid(op, "delta must be strictly positive"));
        }
        Ok(())
    }
}

/// Step-by-step evaluation; the reference ("oracle") implementation.
/// Returns `y` of layout `[B, D, L]`.
pub fn selective_scan_seq<T: Real>(input: &ScanInput<T>) -> Result<Vec<T>> {
    input.validate("selective_scan_seq")?;
    let (mut y, _) = scan_seq_impl(input, false);
    y.shrink_to_fit();
    Ok(y)
}

/// Sequential scan that additionally returns the full state trajectory
/// `[B, D, L, N]` (post-step states) for use by the backward pass.
pub(crate) fn scan_seq_impl<T: Real>(input: &ScanInput<T>, keep_states: bool) -> (Vec<T>, Vec<T>) {
    let (b, d, n, l) = (input.batch, input.dim, input.state, input.len);
    let mut y = vec![T::ZERO; b * d * l];
    let mut states = if keep_states { vec![T::ZERO; b * d * l * n] } else { Vec::new() };
    let mut h = vec![T::ZERO; n];
    for bi in 0..b {
        for di in 0..d {
            h.iter_mut().for_each(|v| *v = T::ZERO);
            let a_row = &input.a[di * n..(di + 1) * n];
            let dsk = input.d_skip[di];
            let row = (bi * d + di) * l;
            for t in 0..l {
                let dt = input.delta[row + t];
                let ut = input.u[row + t];
                let du = dt * ut;
                let mut out = T::ZERO;
                for (ni, hn) in h.iter_mut().enumerate() {
                    let abar = (dt * a_row[ni]).exp();
                    *hn = abar * *hn + du * input.b_in[(bi * n + ni) * l + t];
                    out += input.c_in[(bi * n + ni) * l + t] * *hn;
                }
                y[row + t] = out + dsk * ut;
                if keep_states {
                    states[(row + t) * n..(row + t + 1) * n].copy_from_slice(&h);
                }
            }
        }
    }
    (y, states)
}

/// In-place inclusive scan of `(a, b)` pairs under the affine composition
/// `(a2, b2) . (a1, b1) = (a2*a1, a2*b1 + b2)`, evaluated divide-and-conquer.
/// With `h_0 = 0` the scanned `b` component equals the recurrence state.
fn assoc_scan<T: Real>(pairs: &mut [(T, T)]) {
    let len = pairs.len();
    if len <= 1 {
        return;
    }
    let mid = len / 2;
    let (left, right) = pairs.split_at_mut(mid);
    assoc_scan(left);
    assoc_scan(right);
    let (a_m, b_m) = left[mid - 1];
    for p in right.iter_mut() {
        *p = (p.0 * a_m, p.0 * b_m + p.1);
    }
}

/// Prefix-composition evaluation of the same recurrence; contract identical
/// to [`selective_scan_seq`].
pub fn selective_scan_parallel<T: Real>(input: &ScanInput<T>) -> Result<Vec<T>> {
    input.validate("selective_scan_parallel")?;
    let (b, d, n, l) = (input.batch, input.dim, input.state, input.len);
    let mut y = vec![T::ZERO; b * d * l];
    let mut pairs: Vec<(T, T)> = vec![(T::ZERO, T::ZERO); l];
    for bi in 0..b {
        for di in 0..d {
            let a_row = &input.a[di * n..(di + 1) * n];
            let dsk = input.d_skip[di];
            let row = (bi * d + di) * l;
            for t in 0..l {
                y[row + t] = dsk * input.u[row + t];
            }
            for ni in 0..n {
                let an = a_row[ni];
                for t in 0..l {
                    let dt = input.delta[row + t];
                    pairs[t] = (
                        (dt * an).exp(),
                        dt * input.u[row + t] * input.b_in[(bi * n + ni) * l + t],
                    );
                }
                assoc_scan(&mut pairs);
                for t in 0..l {
                    y[row + t] += input.c_in[(bi * n + ni) * l + t] * pairs[t].1;
                }
            }
        }
    }
    Ok(y)
}

/// Differentiable selective scan over tensors.
///
/// `u, delta: [B, D, L]`, `a: [D, N]`, `b_in, c_in: [B, N, L]`,
/// `d_skip: [D]` -> `[B, D, L]`. Forward runs the sequential kernel; backward
/// is the adjoint recurrence over the saved state trajectory.
pub fn selective_scan<T: Real>(
    u: &Tensor<T>,
    delta: &Tensor<T>,
    a: &Tensor<T>,
    b_in: &Tensor<T>,
    c_in: &Tensor<T>,
    d_skip: &Tensor<T>,
) -> Result<Tensor<T>> {
    let us = u.shape().to_vec();
    if us.len() != 3 {
        return Err(TensorError::shape("selective_scan", format!("u must be [B, D, L], got {:?}", us)));
    }
    let (b, d, l) = (us[0], us[1], us[2]);
    let n = if a.shape().len() == 2 && a.shape()[0] == d {
        a.shape()[1]
    } else {
        return Err(TensorError::shape(
            "selective_scan",
            format!("a must be [{d}, N], got {:?}", a.shape()),
        ));
    };
    if delta.shape() != us.as_slice() {
        return Err(TensorError::shape(
            "selective_scan",
            format!("delta {:?} vs u {:?}", delta.shape(), us),
        ));
    }
    for (name, t) in [("b_in", b_in), ("c_in", c_in)] {
        if t.shape() != [b, n, l] {
            return Err(TensorError::shape(
                "selective_scan",
                format!("{name} must be [{b}, {n}, {l}], got {:?}", t.shape()),
            ));
        }
    }
    if d_skip.shape() != [d] {
        return Err(TensorError::shape(
            "selective_scan",
            format!("d_skip must be [{d}], got {:?}", d_skip.shape()),
        ));
    }

    let track = crate::tensor::grad_enabled()
        && [u, delta, a, b_in, c_in, d_skip].iter().any(|t| t.requires_grad());

    let (y, states) = u.with_data(|ud| {
        delta.with_data(|dd| {
            a.with_data(|ad| {
                b_in.with_data(|bd| {
                    c_in.with_data(|cd| {
                        d_skip.with_data(|sd| {
                            let input = ScanInput {
                                u: ud,
                                delta: dd,
                                a: ad,
                                b_in: bd,
                                c_in: cd,
                                d_skip: sd,
                                batch: b,
                                dim: d,
                                state: n,
                                len: l,
                            };
                            input.validate("selective_scan")?;
                            Ok::<_, TensorError>(scan_seq_impl(&input, track))
                        })
                    })
                })
            })
        })
    })?;

    Ok(Tensor::from_op(
        vec![b, d, l],
        y,
        vec![
            u.clone(),
            delta.clone(),
            a.clone(),
            b_in.clone(),
            c_in.clone(),
            d_skip.clone(),
        ],
        move |go, needs, parents| {
            let ud = parents[0].to_vec();
            let dd = parents[1].to_vec();
            let ad = parents[2].to_vec();
            let bd = parents[3].to_vec();
            let cd = parents[4].to_vec();
            let sd = parents[5].to_vec();

            let mut gu = vec![T::ZERO; b * d * l];
            let mut gdelta = vec![T::ZERO; b * d * l];
            let mut ga = vec![T::ZERO; d * n];
            let mut gb = vec![T::ZERO; b * n * l];
            let mut gc = vec![T::ZERO; b * n * l];
            let mut gskip = vec![T::ZERO; d];

            let mut lambda = vec![T::ZERO; n];
            for bi in 0..b {
                for di in 0..d {
                    lambda.iter_mut().for_each(|v| *v = T::ZERO);
                    let a_row = &ad[di * n..(di + 1) * n];
                    let row = (bi * d + di) * l;
                    for t in (0..l).rev() {
                        let g = go[row + t];
                        let dt = dd[row + t];
                        let ut = ud[row + t];
                        gskip[di] += g * ut;
                        let mut gu_t = g * sd[di];
                        let mut gdt_t = T::ZERO;
                        for ni in 0..n {
                            let h_t = states[(row + t) * n + ni];
                            gc[(bi * n + ni) * l + t] += g * h_t;
                            // total adjoint of h_t
                            let lam = lambda[ni] + g * cd[(bi * n + ni) * l + t];
                            let abar = (dt * a_row[ni]).exp();
                            let h_prev = if t > 0 { states[(row + t - 1) * n + ni] } else { T::ZERO };
                            let b_t = bd[(bi * n + ni) * l + t];
                            gdt_t += lam * (h_prev * a_row[ni] * abar + ut * b_t);
                            gu_t += lam * dt * b_t;
                            gb[(bi * n + ni) * l + t] += lam * dt * ut;
                            ga[di * n + ni] += lam * h_prev * dt * abar;
                            lambda[ni] = lam * abar;
                        }
                        gu[row + t] = gu_t;
                        gdelta[row + t] = gdt_t;
                    }
                }
            }
            vec![
                needs[0].then_some(gu),
                needs[1].then_some(gdelta),
                needs[2].then_some(ga),
                needs[3].then_some(gb),
                needs[4].then_some(gc),
                needs[5].then_some(gskip),
            ]
        },
    ))
}
