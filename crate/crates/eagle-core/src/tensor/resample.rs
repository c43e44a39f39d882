//! Bilinear 2x upsampling (align-corners = false).

use super::{Result, Tensor, TensorError};
use crate::precision::Real;

/// `[B, C, H, W] -> [B, C, 2H, 2W]`. Source coordinates follow the
/// align-corners=false convention `src = (dst + 0.5) / 2 - 0.5` with edge
/// clamping, so constant inputs stay constant.
pub fn bilinear_upsample2x<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 4 {
        return Err(TensorError::shape("bilinear_upsample2x", format!("expected rank 4, got {:?}", s)));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h == 0 || w == 0 {
        return Err(TensorError::shape("bilinear_upsample2x", "H and W must be >= 1"));
    }
    let (oh, ow) = (2 * h, 2 * w);

    // per-axis source indices and interpolation weights
    let axis_table = |out_extent: usize, in_extent: usize| -> Vec<(usize, usize, T)> {
        (0..out_extent)
            .map(|o| {
                let src = (o as f64 + 0.5) / 2.0 - 0.5;
                let floor = src.floor();
                let frac = src - floor;
                let i0 = floor.max(0.0) as usize;
                let i1 = ((floor + 1.0).max(0.0) as usize).min(in_extent - 1);
                (i0.min(in_extent - 1), i1, T::from_f64(frac))
            })
            .collect()
    };
    let ys = axis_table(oh, h);
    let xs = axis_table(ow, w);

    let mut out = vec![T::ZERO; b * c * oh * ow];
    x.with_data(|xd| {
        for bc in 0..b * c {
            let in_base = bc * h * w;
            let out_base = bc * oh * ow;
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let row0 = in_base + y0 * w;
                let row1 = in_base + y1 * w;
                let orow = out_base + oy * ow;
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let top = xd[row0 + x0] * (T::ONE - fx) + xd[row0 + x1] * fx;
                    let bot = xd[row1 + x0] * (T::ONE - fx) + xd[row1 + x1] * fx;
                    out[orow + ox] = top * (T::ONE - fy) + bot * fy;
                }
            }
        }
    });

    let (ys_c, xs_c) = (ys.clone(), xs.clone());
    Ok(Tensor::from_op(
        vec![b, c, oh, ow],
        out,
        vec![x.clone()],
        move |go, needs, _| {
            vec![needs[0].then(|| {
                let mut gx = vec![T::ZERO; b * c * h * w];
                for bc in 0..b * c {
                    let in_base = bc * h * w;
                    let out_base = bc * oh * ow;
                    for (oy, &(y0, y1, fy)) in ys_c.iter().enumerate() {
                        let orow = out_base + oy * ow;
                        for (ox, &(x0, x1, fx)) in xs_c.iter().enumerate() {
                            let g = go[orow + ox];
                            gx[in_base + y0 * w + x0] += g * (T::ONE - fy) * (T::ONE - fx);
                            gx[in_base + y0 * w + x1] += g * (T::ONE - fy) * fx;
                            gx[in_base + y1 * w + x0] += g * fy * (T::ONE - fx);
                            gx[in_base + y1 * w + x1] += g * fy * fx;
                        }
                    }
                }
                gx
            })]
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{assert_grad_close, random_input};
    use crate::tensor::ops::{mul, sum_all};

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 2, 3, 3], 1.0);
        let y = bilinear_upsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
        assert!(y.to_vec().iter().all(|v| (*v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_pixel_replicates() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 1], vec![7.25]).unwrap();
        let y = bilinear_upsample2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.to_vec().iter().all(|v| (*v - 7.25).abs() < 1e-12));
    }

    #[test]
    fn linear_ramp_preserves_mean() {
        // direct-summation oracle: mean of output equals mean of input
        let h = 8;
        let data: Vec<f64> = (0..h * h).map(|i| (i % h) as f64).collect();
        let x = Tensor::<f64>::from_vec(&[1, 1, h, h], data.clone()).unwrap();
        let y = bilinear_upsample2x(&x).unwrap();
        let mean_in = data.iter().sum::<f64>() / (h * h) as f64;
        let mean_out = y.to_vec().iter().sum::<f64>() / (4 * h * h) as f64;
        assert!((mean_in - mean_out).abs() < 1e-6, "{mean_in} vs {mean_out}");
    }

    #[test]
    fn upsample_gradient_matches_finite_differences() {
        let x0 = random_input::<f64>(&[1, 2, 3, 4], 51, 0.0);
        assert_grad_close(
            &x0,
            |x| {
                let y = bilinear_upsample2x(x)?;
                Ok(sum_all(&mul(&y, &y)?))
            },
            1e-5,
        );
    }
}
