//! Label-preserving augmentation: rotation, scaling, Gaussian smoothing,
//! Gaussian noise.
//!
//! Rotation and scale warp image and mask identically (bilinear for the
//! image, nearest-neighbor for the mask, so masks stay binary); smoothing
//! and noise touch the image only. Each transform is drawn independently
//! with probability 1/2, so identity draws and single-transform draws occur
//! and are reachable by seed scanning.

use super::Sample;
use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{Result, Tensor};

pub const ROTATION_MAX_DEG: f64 = 15.0;
pub const SCALE_MIN: f64 = 0.9;
pub const SCALE_MAX: f64 = 1.1;
pub const BLUR_SIGMA_MAX: f64 = 1.0;
pub const NOISE_SIGMA_MAX: f64 = 0.03;

/// Concrete transform draw; neutral values leave the sample bitwise intact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            scale: 1.0,
            blur_sigma: 0.0,
            noise_sigma: 0.0,
        }
    }
}

impl AugmentParams {
    pub fn draw(rng: &mut Rng) -> Self {
        let mut p = AugmentParams::default();
        if rng.bool() {
            p.rotation_deg = rng.uniform(-ROTATION_MAX_DEG, ROTATION_MAX_DEG);
        }
        if rng.bool() {
            p.scale = rng.uniform(SCALE_MIN, SCALE_MAX);
        }
        if rng.bool() {
            p.blur_sigma = rng.uniform(0.0, BLUR_SIGMA_MAX);
        }
        if rng.bool() {
            p.noise_sigma = rng.uniform(0.0, NOISE_SIGMA_MAX);
        }
        p
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.scale == 1.0 && self.blur_sigma == 0.0 && self.noise_sigma == 0.0
    }
}

fn warp<T: Real>(
    data: &[T],
    h: usize,
    w: usize,
    rotation_deg: f64,
    scale: f64,
    nearest: bool,
) -> Vec<T> {
    let theta = rotation_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = vec![T::ZERO; h * w];
    for y in 0..h {
        for x in 0..w {
            // inverse map: rotate by -theta and divide by scale around center
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            let sx = (cos * dx + sin * dy) / scale + cx;
            let sy = (-sin * dx + cos * dy) / scale + cy;
            let v = if nearest {
                let xi = sx.round();
                let yi = sy.round();
                if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                    T::ZERO
                } else {
                    data[yi as usize * w + xi as usize]
                }
            } else {
                let x0 = sx.floor();
                let y0 = sy.floor();
                let tx = sx - x0;
                let ty = sy - y0;
                let sample = |yy: f64, xx: f64| -> f64 {
                    if xx < 0.0 || yy < 0.0 || xx >= w as f64 || yy >= h as f64 {
                        0.0
                    } else {
                        data[yy as usize * w + xx as usize].to_f64()
                    }
                };
                let top = sample(y0, x0) * (1.0 - tx) + sample(y0, x0 + 1.0) * tx;
                let bot = sample(y0 + 1.0, x0) * (1.0 - tx) + sample(y0 + 1.0, x0 + 1.0) * tx;
                T::from_f64(top * (1.0 - ty) + bot * ty)
            };
            out[y * w + x] = v;
        }
    }
    out
}

fn separable_blur<T: Real>(data: &mut [T], h: usize, w: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    if radius == 0 {
        return;
    }
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let mut tmp = vec![T::ZERO; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                let xi = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kw * data[y * w + xi].to_f64();
            }
            tmp[y * w + x] = T::from_f64(acc / norm);
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kw) in kernel.iter().enumerate() {
                let yi = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += kw * tmp[yi * w + x].to_f64();
            }
            data[y * w + x] = T::from_f64(acc / norm);
        }
    }
}

/// Apply a concrete parameter draw. The noise stream comes from `rng`.
pub fn augment_with_params<T: Real>(
    sample: &Sample<T>,
    params: &AugmentParams,
    rng: &mut Rng,
) -> Result<Sample<T>> {
    sample.validate()?;
    let shape = sample.image.shape().to_vec();
    let (h, w) = (shape[1], shape[2]);

    let mut image = sample.image.to_vec();
    let mut mask = sample.mask.to_vec();
    if params.rotation_deg != 0.0 || params.scale != 1.0 {
        image = warp(&image, h, w, params.rotation_deg, params.scale, false);
        mask = warp(&mask, h, w, params.rotation_deg, params.scale, true);
    }
    if params.blur_sigma > 0.0 {
        separable_blur(&mut image, h, w, params.blur_sigma);
    }
    if params.noise_sigma > 0.0 {
        for v in &mut image {
            let noisy = v.to_f64() + rng.normal() * params.noise_sigma;
            *v = T::from_f64(noisy.clamp(0.0, 1.0));
        }
    }
    let out = Sample {
        image: Tensor::from_vec(&shape, image)?,
        mask: Tensor::from_vec(&shape, mask)?,
        meta: sample.meta.clone(),
    };
    out.validate()?;
    Ok(out)
}

/// Seeded augmentation: draws [`AugmentParams`] and applies them.
pub fn augment<T: Real>(sample: &Sample<T>, seed: u64) -> Result<Sample<T>> {
    let mut rng = Rng::new(seed);
    let params = AugmentParams::draw(&mut rng);
    augment_with_params(sample, &params, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth::synth_generate, LesionKind};

    fn fixture() -> Sample<f32> {
        synth_generate::<f32>(1, 77, LesionKind::Ce, 64).unwrap().remove(0)
    }

    #[test]
    fn identity_params_change_nothing() {
        let s = fixture();
        let out = augment_with_params(&s, &AugmentParams::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(out.image.to_vec(), s.image.to_vec());
        assert_eq!(out.mask.to_vec(), s.mask.to_vec());
    }

    #[test]
    fn mask_stays_binary_under_any_draw() {
        let s = fixture();
        for seed in 0..25 {
            let out = augment(&s, seed).unwrap();
            assert_eq!(out.image.shape(), s.image.shape());
            out.mask
                .with_data(|m| assert!(m.iter().all(|v| *v == 0.0 || *v == 1.0), "seed {seed}"));
        }
    }

    #[test]
    fn noise_only_draw_keeps_mask_and_perturbs_image() {
        let s = fixture();
        // scan for a draw that applies noise and nothing else
        let seed = (0..10_000u64)
            .find(|&seed| {
                let p = AugmentParams::draw(&mut Rng::new(seed));
                p.rotation_deg == 0.0 && p.scale == 1.0 && p.blur_sigma == 0.0 && p.noise_sigma > 0.0
            })
            .expect("a noise-only draw exists in the first 10k seeds");
        let out = augment(&s, seed).unwrap();
        assert_eq!(out.mask.to_vec(), s.mask.to_vec());
        assert_ne!(out.image.to_vec(), s.image.to_vec());
    }

    #[test]
    fn rotation_moves_the_lesion() {
        let s = fixture();
        let params = AugmentParams {
            rotation_deg: 15.0,
            ..Default::default()
        };
        let out = augment_with_params(&s, &params, &mut Rng::new(0)).unwrap();
        assert_ne!(out.mask.to_vec(), s.mask.to_vec());
        // area approximately preserved under rotation
        let area = |t: &Tensor<f32>| t.with_data(|d| d.iter().filter(|v| **v > 0.5).count() as f64);
        let (a0, a1) = (area(&s.mask), area(&out.mask));
        assert!((a0 - a1).abs() / a0 < 0.15, "{a0} vs {a1}");
    }

    #[test]
    fn augmentation_is_deterministic_per_seed() {
        let s = fixture();
        let a = augment(&s, 123).unwrap();
        let b = augment(&s, 123).unwrap();
        assert_eq!(a.image.to_vec(), b.image.to_vec());
        assert_eq!(a.mask.to_vec(), b.mask.to_vec());
    }
}
