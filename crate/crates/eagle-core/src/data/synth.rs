//! Synthetic lesion slices in Hounsfield space.
//!
//! Each slice is a smooth soft-tissue background with a bright spine-like
//! distractor near the bottom (UNet-style baselines are known to confuse
//! such structures with calcified lesions) plus one lesion:
//!
//! - CE style: a single well-bounded ellipse, hypodense fluid interior and a
//!   thin hyperdense rim;
//! - AE style: an irregular union of overlapping ellipses, mildly hypodense,
//!   whose intensity edges are blurred after mask extraction (the mask keeps
//!   the sharp pre-blur support).
//!
//! All geometry and intensity constants below are frozen; regenerating a
//! dataset with the same `(n, seed, kind)` is bitwise stable. Bump
//! [`GENERATOR_VERSION`] when changing any of them.

use super::{window_hu, LesionKind, Sample, SampleMeta, WindowSpec};
use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{Result, Tensor, TensorError};

pub const GENERATOR_VERSION: u32 = 1;

// HU palette
const BG_TISSUE: f64 = 55.0;
const BG_WOBBLE: f64 = 9.0;
const BG_NOISE: f64 = 3.0;
const SPINE_HU: f64 = 400.0;
const CE_INTERIOR: f64 = 2.0;
const CE_RIM: f64 = 130.0;
const AE_INTERIOR: f64 = 15.0;
const AE_TEXTURE: f64 = 7.0;

// geometry, relative to the canvas side
const LESION_AREA_MIN: f64 = 0.01;
const LESION_AREA_MAX: f64 = 0.30;
/// Rim thickness in pixels; the rim only covers an angular arc so the
/// hypodense interior dominates the lesion statistics.
const CE_RIM_PX: f64 = 1.3;
const CE_RIM_ARC: f64 = 0.45;
const AE_BLUR_SIGMA: f64 = 1.4;

/// One generated slice before windowing: HU grid plus binary mask, both
/// `H * W` row-major.
pub struct HuSlice {
    pub hu: Vec<f64>,
    pub mask: Vec<f64>,
    pub kind: LesionKind,
    pub size: usize,
}

fn smooth_background(rng: &mut Rng, size: usize) -> Vec<f64> {
    // coarse 8x8 wobble field, bilinearly upsampled, plus fine noise
    let coarse_n = 8;
    let coarse: Vec<f64> = (0..coarse_n * coarse_n)
        .map(|_| BG_TISSUE + rng.normal() * BG_WOBBLE)
        .collect();
    let mut out = vec![0.0; size * size];
    let scale = coarse_n as f64 / size as f64;
    for y in 0..size {
        for x in 0..size {
            let fy = (y as f64 + 0.5) * scale - 0.5;
            let fx = (x as f64 + 0.5) * scale - 0.5;
            let y0 = fy.floor().clamp(0.0, (coarse_n - 1) as f64) as usize;
            let x0 = fx.floor().clamp(0.0, (coarse_n - 1) as f64) as usize;
            let y1 = (y0 + 1).min(coarse_n - 1);
            let x1 = (x0 + 1).min(coarse_n - 1);
            let ty = (fy - y0 as f64).clamp(0.0, 1.0);
            let tx = (fx - x0 as f64).clamp(0.0, 1.0);
            let top = coarse[y0 * coarse_n + x0] * (1.0 - tx) + coarse[y0 * coarse_n + x1] * tx;
            let bot = coarse[y1 * coarse_n + x0] * (1.0 - tx) + coarse[y1 * coarse_n + x1] * tx;
            out[y * size + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    for v in &mut out {
        *v += rng.normal() * BG_NOISE;
    }
    out
}

fn paint_spine(rng: &mut Rng, hu: &mut [f64], size: usize) {
    let s = size as f64;
    let cx = s * (0.5 + rng.uniform(-0.06, 0.06));
    let cy = s * (0.84 + rng.uniform(-0.04, 0.04));
    let rx = s * rng.uniform(0.06, 0.10);
    let ry = s * rng.uniform(0.05, 0.08);
    for y in 0..size {
        for x in 0..size {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            let d = dx * dx + dy * dy;
            if d <= 1.0 {
                hu[y * size + x] = SPINE_HU;
            } else if d <= 1.6 {
                // soft halo so the edge is not a single hard step
                let t = (1.6 - d) / 0.6;
                hu[y * size + x] = hu[y * size + x] * (1.0 - t) + SPINE_HU * t * 0.5;
            }
        }
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    rot: f64,
}

impl Ellipse {
    fn level(&self, x: f64, y: f64) -> f64 {
        let (sin, cos) = self.rot.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (cos * dx + sin * dy) / self.rx;
        let v = (-sin * dx + cos * dy) / self.ry;
        u * u + v * v
    }
}

fn gaussian_blur(field: &mut [f64], size: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let mut tmp = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xi = (x as isize + k as isize - radius).clamp(0, size as isize - 1) as usize;
                acc += w * field[y * size + xi];
            }
            tmp[y * size + x] = acc / norm;
        }
    }
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yi = (y as isize + k as isize - radius).clamp(0, size as isize - 1) as usize;
                acc += w * tmp[yi * size + x];
            }
            field[y * size + x] = acc / norm;
        }
    }
}

fn lesion_area_fraction(mask: &[f64]) -> f64 {
    mask.iter().filter(|v| **v > 0.5).count() as f64 / mask.len() as f64
}

fn paint_ce(rng: &mut Rng, hu: &mut [f64], size: usize) -> Vec<f64> {
    let s = size as f64;
    let mut mask = vec![0.0; size * size];
    for _attempt in 0..100 {
        mask.iter_mut().for_each(|v| *v = 0.0);
        let e = Ellipse {
            cx: s * rng.uniform(0.22, 0.78),
            cy: s * rng.uniform(0.18, 0.58),
            rx: s * rng.uniform(0.10, 0.30),
            ry: s * rng.uniform(0.10, 0.30),
            rot: rng.uniform(0.0, std::f64::consts::PI),
        };
        for y in 0..size {
            for x in 0..size {
                if e.level(x as f64, y as f64) <= 1.0 {
                    mask[y * size + x] = 1.0;
                }
            }
        }
        let frac = lesion_area_fraction(&mask);
        if (LESION_AREA_MIN..=LESION_AREA_MAX).contains(&frac) {
            let rim = (1.0 - CE_RIM_PX / e.rx.min(e.ry)).max(0.6);
            let rim_level = rim * rim;
            let arc_start = rng.uniform(0.0, std::f64::consts::TAU);
            let arc_len = CE_RIM_ARC * std::f64::consts::TAU;
            for y in 0..size {
                for x in 0..size {
                    let level = e.level(x as f64, y as f64);
                    if level <= 1.0 {
                        let interior = CE_INTERIOR + rng.normal() * 2.0;
                        let angle = (y as f64 - e.cy).atan2(x as f64 - e.cx);
                        let on_arc =
                            (angle - arc_start).rem_euclid(std::f64::consts::TAU) <= arc_len;
                        hu[y * size + x] = if level >= rim_level && on_arc {
                            CE_RIM
                        } else {
                            interior
                        };
                    }
                }
            }
            return mask;
        }
    }
    unreachable!("CE radii ranges always admit an in-range area within 100 draws");
}

fn paint_ae(rng: &mut Rng, hu: &mut [f64], size: usize) -> Vec<f64> {
    let s = size as f64;
    let mut mask = vec![0.0; size * size];
    for _attempt in 0..100 {
        mask.iter_mut().for_each(|v| *v = 0.0);
        let blobs = 3 + rng.below(4);
        let hub_x = s * rng.uniform(0.3, 0.7);
        let hub_y = s * rng.uniform(0.25, 0.5);
        let spread = s * 0.12;
        for _ in 0..blobs {
            let e = Ellipse {
                cx: hub_x + rng.normal() * spread,
                cy: hub_y + rng.normal() * spread,
                rx: s * rng.uniform(0.07, 0.16),
                ry: s * rng.uniform(0.07, 0.16),
                rot: rng.uniform(0.0, std::f64::consts::PI),
            };
            for y in 0..size {
                for x in 0..size {
                    if e.level(x as f64, y as f64) <= 1.0 {
                        mask[y * size + x] = 1.0;
                    }
                }
            }
        }
        let frac = lesion_area_fraction(&mask);
        if (LESION_AREA_MIN..=LESION_AREA_MAX).contains(&frac) {
            // hypodense heterogeneous delta field, blurred so the intensity
            // boundary is soft while the mask stays sharp
            let mut delta = vec![0.0; size * size];
            for (d, m) in delta.iter_mut().zip(&mask) {
                if *m > 0.5 {
                    *d = AE_INTERIOR - BG_TISSUE + rng.normal() * AE_TEXTURE;
                }
            }
            gaussian_blur(&mut delta, size, AE_BLUR_SIGMA);
            for (h, d) in hu.iter_mut().zip(&delta) {
                *h += d;
            }
            return mask;
        }
    }
    unreachable!("AE blob ranges always admit an in-range area within 100 draws");
}

/// Generate one slice in HU space, deterministically from `rng`.
pub fn synth_hu_slice(rng: &mut Rng, size: usize, kind: LesionKind) -> HuSlice {
    let mut hu = smooth_background(rng, size);
    paint_spine(rng, &mut hu, size);
    let mask = match kind {
        LesionKind::Ae => paint_ae(rng, &mut hu, size),
        _ => paint_ce(rng, &mut hu, size),
    };
    HuSlice { hu, mask, kind, size }
}

/// Generate `n` windowed samples. `kind = Synthetic` alternates CE and AE
/// styles ("mixed"). Fully deterministic per `(n, seed, kind, size)`.
pub fn synth_generate<T: Real>(
    n: usize,
    seed: u64,
    kind: LesionKind,
    size: usize,
) -> Result<Vec<Sample<T>>> {
    if n == 0 {
        return Err(TensorError::invalid("synth_generate", "n must be >= 1"));
    }
    if size < 16 {
        return Err(TensorError::invalid("synth_generate", "size must be >= 16"));
    }
    let window = WindowSpec::default();
    let base = Rng::new(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let sample_kind = match kind {
            LesionKind::Synthetic => {
                if i % 2 == 0 {
                    LesionKind::Ce
                } else {
                    LesionKind::Ae
                }
            }
            k => k,
        };
        let mut rng = base.derive(i as u64);
        let slice = synth_hu_slice(&mut rng, size, sample_kind);
        let hu_t = Tensor::<T>::from_vec(
            &[1, size, size],
            slice.hu.iter().map(|v| T::from_f64(*v)).collect(),
        )?;
        let image = window_hu(&hu_t, &window)?;
        let mask = Tensor::from_vec(
            &[1, size, size],
            slice.mask.iter().map(|v| T::from_f64(*v)).collect(),
        )?;
        let sample = Sample {
            image,
            mask,
            meta: SampleMeta {
                id: format!("{sample_kind}{i:04}"),
                kind: sample_kind,
                split: None,
                patient: format!("{sample_kind}{i:04}"),
            },
        };
        sample.validate()?;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_nonempty_and_within_area_bounds() {
        let samples = synth_generate::<f32>(12, 33, LesionKind::Synthetic, 64).unwrap();
        assert_eq!(samples.len(), 12);
        for s in &samples {
            let area = s.mask.with_data(|m| m.iter().filter(|v| **v > 0.5).count());
            let frac = area as f64 / (64.0 * 64.0);
            assert!(
                (LESION_AREA_MIN..=LESION_AREA_MAX).contains(&frac),
                "{}: area fraction {frac}",
                s.meta.id
            );
        }
    }

    #[test]
    fn generation_is_bitwise_deterministic() {
        let a = synth_generate::<f32>(6, 9, LesionKind::Ce, 64).unwrap();
        let b = synth_generate::<f32>(6, 9, LesionKind::Ce, 64).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.to_vec(), y.image.to_vec());
            assert_eq!(x.mask.to_vec(), y.mask.to_vec());
            assert_eq!(x.meta.id, y.meta.id);
        }
    }

    #[test]
    fn lesion_separates_from_background() {
        // measured over many seeds before freezing the generator constants:
        // mean windowed intensity inside the lesion differs from the
        // non-lesion, non-spine background by at least 0.1
        for seed in 0..20u64 {
            for kind in [LesionKind::Ce, LesionKind::Ae] {
                let s = &synth_generate::<f64>(1, 1000 + seed, kind, 64).unwrap()[0];
                let img = s.image.to_vec();
                let msk = s.mask.to_vec();
                let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0usize, 0.0, 0usize);
                for (i, (&v, &m)) in img.iter().zip(&msk).enumerate() {
                    let y = i / 64;
                    if m > 0.5 {
                        in_sum += v;
                        in_n += 1;
                    } else if v < 0.99 && y < 44 {
                        // exclude the clamped spine region and bottom area
                        out_sum += v;
                        out_n += 1;
                    }
                }
                let diff = (in_sum / in_n as f64 - out_sum / out_n as f64).abs();
                assert!(diff >= 0.1, "seed {seed} {kind}: separation {diff}");
            }
        }
    }

    #[test]
    fn mixed_kind_alternates() {
        let samples = synth_generate::<f32>(4, 5, LesionKind::Synthetic, 64).unwrap();
        assert_eq!(samples[0].meta.kind, LesionKind::Ce);
        assert_eq!(samples[1].meta.kind, LesionKind::Ae);
        assert_eq!(samples[2].meta.kind, LesionKind::Ce);
    }

    #[test]
    fn rejects_empty_request() {
        assert!(synth_generate::<f32>(0, 1, LesionKind::Ce, 64).is_err());
    }
}

#[cfg(test)]
mod calibration {
    use super::*;

    /// Margin scan backing the frozen constants: worst-case separability
    /// over 100 seeds stays clear of the 0.1 floor.
    #[test]
    fn separability_margin_over_100_seeds() {
        let mut worst = f64::INFINITY;
        for seed in 0..50u64 {
            for kind in [LesionKind::Ce, LesionKind::Ae] {
                let s = &synth_generate::<f64>(1, 2000 + seed, kind, 64).unwrap()[0];
                let img = s.image.to_vec();
                let msk = s.mask.to_vec();
                let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0.0, 0usize, 0.0, 0usize);
                for (i, (&v, &m)) in img.iter().zip(&msk).enumerate() {
                    let y = i / 64;
                    if m > 0.5 {
                        in_sum += v;
                        in_n += 1;
                    } else if v < 0.99 && y < 44 {
                        out_sum += v;
                        out_n += 1;
                    }
                }
                let diff = (in_sum / in_n as f64 - out_sum / out_n as f64).abs();
                worst = worst.min(diff);
            }
        }
        assert!(worst >= 0.1, "worst-case separation {worst}");
    }
}
