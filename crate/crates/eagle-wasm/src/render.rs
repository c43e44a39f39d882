//! Pure rendering helpers behind the browser demo: everything here returns
//! plain RGBA buffers and is exercised by host-side tests.

use eagle_core::data::synth::{synth_hu_slice, HuSlice};
use eagle_core::data::{LesionKind, WindowSpec};
use eagle_core::haar::haar_forward;
use eagle_core::metrics::ConfusionCounts;
use eagle_core::model::Eagle;
use eagle_core::rng::Rng;
use eagle_core::tensor::{no_grad, Mode, Tensor};

/// A generated slice held in HU space so windowing stays interactive.
pub struct DemoSlice {
    pub slice: HuSlice,
}

impl DemoSlice {
    pub fn generate(kind: &str, seed: u64, size: usize) -> Result<DemoSlice, String> {
        let kind = match kind {
            "ce" => LesionKind::Ce,
            "ae" => LesionKind::Ae,
            other => return Err(format!("unknown lesion kind '{other}' (use 'ce' or 'ae')")),
        };
        if !(16..=256).contains(&size) || !size.is_multiple_of(64) {
            return Err(format!("size must be 64, 128, or 256, got {size}"));
        }
        let mut rng = Rng::new(seed).derive(0);
        Ok(DemoSlice {
            slice: synth_hu_slice(&mut rng, size, kind),
        })
    }

    pub fn size(&self) -> usize {
        self.slice.size
    }

    pub fn windowed(&self, level: f64, width: f64) -> Result<Vec<f64>, String> {
        let spec = WindowSpec { level, width };
        spec.validate().map_err(|e| e.to_string())?;
        Ok(self.slice.hu.iter().map(|hu| spec.apply_scalar(*hu)).collect())
    }

    /// Windowed grayscale with the ground-truth lesion boundary in green.
    pub fn windowed_rgba(&self, level: f64, width: f64, show_mask: bool) -> Result<Vec<u8>, String> {
        let gray = self.windowed(level, width)?;
        let mut rgba = gray_rgba(&gray);
        if show_mask {
            draw_contour(&mut rgba, &self.slice.mask, self.size(), [60, 220, 90, 255]);
        }
        Ok(rgba)
    }

    /// 2x2 grid of the Haar sub-bands of the windowed slice
    /// (L top-left, HV top-right, HH bottom-left, HD bottom-right).
    pub fn haar_rgba(&self, level: f64, width: f64) -> Result<Vec<u8>, String> {
        let gray = self.windowed(level, width)?;
        let n = self.size();
        let x = Tensor::<f32>::from_vec(&[1, n, n], gray.iter().map(|v| *v as f32).collect())
            .map_err(|e| e.to_string())?;
        let bands = haar_forward(&x).map_err(|e| e.to_string())?;
        let half = n / 2;
        let mut canvas = vec![0u8; n * n * 4];
        let tiles = [
            (&bands.low, 0, 0, false),
            (&bands.vert, 0, half, true),
            (&bands.horiz, half, 0, true),
            (&bands.diag, half, half, true),
        ];
        for (band, oy, ox, is_detail) in tiles {
            let values = band.to_vec();
            // low band spans [0, 2] (orthonormal factor on [0, 1] data);
            // detail bands are signed and displayed around mid-gray
            for y in 0..half {
                for x in 0..half {
                    let v = values[y * half + x] as f64;
                    let g = if is_detail {
                        (0.5 + v).clamp(0.0, 1.0)
                    } else {
                        (v / 2.0).clamp(0.0, 1.0)
                    };
                    let px = ((oy + y) * n + ox + x) * 4;
                    let byte = (g * 255.0).round() as u8;
                    canvas[px] = byte;
                    canvas[px + 1] = byte;
                    canvas[px + 2] = byte;
                    canvas[px + 3] = 255;
                }
            }
        }
        Ok(canvas)
    }

    /// Max reconstruction error of the Haar round trip on the windowed slice.
    pub fn haar_roundtrip_error(&self, level: f64, width: f64) -> Result<f64, String> {
        let gray = self.windowed(level, width)?;
        let n = self.size();
        let x = Tensor::<f32>::from_vec(&[1, n, n], gray.iter().map(|v| *v as f32).collect())
            .map_err(|e| e.to_string())?;
        let back = eagle_core::haar::haar_inverse(&haar_forward(&x).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        Ok(x.to_vec()
            .iter()
            .zip(back.to_vec())
            .map(|(a, b)| (a - b).abs() as f64)
            .fold(0.0, f64::max))
    }

    /// Run the model on the default-windowed slice; returns per-pixel lesion
    /// probabilities.
    pub fn probabilities(&self, model: &Eagle<f32>) -> Result<Vec<f64>, String> {
        let spec = WindowSpec::default();
        let gray: Vec<f32> = self.slice.hu.iter().map(|hu| spec.apply_scalar(*hu) as f32).collect();
        let n = self.size();
        let x = Tensor::from_vec(&[1, 1, n, n], gray).map_err(|e| e.to_string())?;
        let prob = no_grad(|| model.forward(&x, Mode::Eval)).map_err(|e| e.to_string())?;
        Ok(prob.with_data(|d| d.iter().map(|v| *v as f64).collect()))
    }

    /// Prediction heatmap over the windowed slice: red intensity follows the
    /// probability, predicted boundary in red, ground truth in green.
    pub fn segmentation_rgba(
        &self,
        model: &Eagle<f32>,
        threshold: f64,
        level: f64,
        width: f64,
    ) -> Result<Vec<u8>, String> {
        let prob = self.probabilities(model)?;
        let gray = self.windowed(level, width)?;
        let n = self.size();
        let mut rgba = gray_rgba(&gray);
        for (i, p) in prob.iter().enumerate() {
            let boost = (p * 140.0) as i32;
            let r = rgba[i * 4] as i32 + boost;
            rgba[i * 4] = r.clamp(0, 255) as u8;
        }
        let predicted: Vec<f64> = prob.iter().map(|p| if *p >= threshold { 1.0 } else { 0.0 }).collect();
        draw_contour(&mut rgba, &predicted, n, [255, 80, 60, 255]);
        draw_contour(&mut rgba, &self.slice.mask, n, [60, 220, 90, 255]);
        Ok(rgba)
    }

    /// Dice/precision/recall of the prediction against the generator mask.
    pub fn segmentation_scores(
        &self,
        model: &Eagle<f32>,
        threshold: f64,
    ) -> Result<(f64, f64, f64), String> {
        let prob = self.probabilities(model)?;
        let n = self.size();
        let y = Tensor::<f64>::from_vec(&[n * n], self.slice.mask.clone()).map_err(|e| e.to_string())?;
        let p = Tensor::<f64>::from_vec(&[n * n], prob).map_err(|e| e.to_string())?;
        let counts = ConfusionCounts::from_tensors(&y, &p, threshold).map_err(|e| e.to_string())?;
        Ok((counts.dsc(), counts.precision(), counts.recall()))
    }
}

pub fn gray_rgba(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend_from_slice(&[byte, byte, byte, 255]);
    }
    out
}

/// Paint the 4-neighborhood boundary of a binary field.
pub fn draw_contour(rgba: &mut [u8], mask: &[f64], n: usize, color: [u8; 4]) {
    let at = |y: isize, x: isize| -> bool {
        if y < 0 || x < 0 || y >= n as isize || x >= n as isize {
            false
        } else {
            mask[y as usize * n + x as usize] > 0.5
        }
    };
    for y in 0..n as isize {
        for x in 0..n as isize {
            if at(y, x) && (!at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1)) {
                let px = (y as usize * n + x as usize) * 4;
                rgba[px..px + 4].copy_from_slice(&color);
            }
        }
    }
}

/// Model wrapped with lazy, one-time decoding of the embedded checkpoint.
pub fn load_embedded_model(bytes: &[u8]) -> Result<Eagle<f32>, String> {
    let (model, _) = eagle_core::train::checkpoint::load_from_bytes::<f32>(bytes)
        .map_err(|e| format!("embedded checkpoint: {e}"))?;
    Ok(model)
}

/// Sanity helper used by both the page footer and the host tests.
pub fn describe_model(model: &Eagle<f32>) -> String {
    format!(
        "channels {:?}, depths {:?}, {} parameters",
        model.cfg.channels,
        model.cfg.depths,
        model.count_params()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const CKPT: &[u8] = include_bytes!("../assets/demo.ckpt");

    #[test]
    fn slice_generation_and_rgba_sizes() {
        let slice = DemoSlice::generate("ce", 7, 64).unwrap();
        let rgba = slice.windowed_rgba(35.0, 150.0, true).unwrap();
        assert_eq!(rgba.len(), 64 * 64 * 4);
        assert!(rgba.chunks_exact(4).all(|px| px[3] == 255));
        let haar = slice.haar_rgba(35.0, 150.0).unwrap();
        assert_eq!(haar.len(), 64 * 64 * 4);
        assert!(slice.haar_roundtrip_error(35.0, 150.0).unwrap() < 1e-6);
        assert!(DemoSlice::generate("cystic", 7, 64).is_err());
        assert!(DemoSlice::generate("ce", 7, 63).is_err());
    }

    #[test]
    fn window_controls_change_the_render() {
        let slice = DemoSlice::generate("ae", 11, 64).unwrap();
        let narrow = slice.windowed_rgba(35.0, 50.0, false).unwrap();
        let wide = slice.windowed_rgba(35.0, 400.0, false).unwrap();
        assert_ne!(narrow, wide);
    }

    #[test]
    fn embedded_model_segments_fresh_slices() {
        let model = load_embedded_model(CKPT).unwrap();
        // seeds never seen in training (training dataset used its own stream)
        let mut dsc_sum = 0.0;
        for seed in 9000..9006u64 {
            let slice = DemoSlice::generate(if seed % 2 == 0 { "ce" } else { "ae" }, seed, 64).unwrap();
            let (dsc, precision, recall) = slice.segmentation_scores(&model, 0.5).unwrap();
            for v in [dsc, precision, recall] {
                assert!((0.0..=1.0).contains(&v));
            }
            dsc_sum += dsc;
        }
        let mean_dsc = dsc_sum / 6.0;
        assert!(mean_dsc > 0.5, "embedded demo model should segment held-out synthetic slices (mean DSC {mean_dsc:.3})");
        let rgba = DemoSlice::generate("ce", 9000, 64)
            .unwrap()
            .segmentation_rgba(&model, 0.5, 35.0, 150.0)
            .unwrap();
        assert_eq!(rgba.len(), 64 * 64 * 4);
        assert!(describe_model(&model).contains("parameters"));
    }
}
