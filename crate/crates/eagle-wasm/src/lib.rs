//! Browser bindings for the interactive demo page: synthetic slice
//! generation with live HU windowing, Haar sub-band visualization, and
//! in-browser segmentation with a small embedded checkpoint.

mod render;

use eagle_core::model::Eagle;
use render::DemoSlice;
use std::cell::OnceCell;
use wasm_bindgen::prelude::*;

const EMBEDDED_CKPT: &[u8] = include_bytes!("../assets/demo.ckpt");

thread_local! {
    static MODEL: OnceCell<Eagle<f32>> = const { OnceCell::new() };
}

fn with_model<R>(f: impl FnOnce(&Eagle<f32>) -> Result<R, String>) -> Result<R, JsError> {
    MODEL.with(|cell| {
        if cell.get().is_none() {
            let model = render::load_embedded_model(EMBEDDED_CKPT).map_err(|e| JsError::new(&e))?;
            let _ = cell.set(model);
        }
        f(cell.get().expect("model initialized above")).map_err(|e| JsError::new(&e))
    })
}

/// One synthetic slice plus its ground-truth mask, generated in HU space so
/// the window controls re-render without regenerating.
#[wasm_bindgen]
pub struct SliceView {
    inner: DemoSlice,
}

#[wasm_bindgen]
impl SliceView {
    /// `kind` is "ce" or "ae"; `size` is 64, 128, or 256.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u32, size: usize) -> Result<SliceView, JsError> {
        DemoSlice::generate(kind, seed as u64, size)
            .map(|inner| SliceView { inner })
            .map_err(|e| JsError::new(&e))
    }

    pub fn size(&self) -> usize {
        self.inner.size()
    }

    /// RGBA pixels of the windowed slice; optionally draws the ground-truth
    /// lesion boundary.
    pub fn windowed_rgba(&self, level: f64, width: f64, show_mask: bool) -> Result<Vec<u8>, JsError> {
        self.inner.windowed_rgba(level, width, show_mask).map_err(|e| JsError::new(&e))
    }

    /// RGBA grid of the four Haar sub-bands (L, HV / HH, HD).
    pub fn haar_rgba(&self, level: f64, width: f64) -> Result<Vec<u8>, JsError> {
        self.inner.haar_rgba(level, width).map_err(|e| JsError::new(&e))
    }

    /// Max abs reconstruction error of the Haar round trip.
    pub fn haar_roundtrip_error(&self, level: f64, width: f64) -> Result<f64, JsError> {
        self.inner.haar_roundtrip_error(level, width).map_err(|e| JsError::new(&e))
    }

    /// RGBA heatmap of the embedded model's prediction, with predicted (red)
    /// and ground-truth (green) boundaries.
    pub fn segment_rgba(&self, threshold: f64, level: f64, width: f64) -> Result<Vec<u8>, JsError> {
        with_model(|model| self.inner.segmentation_rgba(model, threshold, level, width))
    }

    /// `[dsc, precision, recall]` of the thresholded prediction against the
    /// generator's mask.
    pub fn segment_scores(&self, threshold: f64) -> Result<Vec<f64>, JsError> {
        with_model(|model| {
            self.inner
                .segmentation_scores(model, threshold)
                .map(|(d, p, r)| vec![d, p, r])
        })
    }
}

/// Human-readable description of the embedded model.
#[wasm_bindgen]
pub fn model_info() -> Result<String, JsError> {
    with_model(|model| Ok(render::describe_model(model)))
}

/// Version tag of the synthetic generator baked into this build.
#[wasm_bindgen]
pub fn generator_version() -> u32 {
    eagle_core::data::synth::GENERATOR_VERSION
}
