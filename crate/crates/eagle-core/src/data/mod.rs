//! CT-style preprocessing and dataset handling: HU windowing, deterministic
//! patient-grouped splitting, a synthetic lesion generator standing in for
//! clinical data, and label-preserving augmentation.

pub mod augment;
pub mod io;
pub mod synth;

use crate::precision::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Hounsfield windowing parameters (defaults: width 150, level 35, mapping
/// HU [-40, 110] onto [0, 1]).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowSpec {
    pub level: f64,
    pub width: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { level: 35.0, width: 150.0 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(TensorError::invalid(
                "window_spec",
                format!("width must be > 0, got {}", self.width),
            ));
        }
        Ok(())
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.level - self.width / 2.0, self.level + self.width / 2.0)
    }

    pub fn apply_scalar(&self, hu: f64) -> f64 {
        let (lo, hi) = self.bounds();
        // the final clamp absorbs the one-ulp excess of (hi - lo) over width
        ((hu.clamp(lo, hi) - lo) / self.width).clamp(0.0, 1.0)
    }
}

/// Clamp raw HU values to the window and map linearly onto [0, 1].
pub fn window_hu<T: Real>(raw: &Tensor<T>, spec: &WindowSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let data: Vec<T> = raw.with_data(|rd| {
        rd.iter()
            .map(|v| T::from_f64(spec.apply_scalar(v.to_f64())))
            .collect()
    });
    Tensor::from_vec(raw.shape(), data)
}

/// Lesion style of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionKind {
    /// Cystic: well-bounded, fluid interior, bright rim.
    Ce,
    /// Alveolar: infiltrative blob unions with blurred boundaries.
    Ae,
    /// Unspecified synthetic content.
    Synthetic,
}

impl std::fmt::Display for LesionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LesionKind::Ce => write!(f, "ce"),
            LesionKind::Ae => write!(f, "ae"),
            LesionKind::Synthetic => write!(f, "synthetic"),
        }
    }
}

/// Dataset partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub kind: LesionKind,
    pub split: Option<Split>,
    /// Grouping key for split assignment; samples sharing it never land in
    /// different splits.
    pub patient: String,
}

/// A windowed slice plus its binary lesion mask.
#[derive(Debug, Clone)]
pub struct Sample<T: Real> {
    /// `[1, H, W]`, values in [0, 1].
    pub image: Tensor<T>,
    /// `[1, H, W]`, values in {0, 1}.
    pub mask: Tensor<T>,
    pub meta: SampleMeta,
}

impl<T: Real> Sample<T> {
    pub fn validate(&self) -> Result<()> {
        if self.image.shape() != self.mask.shape() || self.image.shape().len() != 3 {
            return Err(TensorError::shape(
                "sample",
                format!("image {:?} vs mask {:?}", self.image.shape(), self.mask.shape()),
            ));
        }
        let binary = self
            .mask
            .with_data(|md| md.iter().all(|v| *v == T::ZERO || *v == T::ONE));
        if !binary {
            return Err(TensorError::invalid("sample", "mask must be strictly binary"));
        }
        Ok(())
    }
}

/// Deterministically assign one split per item, grouping by key: items with
/// equal keys always share a split. Counts are taken over unique keys
/// (train and val rounded, the remainder to test).
pub fn split_assignments(
    group_keys: &[String],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Split>> {
    let (r_train, r_val, r_test) = ratios;
    if (r_train + r_val + r_test - 1.0).abs() > 1e-9 || r_train < 0.0 || r_val < 0.0 || r_test < 0.0 {
        return Err(TensorError::invalid(
            "split",
            format!("ratios must be non-negative and sum to 1, got {ratios:?}"),
        ));
    }
    let mut unique: Vec<&String> = Vec::new();
    {
        let mut seen = std::collections::HashSet::new();
        for key in group_keys {
            if seen.insert(key) {
                unique.push(key);
            }
        }
    }
    let mut order: Vec<usize> = (0..unique.len()).collect();
    crate::rng::Rng::new(seed).shuffle(&mut order);

    let p = unique.len();
    let n_train = (r_train * p as f64).round() as usize;
    let n_val = ((r_val * p as f64).round() as usize).min(p - n_train.min(p));
    let mut assignment = std::collections::HashMap::new();
    for (rank, &idx) in order.iter().enumerate() {
        let split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        assignment.insert(unique[idx].clone(), split);
    }
    Ok(group_keys
        .iter()
        .map(|k| assignment[k])
        .collect())
}

/// Center crop or zero-pad the last two dims to the nearest multiple of
/// `multiple` (minimum one multiple).
pub fn crop_pad_to_multiple<T: Real>(x: &Tensor<T>, multiple: usize) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 3 {
        return Err(TensorError::shape("crop_pad", format!("expected [C, H, W], got {:?}", s)));
    }
    let target = |extent: usize| -> usize {
        let down = (extent / multiple) * multiple;
        let up = down + multiple;
        if down == 0 || (extent - down) > (up - extent) {
            up
        } else {
            down
        }
    };
    crop_pad_to(x, target(s[1]), target(s[2]))
}

/// Center crop or zero-pad a `[C, H, W]` tensor to exactly `th x tw`.
pub fn crop_pad_to<T: Real>(x: &Tensor<T>, th: usize, tw: usize) -> Result<Tensor<T>> {
    let s = x.shape().to_vec();
    if s.len() != 3 {
        return Err(TensorError::shape("crop_pad", format!("expected [C, H, W], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (th, tw) == (h, w) {
        return Ok(x.clone());
    }
    let mut out = vec![T::ZERO; c * th * tw];
    // copy overlap region, centered on both canvases
    let copy_h = h.min(th);
    let copy_w = w.min(tw);
    let src_y0 = (h - copy_h) / 2;
    let src_x0 = (w - copy_w) / 2;
    let dst_y0 = (th - copy_h) / 2;
    let dst_x0 = (tw - copy_w) / 2;
    x.with_data(|xd| {
        for ci in 0..c {
            for y in 0..copy_h {
                let src = (ci * h + src_y0 + y) * w + src_x0;
                let dst = (ci * th + dst_y0 + y) * tw + dst_x0;
                out[dst..dst + copy_w].copy_from_slice(&xd[src..src + copy_w]);
            }
        }
    });
    Tensor::from_vec(&[c, th, tw], out)
}
