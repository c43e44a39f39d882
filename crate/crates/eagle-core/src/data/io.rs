//! On-disk dataset layout.
//!
//! Each sample is an image/mask pair of 2D grid containers plus an 8-bit
//! grayscale PNG export for visual inspection; a JSON manifest lists ids,
//! kinds, and splits. Grid container byte layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EGLG"
//! 4       1     container version (1)
//! 5       1     dtype tag: 1 = f32, 2 = f64, 3 = u8, 4 = i16
//! 6       4     height (u32)
//! 10      4     width  (u32)
//! 14      ..    row-major payload, height * width elements
//! ```
//!
//! Images are stored as f32 in [0, 1]; masks as u8 in {0, 1}. Raw clinical
//! input would arrive as i16 HU grids and pass through windowing on load.

use super::{LesionKind, Sample, SampleMeta, Split, WindowSpec};
use crate::precision::Real;
use crate::tensor::{Tensor, TensorError};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EGLG";
pub const CONTAINER_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png: {0}")]
    Png(#[from] png::EncodingError),
    #[error("malformed container: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Typed payload of a grid container.
#[derive(Debug, Clone, PartialEq)]
pub enum GridData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I16(Vec<i16>),
}

impl GridData {
    fn dtype_tag(&self) -> u8 {
        match self {
            GridData::F32(_) => 1,
            GridData::F64(_) => 2,
            GridData::U8(_) => 3,
            GridData::I16(_) => 4,
        }
    }

    fn len(&self) -> usize {
        match self {
            GridData::F32(v) => v.len(),
            GridData::F64(v) => v.len(),
            GridData::U8(v) => v.len(),
            GridData::I16(v) => v.len(),
        }
    }
}

pub fn write_grid(path: &Path, h: usize, w: usize, data: &GridData) -> Result<()> {
    if data.len() != h * w {
        return Err(DataError::Format(format!(
            "payload length {} does not match {h}x{w}",
            data.len()
        )));
    }
    let mut buf = Vec::with_capacity(14 + data.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.push(CONTAINER_VERSION);
    buf.push(data.dtype_tag());
    buf.extend_from_slice(&(h as u32).to_le_bytes());
    buf.extend_from_slice(&(w as u32).to_le_bytes());
    match data {
        GridData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        GridData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        GridData::U8(v) => buf.extend_from_slice(v),
        GridData::I16(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<(usize, usize, GridData)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 14 {
        return Err(DataError::Format(format!("{}: truncated header", path.display())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(DataError::Format(format!("{}: bad magic bytes", path.display())));
    }
    if bytes[4] != CONTAINER_VERSION {
        return Err(DataError::Format(format!("{}: unsupported version {}", path.display(), bytes[4])));
    }
    let dtype = bytes[5];
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let n = h * w;
    let payload = &bytes[14..];
    let want = |elem: usize| -> Result<()> {
        if payload.len() != n * elem {
            Err(DataError::Format(format!(
                "{}: payload {} bytes, expected {}",
                path.display(),
                payload.len(),
                n * elem
            )))
        } else {
            Ok(())
        }
    };
    let data = match dtype {
        1 => {
            want(4)?;
            GridData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        2 => {
            want(8)?;
            GridData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        }
        3 => {
            want(1)?;
            GridData::U8(payload.to_vec())
        }
        4 => {
            want(2)?;
            GridData::I16(payload.chunks_exact(2).map(|c| i16::from_le_bytes(c.try_into().unwrap())).collect())
        }
        other => return Err(DataError::Format(format!("{}: unknown dtype tag {other}", path.display()))),
    };
    Ok((h, w, data))
}

/// Load a grid as a `[1, H, W]` tensor in [0, 1]: floating payloads are taken
/// as already windowed, u8 is scaled by 1/255, and i16 is treated as raw HU
/// and windowed with `window`.
pub fn read_image_tensor<T: Real>(path: &Path, window: &WindowSpec) -> Result<Tensor<T>> {
    let (h, w, data) = read_grid(path)?;
    let values: Vec<T> = match data {
        GridData::F32(v) => v.into_iter().map(|x| T::from_f64(x as f64)).collect(),
        GridData::F64(v) => v.into_iter().map(T::from_f64).collect(),
        GridData::U8(v) => v.into_iter().map(|x| T::from_f64(x as f64 / 255.0)).collect(),
        GridData::I16(v) => v
            .into_iter()
            .map(|x| T::from_f64(window.apply_scalar(x as f64)))
            .collect(),
    };
    Ok(Tensor::from_vec(&[1, h, w], values)?)
}

/// 8-bit grayscale PNG of values in [0, 1].
pub fn write_gray_png(path: &Path, h: usize, w: usize, values: &[f64]) -> Result<()> {
    if values.len() != h * w {
        return Err(DataError::Format(format!("png payload {} != {h}x{w}", values.len())));
    }
    let file = fs::File::create(path)?;
    let mut encoder = png::Encoder::new(std::io::BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header()?;
    let bytes: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    writer.write_image_data(&bytes)?;
    Ok(())
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: LesionKind,
    pub split: Split,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub generator_version: u32,
    pub seed: u64,
    pub samples: Vec<ManifestEntry>,
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(split.to_string())
}

pub fn image_path(root: &Path, split: Split, id: &str) -> PathBuf {
    split_dir(root, split).join(format!("{id}.img"))
}

pub fn mask_path(root: &Path, split: Split, id: &str) -> PathBuf {
    split_dir(root, split).join(format!("{id}.msk"))
}

/// Write samples (with assigned splits) under `root`: one directory per
/// split, containers plus PNG exports, and the manifest.
pub fn write_dataset<T: Real>(root: &Path, samples: &[Sample<T>], seed: u64) -> Result<Manifest> {
    fs::create_dir_all(root)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        fs::create_dir_all(split_dir(root, split))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for sample in samples {
        sample.validate()?;
        let split = sample.meta.split.ok_or_else(|| {
            DataError::Format(format!("{}: sample has no split assigned", sample.meta.id))
        })?;
        let shape = sample.image.shape().to_vec();
        let (h, w) = (shape[1], shape[2]);
        let id = &sample.meta.id;
        let img_f32: Vec<f32> = sample.image.with_data(|d| d.iter().map(|v| v.to_f64() as f32).collect());
        let msk_u8: Vec<u8> = sample.mask.with_data(|d| d.iter().map(|v| if *v > T::ZERO { 1u8 } else { 0u8 }).collect());
        write_grid(&image_path(root, split, id), h, w, &GridData::F32(img_f32.clone()))?;
        write_grid(&mask_path(root, split, id), h, w, &GridData::U8(msk_u8.clone()))?;
        let dir = split_dir(root, split);
        write_gray_png(
            &dir.join(format!("{id}.png")),
            h,
            w,
            &img_f32.iter().map(|v| *v as f64).collect::<Vec<_>>(),
        )?;
        write_gray_png(
            &dir.join(format!("{id}_mask.png")),
            h,
            w,
            &msk_u8.iter().map(|v| *v as f64).collect::<Vec<_>>(),
        )?;
        entries.push(ManifestEntry {
            id: id.clone(),
            kind: sample.meta.kind,
            split,
            h,
            w,
        });
    }
    let manifest = Manifest {
        generator_version: super::synth::GENERATOR_VERSION,
        seed,
        samples: entries,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(root.join("manifest.json"), json)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let raw = fs::read_to_string(root.join("manifest.json"))?;
    Ok(serde_json::from_str(&raw)?)
}

/// Load every sample of one split.
pub fn load_split<T: Real>(root: &Path, split: Split) -> Result<Vec<Sample<T>>> {
    let manifest = read_manifest(root)?;
    let mut out = Vec::new();
    for entry in manifest.samples.iter().filter(|e| e.split == split) {
        let (h, w, img) = read_grid(&image_path(root, split, &entry.id))?;
        let GridData::F32(img) = img else {
            return Err(DataError::Format(format!("{}: image container must be f32", entry.id)));
        };
        let (mh, mw, msk) = read_grid(&mask_path(root, split, &entry.id))?;
        let GridData::U8(msk) = msk else {
            return Err(DataError::Format(format!("{}: mask container must be u8", entry.id)));
        };
        if (h, w) != (mh, mw) {
            return Err(DataError::Format(format!("{}: image {h}x{w} vs mask {mh}x{mw}", entry.id)));
        }
        let sample = Sample {
            image: Tensor::from_vec(&[1, h, w], img.into_iter().map(|v| T::from_f64(v as f64)).collect())?,
            mask: Tensor::from_vec(&[1, h, w], msk.into_iter().map(|v| T::from_f64(v as f64)).collect())?,
            meta: SampleMeta {
                id: entry.id.clone(),
                kind: entry.kind,
                split: Some(split),
                patient: entry.id.clone(),
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
    use crate::data::synth::synth_generate;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("eagle_io_{tag}_{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn grid_roundtrip_all_dtypes() {
        let dir = tmpdir("grid");
        let cases = [
            GridData::F32(vec![0.0, 0.5, 1.0, -2.25]),
            GridData::F64(vec![0.1, 0.2, 0.3, 0.4]),
            GridData::U8(vec![0, 1, 255, 7]),
            GridData::I16(vec![-1000, -40, 110, 400]),
        ];
        for (i, data) in cases.iter().enumerate() {
            let path = dir.join(format!("g{i}.img"));
            write_grid(&path, 2, 2, data).unwrap();
            let (h, w, back) = read_grid(&path).unwrap();
            assert_eq!((h, w), (2, 2));
            assert_eq!(&back, data);
        }
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tmpdir("magic");
        let path = dir.join("bad.img");
        fs::write(&path, b"NOPE\x01\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00").unwrap();
        assert!(matches!(read_grid(&path), Err(DataError::Format(_))));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn i16_grids_are_windowed_on_load() {
        let dir = tmpdir("window");
        let path = dir.join("hu.img");
        write_grid(&path, 1, 5, &GridData::I16(vec![-500, -40, 35, 110, 200])).unwrap();
        let t = read_image_tensor::<f64>(&path, &WindowSpec::default()).unwrap();
        assert_eq!(t.to_vec(), vec![0.0, 0.0, 0.5, 1.0, 1.0]);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn dataset_roundtrip_preserves_samples() {
        let dir = tmpdir("ds");
        let mut samples = synth_generate::<f32>(4, 21, crate::data::LesionKind::Synthetic, 64).unwrap();
        let keys: Vec<String> = samples.iter().map(|s| s.meta.patient.clone()).collect();
        let splits = crate::data::split_assignments(&keys, (0.5, 0.25, 0.25), 21).unwrap();
        for (s, sp) in samples.iter_mut().zip(&splits) {
            s.meta.split = Some(*sp);
        }
        let manifest = write_dataset(&dir, &samples, 21).unwrap();
        assert_eq!(manifest.samples.len(), 4);
        assert!(dir.join("manifest.json").exists());

        let mut loaded = 0;
        for split in [Split::Train, Split::Val, Split::Test] {
            for s in load_split::<f32>(&dir, split).unwrap() {
                let orig = samples.iter().find(|o| o.meta.id == s.meta.id).unwrap();
                assert_eq!(s.image.to_vec(), orig.image.to_vec());
                assert_eq!(s.mask.to_vec(), orig.mask.to_vec());
                loaded += 1;
            }
        }
        assert_eq!(loaded, 4);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn dataset_write_is_byte_deterministic() {
        let dir_a = tmpdir("det_a");
        let dir_b = tmpdir("det_b");
        for dir in [&dir_a, &dir_b] {
            let mut samples = synth_generate::<f32>(3, 5, crate::data::LesionKind::Ce, 64).unwrap();
            for s in &mut samples {
                s.meta.split = Some(Split::Train);
            }
            write_dataset(dir, &samples, 5).unwrap();
        }
        for name in ["manifest.json", "train/ce0000.img", "train/ce0000.msk", "train/ce0000.png"] {
            let a = fs::read(dir_a.join(name)).unwrap();
            let b = fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
    }
}
