//! The assembled segmentation network.
//!
//! Pipeline: 4x4 patch embedding, four encoder stages (CVSSB group, CBAM in
//! the two deepest stages, Haar wavelet downsampling), four decoder stages
//! (bilinear upsample, channel-halving CVSSB group, CBAM in the two deepest,
//! skip concatenation, 1x1 fusion), and a patch-expansion head that restores
//! the input resolution and emits per-pixel probabilities.
//!
//! Encoder feature `F_i` is the stage output (after the wavelet block) and is
//! both the next stage's input and the decoder skip at that scale, so the
//! skip resolutions match the decoder's post-upsample resolutions exactly:
//! `F_i` has `base_channels * 2^(i-1)` channels at `H / 2^(i+1)` resolution.

use crate::cbam::Cbam;
use crate::cvssb::{ChannelRule, CvssbGroup};
use crate::haar::Hwtb;
use crate::init::{self, Named};
use crate::precision::Real;
use crate::rng::Rng;
use crate::ss2d::Ss2dConfig;
use crate::tensor::{conv::conv2d, ops, resample::bilinear_upsample2x, Mode, Result, Tensor, TensorError};

/// Full architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EagleConfig {
    /// Input channels (1 for CT slices).
    pub in_ch: usize,
    /// Output channels (1 for binary lesion masks).
    pub out_ch: usize,
    /// Patch embedding size and stride.
    pub patch: usize,
    /// Stage widths `[c1..c5]`; each must double the previous.
    pub channels: [usize; 5],
    /// Encoder CVSSB stack depths per stage (stages 2..5).
    pub depths: [usize; 4],
    /// Decoder CVSSB stack depths (deepest stage first).
    pub decoder_depths: [usize; 4],
    /// Encoder/decoder stages (numbered 2..5) that apply CBAM.
    pub cbam_stages: Vec<usize>,
    pub cbam_reduction: usize,
    pub ssm_state_dim: usize,
    pub ssm_expand: usize,
    pub ssm_dwconv_kernel: usize,
}

impl Default for EagleConfig {
    fn default() -> Self {
        EagleConfig {
            in_ch: 1,
            out_ch: 1,
            patch: 4,
            channels: [32, 64, 128, 256, 512],
            depths: [2, 2, 4, 2],
            decoder_depths: [2, 4, 2, 2],
            cbam_stages: vec![4, 5],
            cbam_reduction: 16,
            ssm_state_dim: 16,
            ssm_expand: 2,
            ssm_dwconv_kernel: 3,
        }
    }
}

impl EagleConfig {
    /// Reduced preset for fast CPU experiments and the overfit fixture.
    pub fn tiny() -> Self {
        EagleConfig {
            channels: [8, 16, 32, 64, 128],
            ssm_state_dim: 8,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err(TensorError::invalid("eagle_config", "in_ch/out_ch must be >= 1"));
        }
        if self.patch < 2 {
            return Err(TensorError::invalid("eagle_config", "patch must be >= 2"));
        }
        for i in 0..4 {
            if self.channels[i + 1] != 2 * self.channels[i] {
                return Err(TensorError::invalid(
                    "eagle_config",
                    format!("channels must double per stage, got {:?}", self.channels),
                ));
            }
        }
        if self.channels[0] == 0 {
            return Err(TensorError::invalid("eagle_config", "base width must be >= 1"));
        }
        if self.depths.iter().chain(self.decoder_depths.iter()).any(|d| *d == 0) {
            return Err(TensorError::invalid("eagle_config", "stack depths must be >= 1"));
        }
        if self.cbam_stages.iter().any(|s| !(2..=5).contains(s)) {
            return Err(TensorError::invalid("eagle_config", "cbam stages must lie in 2..=5"));
        }
        Ok(())
    }

    /// Input dims must be divisible by this (patch stride times four halvings).
    pub fn resolution_multiple(&self) -> usize {
        self.patch * 16
    }

    /// Expected encoder feature shapes `(C, H_i, W_i)` for `F_1..F_5`.
    pub fn feature_shapes(&self, h: usize, w: usize) -> [(usize, usize, usize); 5] {
        let mut shapes = [(0, 0, 0); 5];
        let mut side = (h / self.patch, w / self.patch);
        for (i, shape) in shapes.iter_mut().enumerate() {
            if i > 0 {
                side = (side.0 / 2, side.1 / 2);
            }
            *shape = (self.channels[i], side.0, side.1);
        }
        shapes
    }

    fn ss2d(&self, dim: usize) -> Ss2dConfig {
        Ss2dConfig {
            dim,
            expand: self.ssm_expand,
            state_dim: self.ssm_state_dim,
            dwconv_kernel: self.ssm_dwconv_kernel,
            dt_rank: (dim / 16).max(1),
        }
    }
}

/// Multi-scale encoder outputs `F_1..F_5`.
#[derive(Debug, Clone)]
pub struct EncoderFeatures<T: Real> {
    pub f: [Tensor<T>; 5],
}

struct EncoderStage<T: Real> {
    cvssb: CvssbGroup<T>,
    cbam: Option<Cbam<T>>,
    hwtb: Hwtb<T>,
}

struct DecoderStage<T: Real> {
    cvssb: CvssbGroup<T>,
    cbam: Option<Cbam<T>>,
    fuse_w: Tensor<T>,
    fuse_b: Tensor<T>,
}

/// The assembled network.
pub struct Eagle<T: Real> {
    pub cfg: EagleConfig,
    patch_w: Tensor<T>,
    patch_b: Tensor<T>,
    enc: Vec<EncoderStage<T>>,
    dec: Vec<DecoderStage<T>>,
    expand_a_w: Tensor<T>,
    expand_a_b: Tensor<T>,
    expand_b_w: Tensor<T>,
    expand_b_b: Tensor<T>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
}

impl<T: Real> Eagle<T> {
    pub fn new(cfg: EagleConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(seed);
        let c = cfg.channels;

        let patch_w = init::kaiming(
            &mut rng,
            &[c[0], cfg.in_ch, cfg.patch, cfg.patch],
            cfg.in_ch * cfg.patch * cfg.patch,
        );
        let patch_b = init::zeros_param(&[c[0]]);

        // encoder stages 2..5: CVSSB group (doubling), CBAM on deep stages, HWTB
        let mut enc = Vec::with_capacity(4);
        for stage in 2..=5usize {
            let in_ch = c[stage - 2];
            let cvssb = CvssbGroup::new(
                in_ch,
                ChannelRule::Double,
                cfg.depths[stage - 2],
                |dim| cfg.ss2d(dim),
                &mut rng,
            )?;
            let width = cvssb.out_channels();
            let cbam = if cfg.cbam_stages.contains(&stage) {
                Some(Cbam::new(width, cfg.cbam_reduction, &mut rng)?)
            } else {
                None
            };
            enc.push(EncoderStage {
                cvssb,
                cbam,
                hwtb: Hwtb::new(width, &mut rng),
            });
        }

        // decoder stages produce F4^d..F1^d; stage number = produced index + 1
        let mut dec = Vec::with_capacity(4);
        for (slot, produced) in (1..=4usize).rev().enumerate() {
            let in_ch = c[produced]; // width of F_{i+1}
            let cvssb = CvssbGroup::new(
                in_ch,
                ChannelRule::Halve,
                cfg.decoder_depths[slot],
                |dim| cfg.ss2d(dim),
                &mut rng,
            )?;
            let width = cvssb.out_channels(); // = c[produced - 1]
            let stage_number = produced + 1;
            let cbam = if cfg.cbam_stages.contains(&stage_number) {
                Some(Cbam::new(width, cfg.cbam_reduction, &mut rng)?)
            } else {
                None
            };
            dec.push(DecoderStage {
                cvssb,
                cbam,
                fuse_w: init::kaiming(&mut rng, &[width, 2 * width, 1, 1], 2 * width),
                fuse_b: init::zeros_param(&[width]),
            });
        }

        let half = (c[0] / 2).max(1);
        let quarter = (c[0] / 4).max(1);
        Ok(Eagle {
            cfg,
            patch_w,
            patch_b,
            enc,
            dec,
            expand_a_w: init::kaiming(&mut rng, &[half, c[0], 3, 3], 9 * c[0]),
            expand_a_b: init::zeros_param(&[half]),
            expand_b_w: init::kaiming(&mut rng, &[quarter, half, 3, 3], 9 * half),
            expand_b_b: init::zeros_param(&[quarter]),
            head_w: init::kaiming(&mut rng, &[1, quarter, 1, 1], quarter),
            head_b: init::zeros_param(&[1]),
        })
    }

    /// Non-overlapping patch projection `[B, in, H, W] -> [B, c1, H/p, W/p]`.
    pub fn patch_embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.cfg.in_ch {
            return Err(TensorError::shape(
                "patch_embed",
                format!("expected [B, {}, H, W], got {:?}", self.cfg.in_ch, s),
            ));
        }
        if !s[2].is_multiple_of(self.cfg.patch) || !s[3].is_multiple_of(self.cfg.patch) {
            return Err(TensorError::shape(
                "patch_embed",
                format!("H, W must be divisible by patch {}, got {}x{}", self.cfg.patch, s[2], s[3]),
            ));
        }
        conv2d(x, &self.patch_w, Some(&self.patch_b), self.cfg.patch, 0, 1)
    }

    /// Run the encoder, producing the five-scale feature pyramid.
    pub fn encode(&self, x: &Tensor<T>, mode: Mode) -> Result<EncoderFeatures<T>> {
        let s = x.shape();
        let multiple = self.cfg.resolution_multiple();
        if s.len() != 4 || !s[2].is_multiple_of(multiple) || !s[3].is_multiple_of(multiple) || s[2] == 0 {
            return Err(TensorError::shape(
                "encode",
                format!("input H, W must be nonzero multiples of {multiple}, got {:?}", s),
            ));
        }
        let f1 = self.patch_embed(x)?;
        let mut feats = Vec::with_capacity(5);
        let mut cur = f1.clone();
        feats.push(f1);
        for stage in &self.enc {
            let mut v = stage.cvssb.forward(&cur)?;
            if let Some(cbam) = &stage.cbam {
                v = cbam.forward(&v)?;
            }
            cur = stage.hwtb.forward(&v, mode)?;
            feats.push(cur.clone());
        }
        let f: [Tensor<T>; 5] = feats.try_into().map_err(|_| TensorError::invalid("encode", "pyramid arity"))?;
        Ok(EncoderFeatures { f })
    }

    /// Decode the pyramid into a probability map matching the encoder input.
    pub fn decode(&self, feats: &EncoderFeatures<T>) -> Result<Tensor<T>> {
        let mut cur = feats.f[4].clone();
        for (stage, skip_idx) in self.dec.iter().zip((0..4usize).rev()) {
            let up = bilinear_upsample2x(&cur)?;
            let mut v = stage.cvssb.forward(&up)?;
            if let Some(cbam) = &stage.cbam {
                v = cbam.forward(&v)?;
            }
            let skip = &feats.f[skip_idx];
            if skip.shape() != v.shape() {
                return Err(TensorError::shape(
                    "decode",
                    format!("skip {:?} vs decoder map {:?}", skip.shape(), v.shape()),
                ));
            }
            let merged = ops::concat_channels(&[v, skip.clone()])?;
            cur = conv2d(&merged, &stage.fuse_w, Some(&stage.fuse_b), 1, 0, 1)?;
        }
        // patch expansion: two conv + bilinear blocks, then the 1x1 head
        let a = bilinear_upsample2x(&conv2d(&cur, &self.expand_a_w, Some(&self.expand_a_b), 1, 1, 1)?)?;
        let b = bilinear_upsample2x(&conv2d(&a, &self.expand_b_w, Some(&self.expand_b_b), 1, 1, 1)?)?;
        Ok(ops::sigmoid(&conv2d(&b, &self.head_w, Some(&self.head_b), 1, 0, 1)?))
    }

    /// Full forward pass: probabilities in (0, 1) with the input's shape.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let feats = self.encode(x, mode)?;
        self.decode(&feats)
    }

    pub fn named_params(&self) -> Named<T> {
        let mut out = Vec::new();
        init::push(&mut out, "patch", "w", &self.patch_w);
        init::push(&mut out, "patch", "b", &self.patch_b);
        for (i, stage) in self.enc.iter().enumerate() {
            let prefix = format!("enc{}", i + 2);
            stage.cvssb.collect_params(&format!("{prefix}.cvssb"), &mut out);
            if let Some(cbam) = &stage.cbam {
                cbam.collect_params(&format!("{prefix}.cbam"), &mut out);
            }
            stage.hwtb.collect_params(&format!("{prefix}.hwtb"), &mut out);
        }
        for (slot, stage) in self.dec.iter().enumerate() {
            let prefix = format!("dec{}", 4 - slot);
            stage.cvssb.collect_params(&format!("{prefix}.cvssb"), &mut out);
            if let Some(cbam) = &stage.cbam {
                cbam.collect_params(&format!("{prefix}.cbam"), &mut out);
            }
            init::push(&mut out, &prefix, "fuse_w", &stage.fuse_w);
            init::push(&mut out, &prefix, "fuse_b", &stage.fuse_b);
        }
        init::push(&mut out, "expand", "a_w", &self.expand_a_w);
        init::push(&mut out, "expand", "a_b", &self.expand_a_b);
        init::push(&mut out, "expand", "b_w", &self.expand_b_w);
        init::push(&mut out, "expand", "b_b", &self.expand_b_b);
        init::push(&mut out, "head", "w", &self.head_w);
        init::push(&mut out, "head", "b", &self.head_b);
        out
    }

    /// Non-trainable buffers (batch-norm running statistics).
    pub fn named_buffers(&self) -> Named<T> {
        let mut out = Vec::new();
        for (i, stage) in self.enc.iter().enumerate() {
            stage.hwtb.collect_buffers(&format!("enc{}.hwtb", i + 2), &mut out);
        }
        out
    }

    pub fn count_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, p) in self.named_params() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_input;
    use crate::tensor::no_grad;

    fn micro_cfg() -> EagleConfig {
        // smallest legal widths keep the unit tests quick
        EagleConfig {
            channels: [4, 8, 16, 32, 64],
            depths: [1, 1, 1, 1],
            decoder_depths: [1, 1, 1, 1],
            cbam_reduction: 4,
            ssm_state_dim: 2,
            ..Default::default()
        }
    }

    #[test]
    fn patch_embed_shapes() {
        let model = Eagle::<f32>::new(micro_cfg(), 7).unwrap();
        let x = random_input::<f32>(&[1, 1, 64, 64], 140, 0.0);
        let y = model.patch_embed(&x).unwrap();
        assert_eq!(y.shape(), &[1, 4, 16, 16]);
        // stride == kernel: constant input gives a spatially constant embedding
        let flat = model.patch_embed(&Tensor::full(&[1, 1, 64, 64], 0.5)).unwrap();
        let d = flat.to_vec();
        for c in 0..4 {
            let base = c * 256;
            for p in 1..256 {
                assert!((d[base + p] - d[base]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn encoder_feature_shape_formula() {
        let cfg = micro_cfg();
        let model = Eagle::<f32>::new(cfg.clone(), 8).unwrap();
        let (h, w) = (64, 64);
        let x = random_input::<f32>(&[1, 1, h, w], 141, 0.0);
        let feats = no_grad(|| model.encode(&x, Mode::Eval)).unwrap();
        for (i, (c, fh, fw)) in cfg.feature_shapes(h, w).iter().enumerate() {
            assert_eq!(feats.f[i].shape(), &[1, *c, *fh, *fw], "F{}", i + 1);
        }
    }

    #[test]
    fn forward_matches_input_dims_and_range() {
        let model = Eagle::<f32>::new(micro_cfg(), 9).unwrap();
        let x = random_input::<f32>(&[2, 1, 64, 64], 142, 0.0);
        let y = no_grad(|| model.forward(&x, Mode::Eval)).unwrap();
        assert_eq!(y.shape(), &[2, 1, 64, 64]);
        assert!(y.to_vec().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn rejects_resolution_not_multiple_of_64() {
        let model = Eagle::<f32>::new(micro_cfg(), 10).unwrap();
        let x = random_input::<f32>(&[1, 1, 48, 48], 143, 0.0);
        assert!(model.encode(&x, Mode::Eval).is_err());
        // patch embedding alone also rejects indivisible dims
        let odd = random_input::<f32>(&[1, 1, 30, 30], 143, 0.0);
        assert!(model.patch_embed(&odd).is_err());
    }

    #[test]
    fn decode_rejects_mismatched_pyramid() {
        let model = Eagle::<f32>::new(micro_cfg(), 10).unwrap();
        let x = random_input::<f32>(&[1, 1, 64, 64], 147, 0.0);
        let mut feats = no_grad(|| model.encode(&x, Mode::Eval)).unwrap();
        // swap in a skip from the wrong scale
        feats.f[3] = feats.f[2].clone();
        let err = no_grad(|| model.decode(&feats)).unwrap_err();
        assert!(format!("{err}").contains("skip"), "{err}");
    }

    #[test]
    fn eval_forward_is_deterministic_and_batch_permutable() {
        let model = Eagle::<f32>::new(micro_cfg(), 11).unwrap();
        let xa = random_input::<f32>(&[1, 1, 64, 64], 144, 0.0);
        let xb = random_input::<f32>(&[1, 1, 64, 64], 145, 0.0);
        let mut ab = xa.to_vec();
        ab.extend(xb.to_vec());
        let mut ba = xb.to_vec();
        ba.extend(xa.to_vec());
        let batch_ab = Tensor::from_vec(&[2, 1, 64, 64], ab).unwrap();
        let batch_ba = Tensor::from_vec(&[2, 1, 64, 64], ba).unwrap();
        let (y_ab, y_ab2, y_ba) = no_grad(|| {
            (
                model.forward(&batch_ab, Mode::Eval).unwrap(),
                model.forward(&batch_ab, Mode::Eval).unwrap(),
                model.forward(&batch_ba, Mode::Eval).unwrap(),
            )
        });
        // bitwise determinism
        assert_eq!(y_ab.to_vec(), y_ab2.to_vec());
        // per-sample independence: swapped batch swaps outputs exactly
        let (ab_d, ba_d) = (y_ab.to_vec(), y_ba.to_vec());
        let n = 64 * 64;
        assert_eq!(ab_d[..n], ba_d[n..]);
        assert_eq!(ab_d[n..], ba_d[..n]);
    }

    #[test]
    fn count_params_is_construction_invariant() {
        let a = Eagle::<f32>::new(micro_cfg(), 12).unwrap();
        let b = Eagle::<f32>::new(micro_cfg(), 13).unwrap();
        assert_eq!(a.count_params(), b.count_params());
        assert!(a.count_params() > 0);
    }

    #[test]
    fn table_depth_variants_construct() {
        for depths in [[3, 3, 3, 3], [2, 2, 5, 2]] {
            let mut cfg = micro_cfg();
            cfg.depths = depths;
            let mut rev = depths;
            rev.reverse();
            cfg.decoder_depths = rev;
            assert!(Eagle::<f32>::new(cfg, 14).is_ok(), "{depths:?}");
        }
    }

    #[test]
    fn config_validation_rejects_bad_channels() {
        let mut cfg = micro_cfg();
        cfg.channels = [4, 8, 16, 32, 65];
        assert!(Eagle::<f32>::new(cfg, 15).is_err());
        let mut cfg2 = micro_cfg();
        cfg2.depths = [0, 1, 1, 1];
        assert!(Eagle::<f32>::new(cfg2, 16).is_err());
    }

    #[test]
    fn no_dead_parameters_after_one_backward() {
        let model = Eagle::<f32>::new(micro_cfg(), 17).unwrap();
        let x = random_input::<f32>(&[2, 1, 64, 64], 146, 0.0);
        let mask = {
            let mut m = vec![0.0f32; 2 * 64 * 64];
            for (i, v) in m.iter_mut().enumerate() {
                if (i / 64 + i % 64) % 3 == 0 {
                    *v = 1.0;
                }
            }
            Tensor::from_vec(&[2, 1, 64, 64], m).unwrap()
        };
        let prob = model.forward(&x, Mode::Train).unwrap();
        let loss = crate::loss::combined_loss(&mask, &prob, &crate::loss::LossWeights::default()).unwrap();
        loss.backward().unwrap();
        for (name, p) in model.named_params() {
            let grad = p.grad().unwrap_or_else(|| panic!("{name}: no gradient"));
            assert!(
                grad.iter().any(|g| *g != 0.0),
                "{name}: gradient identically zero"
            );
        }
    }
}
