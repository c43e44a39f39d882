//! Convolutional block attention: sequential channel-then-spatial gating.
//!
//! Channel attention pools the map with both global average and global max,
//! pushes the two descriptors through a shared bottleneck MLP, sums, and
//! applies a sigmoid. Spatial attention concatenates the channelwise mean
//! and max maps and scores positions with a 7x7 convolution. Both gates lie
//! in (0, 1), so `|output| <= |input|` elementwise.

use crate::init::{self, Named};
use crate::precision::Real;
use crate::rng::Rng;
use crate::tensor::{conv::conv2d, ops, Result, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct Cbam<T: Real> {
    channels: usize,
    fc1_w: Tensor<T>,
    fc1_b: Tensor<T>,
    fc2_w: Tensor<T>,
    fc2_b: Tensor<T>,
    spatial_w: Tensor<T>,
    spatial_b: Tensor<T>,
}

pub const DEFAULT_REDUCTION: usize = 16;
pub const SPATIAL_KERNEL: usize = 7;

impl<T: Real> Cbam<T> {
    pub fn new(channels: usize, reduction: usize, rng: &mut Rng) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(TensorError::invalid(
                "cbam",
                format!("reduction {reduction} must divide channel count {channels}"),
            ));
        }
        let hidden = channels / reduction;
        Ok(Cbam {
            channels,
            fc1_w: init::kaiming(rng, &[hidden, channels], channels),
            fc1_b: init::zeros_param(&[hidden]),
            fc2_w: init::kaiming(rng, &[channels, hidden], hidden),
            fc2_b: init::zeros_param(&[channels]),
            spatial_w: init::kaiming(
                rng,
                &[1, 2, SPATIAL_KERNEL, SPATIAL_KERNEL],
                2 * SPATIAL_KERNEL * SPATIAL_KERNEL,
            ),
            spatial_b: init::zeros_param(&[1]),
        })
    }

    fn channel_gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mlp = |pooled: &Tensor<T>| -> Result<Tensor<T>> {
            let hidden = ops::silu(&ops::linear_features(pooled, &self.fc1_w, Some(&self.fc1_b))?);
            ops::linear_features(&hidden, &self.fc2_w, Some(&self.fc2_b))
        };
        let avg_logits = mlp(&ops::global_avg_pool(x)?)?;
        let max_logits = mlp(&ops::global_max_pool(x)?)?;
        Ok(ops::sigmoid(&ops::add(&avg_logits, &max_logits)?))
    }

    fn spatial_gate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let descriptor = ops::concat_channels(&[ops::channel_mean_map(x)?, ops::channel_max_map(x)?])?;
        let logits = conv2d(&descriptor, &self.spatial_w, Some(&self.spatial_b), 1, SPATIAL_KERNEL / 2, 1)?;
        Ok(ops::sigmoid(&logits))
    }

    /// `[B, C, H, W] -> [B, C, H, W]`: `x' = x (.) Mc(x)`, then `x' (.) Ms(x')`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels {
            return Err(TensorError::shape(
                "cbam",
                format!("expected [B, {}, H, W], got {:?}", self.channels, s),
            ));
        }
        let after_channel = ops::mul_channel_gate(x, &self.channel_gate(x)?)?;
        let gate = self.spatial_gate(&after_channel)?;
        ops::mul_spatial_gate(&after_channel, &gate)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Named<T>) {
        init::push(out, prefix, "fc1_w", &self.fc1_w);
        init::push(out, prefix, "fc1_b", &self.fc1_b);
        init::push(out, prefix, "fc2_w", &self.fc2_w);
        init::push(out, prefix, "fc2_b", &self.fc2_b);
        init::push(out, prefix, "spatial_w", &self.spatial_w);
        init::push(out, prefix, "spatial_b", &self.spatial_b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::random_input;
    use crate::tensor::ops::{mean_all, mul};

    #[test]
    fn shape_preserved() {
        let mut rng = Rng::new(130);
        let cbam = Cbam::<f32>::new(64, DEFAULT_REDUCTION, &mut rng).unwrap();
        let x = random_input::<f32>(&[1, 64, 8, 8], 131, 0.0);
        assert_eq!(cbam.forward(&x).unwrap().shape(), x.shape());
    }

    #[test]
    fn saturated_gates_approach_identity() {
        let mut rng = Rng::new(132);
        let mut cbam = Cbam::<f64>::new(4, 2, &mut rng).unwrap();
        cbam.fc2_b = Tensor::parameter(&[4], vec![60.0; 4]).unwrap();
        cbam.spatial_b = Tensor::parameter(&[1], vec![60.0]).unwrap();
        cbam.spatial_w.update_data(|d| d.iter_mut().for_each(|v| *v = 0.0));
        let x = random_input::<f64>(&[1, 4, 5, 5], 133, 0.0);
        let y = cbam.forward(&x).unwrap();
        let max = x
            .to_vec()
            .iter()
            .zip(y.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max < 1e-12, "saturated attention should pass input through, diff {max}");
    }

    #[test]
    fn spatially_constant_input_gives_constant_spatial_map() {
        let mut rng = Rng::new(134);
        let cbam = Cbam::<f64>::new(4, 2, &mut rng).unwrap();
        let n = 16;
        let mut data = Vec::new();
        for c in 0..4 {
            data.extend(std::iter::repeat_n(0.3 * (c as f64 + 1.0), n * n));
        }
        let x = Tensor::from_vec(&[1, 4, n, n], data).unwrap();
        let gate = cbam.spatial_gate(&x).unwrap().to_vec();
        assert!(gate.iter().all(|v| *v > 0.0 && *v < 1.0));
        // interior positions see identical 7x7 neighborhoods
        let mid = gate[8 * n + 8];
        for y in 3..n - 3 {
            for xx in 3..n - 3 {
                assert!((gate[y * n + xx] - mid).abs() < 1e-12, "({y}, {xx})");
            }
        }
    }

    #[test]
    fn magnitude_never_grows() {
        let mut rng = Rng::new(135);
        let cbam = Cbam::<f64>::new(8, 4, &mut rng).unwrap();
        let x = random_input::<f64>(&[2, 8, 6, 6], 136, 0.0);
        let y = cbam.forward(&x).unwrap();
        for (a, b) in x.to_vec().iter().zip(y.to_vec()) {
            assert!(b.abs() <= a.abs() + 1e-15);
        }
    }

    #[test]
    fn rejects_reduction_not_dividing_channels() {
        let mut rng = Rng::new(137);
        assert!(Cbam::<f32>::new(6, 4, &mut rng).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(138);
        let cbam = Cbam::<f64>::new(4, 2, &mut rng).unwrap();
        let x0 = random_input::<f64>(&[1, 4, 5, 5], 139, 0.25);
        crate::gradcheck::assert_grad_close(
            &x0,
            |x| {
                let y = cbam.forward(x)?;
                Ok(mean_all(&mul(&y, &y)?))
            },
            2e-5, // max-pool argmax kinks admit slightly looser tolerance
        );
    }
}
