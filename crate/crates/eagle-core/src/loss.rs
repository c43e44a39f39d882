//! Segmentation objectives: binary cross-entropy, Dice, and their weighted
//! combination. All three are differentiable ops over probability maps.

use crate::precision::Real;
use crate::tensor::{ops, Result, Tensor, TensorError};

/// Probabilities are clamped to `[CLAMP_EPS, 1 - CLAMP_EPS]` before any log.
pub const CLAMP_EPS: f64 = 1e-7;
/// Smoothing added to the Dice numerator and denominator (handles the
/// all-empty case).
pub const DICE_SMOOTHING: f64 = 1e-6;

/// Weights of the combined objective; both default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub dice: f64,
    pub bce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { dice: 1.0, bce: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.dice < 0.0 || self.bce < 0.0 || self.dice + self.bce <= 0.0 {
            return Err(TensorError::invalid(
                "loss_weights",
                format!("weights must be non-negative with positive sum, got {self:?}"),
            ));
        }
        Ok(())
    }
}

fn check_pair<T: Real>(op: &'static str, target: &Tensor<T>, prob: &Tensor<T>) -> Result<()> {
    if target.shape() != prob.shape() {
        return Err(TensorError::shape(
            op,
            format!("target {:?} vs prediction {:?}", target.shape(), prob.shape()),
        ));
    }
    Ok(())
}

/// Mean binary cross-entropy over all pixels of the batch.
pub fn bce<T: Real>(target: &Tensor<T>, prob: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("bce", target, prob)?;
    let p = ops::clamp(prob, CLAMP_EPS, 1.0 - CLAMP_EPS);
    let pos = ops::mul(target, &ops::ln(&p))?;
    let one_minus_y = ops::add_scalar(&ops::neg(target), 1.0);
    let one_minus_p = ops::add_scalar(&ops::neg(&p), 1.0);
    let neg_term = ops::mul(&one_minus_y, &ops::ln(&one_minus_p))?;
    Ok(ops::neg(&ops::mean_all(&ops::add(&pos, &neg_term)?)))
}

/// Dice loss with explicit smoothing term.
pub fn dice_loss_with_smoothing<T: Real>(
    target: &Tensor<T>,
    prob: &Tensor<T>,
    smoothing: f64,
) -> Result<Tensor<T>> {
    check_pair("dice_loss", target, prob)?;
    let p = ops::clamp(prob, CLAMP_EPS, 1.0 - CLAMP_EPS);
    let intersection = ops::sum_all(&ops::mul(target, &p)?);
    let total = ops::add(&ops::sum_all(target), &ops::sum_all(&p))?;
    let numer = ops::add_scalar(&ops::scale(&intersection, 2.0), smoothing);
    let denom = ops::add_scalar(&total, smoothing);
    let ratio = ops::mul(&numer, &ops::recip(&denom))?;
    Ok(ops::add_scalar(&ops::neg(&ratio), 1.0))
}

/// Dice loss `1 - 2*sum(y p) / (sum y + sum p)` with the default smoothing.
pub fn dice_loss<T: Real>(target: &Tensor<T>, prob: &Tensor<T>) -> Result<Tensor<T>> {
    dice_loss_with_smoothing(target, prob, DICE_SMOOTHING)
}

/// `w.dice * Dice + w.bce * BCE`.
pub fn combined_loss<T: Real>(
    target: &Tensor<T>,
    prob: &Tensor<T>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    w.validate()?;
    let d = dice_loss(target, prob)?;
    let b = bce(target, prob)?;
    ops::add(&ops::scale(&d, w.dice), &ops::scale(&b, w.bce))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::assert_grad_close;
    use crate::rng::Rng;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn bce_of_uniform_half_is_ln_two() {
        let y = t(&[1.0, 0.0, 1.0, 0.0]);
        let p = t(&[0.5; 4]);
        let v = bce(&y, &p).unwrap().item();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-9, "{v}");
    }

    #[test]
    fn bce_of_perfect_prediction_is_near_zero() {
        let y = t(&[1.0, 0.0, 1.0]);
        let v = bce(&y, &y).unwrap().item();
        assert!((0.0..=1.2e-7).contains(&v), "{v}");
    }

    #[test]
    fn bce_hand_computed_example() {
        // y = [1, 0], p = [0.8, 0.4]: -(ln 0.8 + ln 0.6) / 2
        let v = bce(&t(&[1.0, 0.0]), &t(&[0.8, 0.4])).unwrap().item();
        let want = -(0.8f64.ln() + 0.6f64.ln()) / 2.0;
        assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        assert!((v - 0.366_984_6).abs() < 1e-6);
    }

    #[test]
    fn dice_perfect_and_disjoint() {
        let y = t(&[1.0, 1.0, 0.0, 0.0]);
        assert!(dice_loss(&y, &y).unwrap().item().abs() < 1e-6);
        let p = t(&[0.0, 0.0, 1.0, 1.0]);
        let v = dice_loss(&y, &p).unwrap().item();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn dice_hand_computed_example() {
        // y = [1, 1, 0, 0], p = [1, 0, 0, 0] -> 1 - 2/3
        let v = dice_loss(&t(&[1.0, 1.0, 0.0, 0.0]), &t(&[1.0, 0.0, 0.0, 0.0])).unwrap().item();
        assert!((v - (1.0 - 2.0 / 3.0)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn dice_range_on_random_inputs() {
        let mut rng = Rng::new(150);
        for _ in 0..50 {
            let y: Vec<f64> = (0..32).map(|_| if rng.bool() { 1.0 } else { 0.0 }).collect();
            let p: Vec<f64> = (0..32).map(|_| rng.next_f64()).collect();
            let v = dice_loss(&t(&y), &t(&p)).unwrap().item();
            assert!((-1e-9..=1.0 + 1e-9).contains(&v), "{v}");
        }
    }

    #[test]
    fn combined_is_weighted_sum_and_degenerates() {
        let y = t(&[1.0, 0.0, 1.0, 1.0]);
        let p = t(&[0.7, 0.2, 0.9, 0.4]);
        let d = dice_loss(&y, &p).unwrap().item();
        let b = bce(&y, &p).unwrap().item();
        let both = combined_loss(&y, &p, &LossWeights::default()).unwrap().item();
        assert!((both - (d + b)).abs() < 1e-12);
        let only_bce = combined_loss(&y, &p, &LossWeights { dice: 0.0, bce: 1.0 }).unwrap().item();
        assert!((only_bce - b).abs() < 1e-12);
        let double_dice = combined_loss(&y, &p, &LossWeights { dice: 2.0, bce: 0.0 }).unwrap().item();
        assert!((double_dice - 2.0 * d).abs() < 1e-12);
        assert!(combined_loss(&y, &p, &LossWeights { dice: 0.0, bce: 0.0 }).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let y = t(&[1.0, 0.0]);
        let p = t(&[0.5, 0.5, 0.5]);
        assert!(bce(&y, &p).is_err());
        assert!(dice_loss(&y, &p).is_err());
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let mut rng = Rng::new(151);
        let y: Vec<f64> = (0..16).map(|_| if rng.bool() { 1.0 } else { 0.0 }).collect();
        let p0: Vec<f64> = (0..16).map(|_| rng.uniform(0.05, 0.95)).collect();
        let target = t(&y);
        let prob = t(&p0);
        assert_grad_close(
            &prob,
            |p| combined_loss(&target, p, &LossWeights::default()),
            1e-6,
        );
    }
}
