//! Thresholded evaluation metrics: Dice similarity, precision, recall.

use crate::precision::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Pixel confusion counts at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accumulate(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    /// Count over a (mask, probability) pair; predictions binarize at
    /// `prob >= threshold`.
    pub fn from_tensors<T: Real>(
        target: &Tensor<T>,
        prob: &Tensor<T>,
        threshold: f64,
    ) -> Result<ConfusionCounts> {
        if target.shape() != prob.shape() {
            return Err(TensorError::shape(
                "confusion_counts",
                format!("target {:?} vs prediction {:?}", target.shape(), prob.shape()),
            ));
        }
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(TensorError::invalid(
                "confusion_counts",
                format!("threshold must lie in (0, 1), got {threshold}"),
            ));
        }
        let thr = T::from_f64(threshold);
        let mut counts = ConfusionCounts::default();
        target.with_data(|yd| {
            prob.with_data(|pd| {
                for (&y, &p) in yd.iter().zip(pd) {
                    let truth = y > T::from_f64(0.5);
                    let pred = p >= thr;
                    match (truth, pred) {
                        (true, true) => counts.tp += 1,
                        (false, true) => counts.fp += 1,
                        (true, false) => counts.fn_ += 1,
                        (false, false) => counts.tn += 1,
                    }
                }
            });
        });
        Ok(counts)
    }

    /// `2 TP / (2 TP + FP + FN)`; defined as 1 for the empty-vs-empty case.
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// `TP / (TP + FP)`; with nothing predicted this is 1 when nothing was
    /// expected and 0 when positives were missed.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            if self.fn_ == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// `TP / (TP + FN)`; defined as 1 when no positives were expected.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

/// The evaluation report triple.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegMetrics {
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binarize at `threshold` and report `{dsc, precision, recall}`.
pub fn metrics<T: Real>(target: &Tensor<T>, prob: &Tensor<T>, threshold: f64) -> Result<SegMetrics> {
    let counts = ConfusionCounts::from_tensors(target, prob, threshold)?;
    Ok(SegMetrics {
        dsc: counts.dsc(),
        precision: counts.precision(),
        recall: counts.recall(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[data.len()], data.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let y = t(&[1.0, 0.0, 1.0, 0.0]);
        let m = metrics(&y, &y, 0.5).unwrap();
        assert_eq!((m.dsc, m.precision, m.recall), (1.0, 1.0, 1.0));
    }

    #[test]
    fn counting_example_half_overlap() {
        // 4 positives; prediction covers 2 of them plus 2 false positives
        let y = t(&[1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let p = t(&[0.9, 0.8, 0.1, 0.2, 0.7, 0.6, 0.0, 0.0]);
        let c = ConfusionCounts::from_tensors(&y, &p, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 2, 2, 2));
        assert_eq!(c.total(), 8);
        let m = metrics(&y, &p, 0.5).unwrap();
        assert_eq!((m.dsc, m.precision, m.recall), (0.5, 0.5, 0.5));
    }

    #[test]
    fn empty_conventions() {
        let zero = t(&[0.0; 6]);
        let m = metrics(&zero, &zero, 0.5).unwrap();
        assert_eq!((m.dsc, m.precision, m.recall), (1.0, 1.0, 1.0));
        // positives exist but nothing predicted: precision falls to 0
        let y = t(&[1.0, 0.0, 0.0]);
        let m2 = metrics(&y, &t(&[0.0, 0.0, 0.0]), 0.5).unwrap();
        assert_eq!(m2.precision, 0.0);
        assert_eq!(m2.dsc, 0.0);
    }

    #[test]
    fn threshold_validation() {
        let y = t(&[1.0]);
        assert!(metrics(&y, &y, 0.0).is_err());
        assert!(metrics(&y, &y, 1.0).is_err());
    }

    #[test]
    fn dice_loss_complements_dsc_for_binary_predictions() {
        let y = t(&[1.0, 1.0, 0.0, 0.0, 1.0]);
        let p = t(&[1.0, 0.0, 1.0, 0.0, 1.0]);
        let loss = crate::loss::dice_loss_with_smoothing(&y, &p, 0.0).unwrap().item();
        let dsc = ConfusionCounts::from_tensors(&y, &p, 0.5).unwrap().dsc();
        assert!((loss + dsc - 1.0).abs() < 1e-6, "loss {loss} + dsc {dsc} != 1");
    }

    #[test]
    fn metrics_all_in_unit_interval() {
        let mut rng = crate::rng::Rng::new(160);
        for _ in 0..30 {
            let y: Vec<f64> = (0..40).map(|_| if rng.bool() { 1.0 } else { 0.0 }).collect();
            let p: Vec<f64> = (0..40).map(|_| rng.next_f64()).collect();
            let m = metrics(&t(&y), &t(&p), 0.5).unwrap();
            for v in [m.dsc, m.precision, m.recall] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
