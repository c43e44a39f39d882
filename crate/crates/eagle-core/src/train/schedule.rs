//! Validation-driven learning-rate plateau schedule and early stopping.
//!
//! "Improvement" means the validation loss drops below the best seen value
//! by more than [`IMPROVEMENT_EPS`]. The plateau counter resets both on
//! improvement and on each halving; the early-stop counter resets only on
//! improvement.

pub const IMPROVEMENT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressState {
    pub lr: f64,
    pub best_val_loss: f64,
    pub epochs_since_best: usize,
    plateau_counter: usize,
    plateau_patience: usize,
    plateau_factor: f64,
    early_stop_patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValObservation {
    pub improved: bool,
    pub lr_reduced: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStop,
    MaxEpochs,
    NonFiniteLoss,
    /// The per-epoch observer asked to stop.
    Requested,
}

impl ProgressState {
    pub fn new(lr0: f64, plateau_patience: usize, plateau_factor: f64, early_stop_patience: usize) -> Self {
        ProgressState {
            lr: lr0,
            best_val_loss: f64::INFINITY,
            epochs_since_best: 0,
            plateau_counter: 0,
            plateau_patience,
            plateau_factor,
            early_stop_patience,
        }
    }

    /// Feed one per-epoch validation loss; applies the plateau rule.
    pub fn observe_validation(&mut self, val_loss: f64) -> ValObservation {
        let improved = val_loss < self.best_val_loss - IMPROVEMENT_EPS;
        let mut lr_reduced = false;
        if improved {
            self.best_val_loss = val_loss;
            self.epochs_since_best = 0;
            self.plateau_counter = 0;
        } else {
            self.epochs_since_best += 1;
            self.plateau_counter += 1;
            if self.plateau_counter >= self.plateau_patience {
                self.lr *= self.plateau_factor;
                self.plateau_counter = 0;
                lr_reduced = true;
            }
        }
        ValObservation { improved, lr_reduced }
    }

    /// Early stopping fires exactly when the epochs-since-best counter
    /// reaches the patience.
    pub fn should_stop(&self) -> bool {
        self.epochs_since_best >= self.early_stop_patience
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_state() -> ProgressState {
        ProgressState::new(1e-3, 5, 0.5, 30)
    }

    #[test]
    fn six_flat_epochs_halve_at_the_sixth() {
        let mut st = default_state();
        let mut halved_at = None;
        for epoch in 1..=6 {
            let obs = st.observe_validation(1.0);
            if obs.lr_reduced && halved_at.is_none() {
                halved_at = Some(epoch);
            }
        }
        assert_eq!(halved_at, Some(6));
        assert!((st.lr - 5e-4).abs() < 1e-18);
    }

    #[test]
    fn strictly_decreasing_losses_never_reduce_lr() {
        let mut st = default_state();
        for epoch in 1..=50 {
            let obs = st.observe_validation(1.0 / epoch as f64);
            assert!(!obs.lr_reduced);
            assert!(obs.improved);
        }
        assert_eq!(st.lr, 1e-3);
    }

    #[test]
    fn two_consecutive_plateaus_quarter_the_rate() {
        let mut st = default_state();
        st.observe_validation(1.0); // sets best
        for _ in 0..10 {
            st.observe_validation(1.0);
        }
        // flat epochs 2..6 halve at 6; flat epochs 7..11 halve at 11
        assert!((st.lr - 2.5e-4).abs() < 1e-18, "lr {}", st.lr);
    }

    #[test]
    fn lr_sequence_is_lr0_times_powers_of_half() {
        let mut st = default_state();
        let mut seen = vec![st.lr];
        for epoch in 0..40 {
            st.observe_validation(if epoch == 13 { 0.5 } else { 1.0 });
            seen.push(st.lr);
        }
        for lr in seen {
            let k = (1e-3 / lr).log2();
            assert!((k - k.round()).abs() < 1e-9, "lr {lr} is not lr0 * 2^-k");
            assert!(k >= -1e-9);
        }
    }

    #[test]
    fn early_stop_fires_at_best_plus_thirty() {
        let mut st = default_state();
        let mut stopped_after = None;
        for epoch in 1..=60 {
            let loss = if epoch <= 3 { 1.0 / epoch as f64 } else { 0.9 };
            st.observe_validation(loss);
            if st.should_stop() {
                stopped_after = Some(epoch);
                break;
            }
        }
        // best at epoch 3, flat thereafter: stop after epoch 33
        assert_eq!(stopped_after, Some(33));
    }

    #[test]
    fn improvement_resets_the_stop_counter() {
        let mut st = default_state();
        st.observe_validation(1.0);
        for _ in 0..29 {
            st.observe_validation(2.0);
        }
        assert!(!st.should_stop());
        st.observe_validation(0.5); // improvement at the brink
        assert_eq!(st.epochs_since_best, 0);
        for _ in 0..29 {
            st.observe_validation(2.0);
        }
        assert!(!st.should_stop());
        st.observe_validation(2.0);
        assert!(st.should_stop());
    }

    #[test]
    fn sub_epsilon_improvements_do_not_count() {
        let mut st = default_state();
        st.observe_validation(1.0);
        let obs = st.observe_validation(1.0 - IMPROVEMENT_EPS / 2.0);
        assert!(!obs.improved);
    }
}
