//! AdamW: bias-corrected moments with decoupled weight decay.

use crate::precision::Real;
use crate::tensor::{Result, Tensor, TensorError};

/// Optimization hyperparameters (training-schedule values included).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OptimConfig {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            batch: 4,
            max_epochs: 100,
            plateau_patience: 5,
            plateau_factor: 0.5,
            early_stop_patience: 30,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr0", self.lr0),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("plateau_factor", self.plateau_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(TensorError::invalid("optim_config", format!("{name} must be > 0, got {v}")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(TensorError::invalid("optim_config", "weight_decay must be >= 0"));
        }
        if self.batch == 0 || self.max_epochs == 0 || self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(TensorError::invalid(
                "optim_config",
                "batch, max_epochs, and patience values must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Optimizer state over a fixed parameter list.
pub struct AdamW<T: Real> {
    params: Vec<Tensor<T>>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step_count: u64,
    cfg: OptimConfig,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: Vec<Tensor<T>>, cfg: OptimConfig) -> Result<Self> {
        cfg.validate()?;
        let m = params.iter().map(|p| vec![T::ZERO; p.numel()]).collect();
        let v = params.iter().map(|p| vec![T::ZERO; p.numel()]).collect();
        Ok(AdamW {
            params,
            m,
            v,
            step_count: 0,
            cfg,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update:
    /// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)`.
    /// Parameters without a gradient are treated as zero-gradient (decay
    /// still applies).
    pub fn step(&mut self, lr: f64) -> Result<()> {
        // validate every gradient before touching any parameter
        for (i, p) in self.params.iter().enumerate() {
            if let Some(g) = p.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::invalid(
                        "adamw_step",
                        format!("non-finite gradient in parameter {i} (shape {:?})", p.shape()),
                    ));
                }
            }
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_minus_b1 = T::ONE - b1;
        let one_minus_b2 = T::ONE - b2;
        let bias1 = T::from_f64(1.0 - self.cfg.beta1.powf(t));
        let bias2 = T::from_f64(1.0 - self.cfg.beta2.powf(t));
        let lr_t = T::from_f64(lr);
        let eps = T::from_f64(self.cfg.eps);
        let wd = T::from_f64(self.cfg.weight_decay);
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            let grad = p.grad().unwrap_or_else(|| vec![T::ZERO; p.numel()]);
            p.update_data(|theta| {
                for i in 0..theta.len() {
                    let g = grad[i];
                    m[i] = b1 * m[i] + one_minus_b1 * g;
                    v[i] = b2 * v[i] + one_minus_b2 * g * g;
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    theta[i] -= lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * theta[i]);
                }
            });
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor<f64> {
        Tensor::parameter(&[1], vec![v]).unwrap()
    }

    fn set_grad(p: &Tensor<f64>, g: f64) {
        // drive a gradient in through a simple graph
        p.zero_grad();
        let loss = crate::tensor::ops::sum_all(&crate::tensor::ops::scale(p, g));
        loss.backward().unwrap();
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // theta = 1, g = 1, wd = 0: m_hat = v_hat = 1 => theta' = 1 - lr/(1 + eps)
        let p = scalar_param(1.0);
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(vec![p.clone()], cfg).unwrap();
        set_grad(&p, 1.0);
        opt.step(1e-3).unwrap();
        let got = p.to_vec()[0];
        let want = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        assert!((got - 0.999).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_parameter_untouched_without_decay() {
        let p = scalar_param(0.7);
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(vec![p.clone()], cfg).unwrap();
        opt.step(1e-3).unwrap();
        assert_eq!(p.to_vec(), vec![0.7]);
    }

    #[test]
    fn pure_decay_with_zero_gradient() {
        let p = scalar_param(2.0);
        let cfg = OptimConfig::default(); // wd = 0.01
        let mut opt = AdamW::new(vec![p.clone()], cfg).unwrap();
        opt.step(1e-3).unwrap();
        let want = 2.0 * (1.0 - 1e-3 * 0.01);
        assert!((p.to_vec()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let p = scalar_param(1.0);
        let mut opt = AdamW::new(vec![p.clone()], OptimConfig::default()).unwrap();
        set_grad(&p, 1.0);
        // poison the gradient
        let loss = crate::tensor::ops::sum_all(&crate::tensor::ops::scale(&p, f64::NAN));
        loss.backward().unwrap();
        let before = p.to_vec();
        assert!(opt.step(1e-3).is_err());
        assert_eq!(p.to_vec(), before, "aborted step must not move parameters");
    }

    #[test]
    fn config_validation() {
        let zero_lr = OptimConfig {
            lr0: 0.0,
            ..Default::default()
        };
        assert!(zero_lr.validate().is_err());
        let zero_batch = OptimConfig {
            batch: 0,
            ..Default::default()
        };
        assert!(zero_batch.validate().is_err());
    }
}
