//! Optimizers (SGD with momentum, Adam) and the polynomial LR schedule.

use crate::error::{Error, Result};
use crate::net::ModelParams;

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_POLY_POWER: f64 = 0.9;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Which optimizer a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    /// Default learning rate when the configuration leaves it unset.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Sgd => 0.05,
            OptimizerKind::Adam => 0.001,
        }
    }
}

/// SGD with classical momentum: `v = momentum * v + g`, `p -= lr * v`.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(momentum: f64) -> Self {
        SgdMomentum {
            momentum,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, lr: f64) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params
                .iter()
                .map(|e| vec![0.0; if e.trainable { e.tensor.len() } else { 0 }])
                .collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match parameter count".into(),
            ));
        }
        for (entry, velocity) in params.iter_mut().zip(&mut self.velocity) {
            if !entry.trainable {
                continue;
            }
            if velocity.len() != entry.tensor.len() {
                return Err(Error::ShapeMismatch(format!(
                    "velocity for {} has {} values, parameter has {}",
                    entry.name,
                    velocity.len(),
                    entry.tensor.len()
                )));
            }
            let (values, grad) = entry.tensor.values_and_grad_mut();
            let grad = grad.expect("parameters carry grads");
            for ((p, g), v) in values.iter_mut().zip(grad.iter()).zip(velocity.iter_mut()) {
                *v = self.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, lr: f64) -> Result<()> {
        if self.first.is_empty() {
            let init = || {
                params
                    .iter()
                    .map(|e| vec![0.0; if e.trainable { e.tensor.len() } else { 0 }])
                    .collect::<Vec<_>>()
            };
            self.first = init();
            self.second = init();
        }
        if self.first.len() != params.len() {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match parameter count".into(),
            ));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((entry, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !entry.trainable {
                continue;
            }
            if m.len() != entry.tensor.len() {
                return Err(Error::ShapeMismatch(format!(
                    "moment buffers for {} do not match its shape",
                    entry.name
                )));
            }
            let (values, grad) = entry.tensor.values_and_grad_mut();
            let grad = grad.expect("parameters carry grads");
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// A configured optimizer ready to step a model's parameters.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd(SgdMomentum),
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd(SgdMomentum::new(DEFAULT_MOMENTUM)),
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(ADAM_BETA1, ADAM_BETA2, ADAM_EPS)),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, lr: f64) -> Result<()> {
        match self {
            Optimizer::Sgd(o) => o.step(params, lr),
            Optimizer::Adam(o) => o.step(params, lr),
        }
    }
}

/// Polynomial learning-rate schedule: `lr0 * (1 - t/T)^power`, clamped
/// to zero past the end.
pub fn poly_lr(step: usize, total: usize, lr0: f64, power: f64) -> f64 {
    if total == 0 || step >= total {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total as f64).powf(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Tensor;

    fn one_param(value: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("w", Tensor::new(vec![1], vec![value]), true);
        p
    }

    fn set_grad(params: &mut ModelParams, g: f64) {
        params.get_mut("w").unwrap().grad_mut().unwrap()[0] = g;
    }

    #[test]
    fn sgd_first_step_is_plain_descent() {
        let mut params = one_param(1.0);
        set_grad(&mut params, 0.5);
        let mut opt = SgdMomentum::new(0.9);
        opt.step(&mut params, 0.1).unwrap();
        assert!((params.values("w")[0] - (1.0 - 0.1 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn sgd_second_step_compounds_velocity() {
        // With constant gradient g: v1 = g, v2 = 0.9 g + g = 1.9 g.
        let mut params = one_param(0.0);
        let mut opt = SgdMomentum::new(0.9);
        set_grad(&mut params, 1.0);
        opt.step(&mut params, 0.1).unwrap();
        set_grad(&mut params, 1.0);
        opt.step(&mut params, 0.1).unwrap();
        let expected = -(0.1 * 1.0) - 0.1 * 1.9;
        assert!((params.values("w")[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // Bias correction makes |update| ~= lr for any nonzero gradient.
        for &g in &[0.001, 0.5, 100.0] {
            let mut params = one_param(0.0);
            set_grad(&mut params, g);
            let mut opt = Adam::new(ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
            opt.step(&mut params, 0.01).unwrap();
            let update = params.values("w")[0].abs();
            assert!(
                (update - 0.01).abs() < 1e-5,
                "gradient {g}: update {update}"
            );
        }
    }

    #[test]
    fn poly_schedule_endpoints() {
        assert_eq!(poly_lr(0, 100, 0.05, 0.9), 0.05);
        assert_eq!(poly_lr(100, 100, 0.05, 0.9), 0.0);
        assert_eq!(poly_lr(150, 100, 0.05, 0.9), 0.0);
        let mid = poly_lr(50, 100, 0.05, 0.9);
        assert!((mid - 0.05 * 0.5f64.powf(0.9)).abs() < 1e-12);
        assert!((mid - 0.02679).abs() < 5e-6);
    }

    #[test]
    fn zero_grads_do_not_move_params() {
        let mut params = one_param(2.5);
        let mut sgd = SgdMomentum::new(0.9);
        sgd.step(&mut params, 0.1).unwrap();
        assert_eq!(params.values("w")[0], 2.5);
        let mut adam = Adam::new(ADAM_BETA1, ADAM_BETA2, ADAM_EPS);
        adam.step(&mut params, 0.1).unwrap();
        assert_eq!(params.values("w")[0], 2.5);
    }
}
