//! Named parameters with gradient and moment buffers, plus the Adam update.

use super::Tensor;
use crate::error::{Error, Result};

/// A named trainable tensor with its gradient and Adam moment estimates.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = 0.0;
        }
    }

    /// Clears moment estimates, starting a fresh optimizer session.
    pub fn reset_optimizer_state(&mut self) {
        for m in self.adam_m.data_mut() {
            *m = 0.0;
        }
        for v in self.adam_v.data_mut() {
            *v = 0.0;
        }
    }
}

/// Adam hyperparameters and step counter.
///
/// `t` increments by exactly 1 per [`adam_step`] call. A zero learning
/// rate is accepted and leaves parameter values untouched.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over every parameter.
///
/// Aborts (before touching any state) if a gradient is non-finite,
/// naming the offending parameter.
pub fn adam_step(params: &mut [Parameter], cfg: &mut AdamConfig) -> Result<()> {
    cfg.validate()?;
    for p in params.iter() {
        if !p.grad.iter_finite() {
            return Err(Error::NonFiniteGrad { name: p.name.clone() });
        }
    }
    cfg.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(cfg.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(cfg.t as i32);
    for p in params.iter_mut() {
        let m = p.adam_m.data_mut();
        let v = p.adam_v.data_mut();
        let g = p.grad.data();
        let theta = p.value.data_mut();
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_step_is_identity_on_values() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap());
        let before = p.value.clone();
        let mut cfg = AdamConfig::default();
        adam_step(std::slice::from_mut(&mut p), &mut cfg).unwrap();
        assert_eq!(p.value, before);
        assert_eq!(cfg.t, 1);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // theta=0, g=1, lr=0.1, defaults: m=0.1, v=0.001, m_hat=1, v_hat=1,
        // theta_1 = -0.1 / (1 + 1e-8).
        let mut p = Parameter::new("w", Tensor::from_vec(&[1], vec![0.0]).unwrap());
        p.grad = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(std::slice::from_mut(&mut p), &mut cfg).unwrap();
        let expected = -(0.1 * (0.1 / 0.1) / ((0.001f64 / 0.001).sqrt() + 1e-8));
        assert!((p.value.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_parameters_evolve_identically() {
        let mk = || {
            let mut p = Parameter::new("w", Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap());
            p.grad = Tensor::from_vec(&[2], vec![0.2, 0.9]).unwrap();
            p
        };
        let mut a = [mk(), mk()];
        let mut cfg = AdamConfig::default();
        for _ in 0..5 {
            adam_step(&mut a, &mut cfg).unwrap();
        }
        assert_eq!(a[0].value, a[1].value);
        assert_eq!(cfg.t, 5);
    }

    #[test]
    fn non_finite_gradient_aborts_naming_parameter() {
        let mut ok = Parameter::new("fine", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        ok.grad = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let mut bad = Parameter::new("broken", Tensor::from_vec(&[1], vec![1.0]).unwrap());
        bad.grad = Tensor::from_vec(&[1], vec![f64::NAN]).unwrap();
        let before = ok.value.clone();
        let mut params = [ok, bad];
        let mut cfg = AdamConfig::default();
        let err = adam_step(&mut params, &mut cfg).unwrap_err();
        assert!(err.to_string().contains("broken"), "{err}");
        // Nothing was mutated, including the step counter.
        assert_eq!(cfg.t, 0);
        assert_eq!(params[0].value, before);
    }

    #[test]
    fn zero_lr_leaves_values_unchanged() {
        let mut p = Parameter::new("w", Tensor::from_vec(&[1], vec![2.0]).unwrap());
        p.grad = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let mut cfg = AdamConfig {
            lr: 0.0,
            ..Default::default()
        };
        adam_step(std::slice::from_mut(&mut p), &mut cfg).unwrap();
        assert_eq!(p.value.data()[0], 2.0);
    }
}
