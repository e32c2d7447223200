use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay coefficient, applied as `p -= lr * weight_decay * p`
    /// before the moment update.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} = {b} outside (0, 1)")));
            }
        }
        if !(self.eps > 0.0) || !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::invalid("eps must be > 0 and weight decay >= 0"));
        }
        Ok(())
    }
}

/// First/second moment accumulators for every parameter of one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: ParamSet,
    v: ParamSet,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        })
    }

    /// Completed steps.
    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, state tracks {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (name, g) in grads.iter() {
            let p = params.require(name)?;
            if p.shape() != g.shape() || self.m.require(name)?.shape() != g.shape() {
                return Err(Error::shape("adam_step", format!("`{name}`")));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.require(name)?;
            let m = self.m.get_mut(name).expect("checked above");
            let v = self.v.get_mut(name).expect("checked above");
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((pv, &gv), (mv, vv)) in it {
                *pv -= lr * weight_decay * *pv;
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(name: &str, v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(name, Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let before = p.clone();
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, &p).unwrap();
        let zeros = p.zeros_like();
        state.step(&mut p, &zeros).unwrap();
        assert_eq!(p, before);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for g in [0.3, -2.5, 1e-3] {
            let mut p = single("w", 1.0);
            let mut state = AdamState::new(cfg, &p).unwrap();
            state.step(&mut p, &single("w", g)).unwrap();
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p.get("w").unwrap().item() - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut p = single("p", 1.0);
        let mut state = AdamState::new(cfg, &p).unwrap();
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let x = p.get("p").unwrap().item();
            state.step(&mut p, &single("p", 2.0 * x)).unwrap();
            let now = p.get("p").unwrap().item().abs();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut p = single("p", 2.0);
        let mut state = AdamState::new(cfg, &p).unwrap();
        state.step(&mut p, &single("p", 0.0)).unwrap();
        assert!((p.get("p").unwrap().item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut p = single("p", 2.0);
        let mut state = AdamState::new(cfg, &p).unwrap();
        state.step(&mut p, &single("p", 5.0)).unwrap();
        assert_eq!(p.get("p").unwrap().item(), 2.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = single("p", 2.0);
        let mut state = AdamState::new(AdamConfig::default(), &p).unwrap();
        let mut bad = ParamSet::new();
        bad.insert("p", Tensor::zeros(&[2]));
        assert!(matches!(state.step(&mut p, &bad), Err(Error::Shape { .. })));
        assert!(state.step(&mut p, &ParamSet::new()).is_err());
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        let p = single("p", 0.0);
        for cfg in [
            AdamConfig { lr: f64::NAN, ..AdamConfig::default() },
            AdamConfig { beta1: 1.0, ..AdamConfig::default() },
            AdamConfig { beta2: 0.0, ..AdamConfig::default() },
        ] {
            assert!(AdamState::new(cfg, &p).is_err());
        }
    }
}
