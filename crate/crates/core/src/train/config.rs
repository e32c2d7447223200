use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{GeneratorConfig, GeneratorObjective};
use crate::tensor::AdamConfig;

/// Everything that controls data preparation, training and inference.
/// Serialized as JSON; missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stages: usize,
    pub channels: usize,
    pub se_reduction: usize,
    /// Face / viewport size fed to the networks.
    pub width: usize,
    pub height: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub seed: u64,
    /// Apply the content loss to the last stage only during fine-tuning.
    pub final_stage_content: bool,
    pub objective: GeneratorObjective,
    /// Skip generator updates during fine-tuning.
    pub freeze_generator: bool,
    /// Fixation blur in degrees of visual angle.
    pub sigma_deg: f64,
    /// Cube rotation offsets used for augmentation, applied to yaw and pitch.
    pub rotations: Vec<f64>,
    pub viewport_stride: f64,
    pub viewport_fov: f64,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stages: 6,
            channels: 24,
            se_reduction: 4,
            width: 256,
            height: 192,
            lr: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            batch: 6,
            pretrain_epochs: 100,
            finetune_epochs: 100,
            seed: 0,
            final_stage_content: false,
            objective: GeneratorObjective::Minimax,
            freeze_generator: false,
            sigma_deg: 1.0,
            rotations: vec![0.0, 30.0, 60.0],
            viewport_stride: 10.0,
            viewport_fov: 90.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            channels: self.channels,
            se_reduction: self.se_reduction,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Blur in face pixels for the configured view size and field of view.
    pub fn face_sigma(&self) -> f64 {
        self.sigma_deg * self.width as f64 / self.viewport_fov
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.stages < 1 {
            return bad("stages must be at least 1".into());
        }
        if self.batch < 1 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate {} must be finite and non-negative", self.lr));
        }
        if self.width < 2 || self.height < 2 {
            return bad(format!("resolution {}x{} too small", self.width, self.height));
        }
        if !(self.sigma_deg > 0.0 && self.sigma_deg.is_finite()) {
            return bad(format!("sigma_deg {} must be positive", self.sigma_deg));
        }
        if !(self.viewport_fov > 0.0 && self.viewport_fov < 180.0) {
            return bad(format!("viewport_fov {} outside (0, 180)", self.viewport_fov));
        }
        if !(self.viewport_stride > 0.0 && self.viewport_stride <= 180.0) {
            return bad(format!("viewport_stride {} outside (0, 180]", self.viewport_stride));
        }
        if self.rotations.is_empty() || self.rotations.iter().any(|r| !r.is_finite()) {
            return bad("rotations must be a non-empty list of finite angles".into());
        }
        self.generator().validate()?;
        self.adam().validate()
    }

    /// Apply `key=value` overrides. Values are parsed as JSON, falling back to
    /// a bare string, so `lr=1e-3`, `objective=non_saturating` and
    /// `rotations=[0,45]` all work.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        let obj = v.as_object_mut().expect("config is an object");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("override `{o}` is not key=value")))?;
            let key = key.trim();
            if !obj.contains_key(key) {
                return Err(Error::invalid(format!("unknown configuration key `{key}`")));
            }
            let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            obj.insert(key.to_string(), value);
        }
        let c: TrainConfig = serde_json::from_value(v)?;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(TrainConfig::from_json("{}").unwrap(), c);
        assert_eq!((c.batch, c.stages, c.lr), (6, 6, 5e-6));
    }

    #[test]
    fn overrides() {
        let c = TrainConfig::default()
            .with_overrides(&["lr=0.001", "objective=non_saturating", "rotations=[0, 45]", "stages=2"])
            .unwrap();
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.objective, GeneratorObjective::NonSaturating);
        assert_eq!(c.rotations, vec![0.0, 45.0]);
        assert_eq!(c.stages, 2);
        assert!(TrainConfig::default().with_overrides(&["nope=1"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["lr"]).is_err());
        assert!(TrainConfig::default().with_overrides(&["stages=0"]).is_err());
    }

    #[test]
    fn nan_learning_rate_is_rejected() {
        assert!(TrainConfig::default().with_overrides(&["lr=NaN"]).is_err());
        assert!(TrainConfig::from_json(r#"{"lr": NaN}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"lr": -1.0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"batch": 0}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"typo": 0}"#).is_err());
    }
}
