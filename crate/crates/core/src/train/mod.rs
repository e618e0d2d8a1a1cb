//! Loss, optimizer and the training loop with best-validation checkpointing.

mod adamw;
mod gradcheck;
mod loss;
mod trainer;

pub use adamw::{adamw_step, AdamConfig, OptimizerState};
pub use gradcheck::{gradcheck_model, GradcheckOptions, GroupReport};
pub use loss::{cross_entropy, head_cross_entropy, PROB_FLOOR};
pub use trainer::{fit, predict_all, train, EpochMetrics, TrainOutcome, Trainer, METRICS_HEADER};

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};

/// Floating-point type used for training arithmetic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::invalid(format!("unknown precision `{s}` (expected f32 or f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub variant: Variant,
    pub modality_vector: bool,
    pub coupled_l2: bool,
    pub precision: Precision,
    /// Worker threads for per-sample gradients. Results do not depend on
    /// this value; 1 keeps everything on the calling thread.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-2,
            batch_size: 8,
            epochs: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            variant: Variant::DeskTiny,
            modality_vector: true,
            coupled_l2: false,
            precision: Precision::F32,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.threads == 0 {
            return Err(Error::invalid("threads must be at least 1"));
        }
        let unit = |x: f64| (0.0..1.0).contains(&x);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("eps must be positive and weight_decay non-negative"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            coupled_l2: self.coupled_l2,
        }
    }

    /// The variant's architecture with the modality-vector switch applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            modality_vector: self.modality_vector,
            ..self.variant.config()
        }
    }

    /// Applies one `key=value` setting. Returns `Ok(false)` for keys that
    /// are not training settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "modality_vector" => self.modality_vector = parse(key, value)?,
            "coupled_l2" => self.coupled_l2 = parse(key, value)?,
            "precision" => self.precision = value.trim().parse()?,
            "threads" => self.threads = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.weight_decay, c.batch_size, c.epochs), (1e-4, 1e-2, 8, 20));
        assert_eq!((c.beta1, c.beta2, c.eps), (0.9, 0.999, 1e-8));
        c.validate().unwrap();
    }

    #[test]
    fn invalid_settings_rejected() {
        for (k, v) in [("lr", "0"), ("batch_size", "0"), ("beta1", "1.0"), ("threads", "0")] {
            let mut c = TrainConfig::default();
            assert!(c.set(k, v).unwrap());
            assert!(c.validate().is_err(), "{k}={v}");
        }
        let mut c = TrainConfig::default();
        assert!(c.set("variant", "huge").is_err());
        assert!(c.set("lr", "abc").is_err());
        assert!(!c.set("patch", "8").unwrap());
    }

    #[test]
    fn modality_switch_reaches_model() {
        let c = TrainConfig {
            modality_vector: false,
            ..TrainConfig::default()
        };
        assert!(!c.model_config().modality_vector);
        assert_eq!(c.model_config().embed_dim, 192);
    }
}
