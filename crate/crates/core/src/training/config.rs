use serde::{Deserialize, Serialize};

use crate::corpus::PosTag;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub beta_low: f64,
    pub beta_high: f64,
    /// Weight of the visual-word loss; 0 trains without it.
    pub lambda_vis: f64,
    /// Video-caption pairs per optimizer step.
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Parts of speech that count as visual words.
    pub visual_tags: Vec<PosTag>,
    /// Compute validation BLEU@4 after each epoch.
    pub validate: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            beta_low: 0.0,
            beta_high: 1.0,
            lambda_vis: 0.8,
            batch_size: 64,
            lr_init: 5e-4,
            lr_decay: 0.9,
            lr_min: 5e-5,
            weight_decay: 5e-4,
            epochs: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            visual_tags: vec![PosTag::Noun, PosTag::Verb],
            validate: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0 <= self.beta_low && self.beta_low <= self.beta_high && self.beta_high <= 1.0) {
            return bad("masking ratios must satisfy 0 <= beta_low <= beta_high <= 1");
        }
        if !(self.lambda_vis >= 0.0) {
            return bad("lambda_vis must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_init > 0.0 && self.lr_min >= 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning-rate schedule must be positive with decay in (0, 1]");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be nonnegative");
        }
        if !((0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps be positive");
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        (self.lr_init * self.lr_decay.powi(epoch as i32)).max(self.lr_min)
    }
}
