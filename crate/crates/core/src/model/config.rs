use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityConfig {
    pub name: String,
    /// Feature dimension of this modality.
    pub dim: usize,
}

/// Network hyper-parameters. Defaults are the desk-scale sizes; the
/// full-size network uses `d_model = 512`, `d_hidden = 2048`, `heads = 8`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub modalities: Vec<ModalityConfig>,
    /// Frames per modality (K).
    pub frames: usize,
    /// Number of category tags; `None` disables the category row.
    pub category_count: Option<usize>,
    pub d_model: usize,
    pub d_hidden: usize,
    pub heads: usize,
    pub decoder_layers: usize,
    /// Longest caption the model handles (N_max).
    pub max_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
    /// Lower-triangular self-attention (autoregressive baseline).
    pub causal: bool,
    /// Add the mean-pooled video representation to every input embedding.
    pub source_embedding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            modalities: vec![
                ModalityConfig {
                    name: "image".into(),
                    dim: 64,
                },
                ModalityConfig {
                    name: "motion".into(),
                    dim: 64,
                },
            ],
            frames: 8,
            category_count: None,
            d_model: 64,
            d_hidden: 256,
            heads: 4,
            decoder_layers: 1,
            max_len: 20,
            vocab_size: 0,
            dropout: 0.5,
            causal: false,
            source_embedding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.modalities.is_empty() || self.modalities.len() > 2 {
            return fail(format!("1 or 2 modalities supported, got {}", self.modalities.len()));
        }
        if self.modalities.iter().any(|m| m.dim == 0) || self.frames == 0 {
            return fail("modality dimensions and frame count must be positive".into());
        }
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.d_model < 2 || self.d_hidden == 0 || self.decoder_layers == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.max_len < 4 {
            return fail(format!("max_len must be at least 4, got {}", self.max_len));
        }
        if self.vocab_size <= crate::corpus::vocab::NUM_RESERVED {
            return fail(format!("vocab_size {} leaves no words", self.vocab_size));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.category_count == Some(0) {
            return fail("category_count must be positive when set".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Rows of the position table: autoregressive inputs carry a leading
    /// begin token.
    pub fn positions(&self) -> usize {
        self.max_len + usize::from(self.causal)
    }

    /// Rows in the video representation R.
    pub fn memory_rows(&self) -> usize {
        self.modalities.len() * self.frames + usize::from(self.category_count.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn validation() {
        assert!(base().validate().is_ok());
        assert!(ModelConfig { heads: 3, ..base() }.validate().is_err());
        assert!(ModelConfig { max_len: 3, ..base() }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..base() }.validate().is_err());
        assert!(ModelConfig { modalities: vec![], ..base() }.validate().is_err());
        assert_eq!(base().head_dim(), 16);
        assert_eq!(base().memory_rows(), 16);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<ModelConfig>(r#"{"d_model": 8, "bogus": 1}"#);
        assert!(err.is_err());
    }
}
