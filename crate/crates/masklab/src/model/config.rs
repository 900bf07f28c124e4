//! Model shape and initialization settings.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Shape of the encoder.
///
/// The desk-scale default is 2 layers, 4 heads, and 64 model dimensions,
/// which trains in seconds on a laptop while still exhibiting the attention
/// phenomena this crate studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Per-head key/query width; must equal `d_model / n_heads`.
    pub d_k: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
}

impl ModelConfig {
    /// The standard desk configuration for a given vocabulary.
    pub fn desk(vocab_size: usize, seed: u64) -> Self {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            d_model: 64,
            d_k: 16,
            vocab_size,
            max_len: 64,
            seed,
        }
    }

    /// Feed-forward hidden width. Fixed at twice the model width; the usual
    /// factor of four buys nothing at this scale and doubles step time.
    pub fn d_ff(&self) -> usize {
        2 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::config("vocab_size must be positive"));
        }
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.max_len == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_k * self.n_heads != self.d_model {
            return Err(Error::config(format!(
                "d_k {} * n_heads {} must equal d_model {}",
                self.d_k, self.n_heads, self.d_model
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_is_consistent() {
        let c = ModelConfig::desk(100, 0);
        c.validate().unwrap();
        assert_eq!(c.d_k, 16);
        assert_eq!(c.d_ff(), 128);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        let mut c = ModelConfig::desk(100, 0);
        c.vocab_size = 0;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk(100, 0);
        c.n_heads = 5;
        assert!(c.validate().is_err());

        let mut c = ModelConfig::desk(100, 0);
        c.d_k = 8;
        assert!(c.validate().is_err());
    }
}
