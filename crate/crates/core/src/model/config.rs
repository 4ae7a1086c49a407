use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture and optimization settings of a [`super::MatchingModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Number of stylebook rows `T`.
    pub stylebook_size: usize,
    pub encoder_hidden: usize,
    pub aggregation_hidden: usize,
    pub n_heads: usize,
    pub max_context_tokens: usize,
    pub max_response_tokens: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub use_stylebook: bool,
    pub shared_encoders: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ModelConfig {
    /// Full-size profile.
    pub fn full() -> Self {
        Self {
            d_model: 300,
            stylebook_size: 500,
            encoder_hidden: 1024,
            aggregation_hidden: 128,
            n_heads: 4,
            max_context_tokens: 40,
            max_response_tokens: 20,
            batch_size: 128,
            lr: 1e-4,
            max_epochs: 10,
            use_stylebook: true,
            shared_encoders: true,
        }
    }

    /// Small profile that trains in minutes on one CPU. The higher learning
    /// rate and smaller batches compensate for far fewer updates per epoch.
    pub fn desk() -> Self {
        Self {
            d_model: 64,
            stylebook_size: 32,
            encoder_hidden: 128,
            aggregation_hidden: 32,
            batch_size: 8,
            lr: 1e-3,
            ..Self::full()
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected \"full\" or \"desk\")"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_model", self.d_model),
            ("stylebook_size", self.stylebook_size),
            ("encoder_hidden", self.encoder_hidden),
            ("aggregation_hidden", self.aggregation_hidden),
            ("n_heads", self.n_heads),
            ("max_context_tokens", self.max_context_tokens),
            ("max_response_tokens", self.max_response_tokens),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    /// Errors unless `other` describes the same parameter layout.
    pub fn check_compatible(&self, other: &ModelConfig) -> Result<()> {
        let fields = [
            ("d_model", self.d_model, other.d_model),
            ("stylebook_size", self.stylebook_size, other.stylebook_size),
            ("encoder_hidden", self.encoder_hidden, other.encoder_hidden),
            ("aggregation_hidden", self.aggregation_hidden, other.aggregation_hidden),
            ("n_heads", self.n_heads, other.n_heads),
            ("use_stylebook", self.use_stylebook as usize, other.use_stylebook as usize),
            ("shared_encoders", self.shared_encoders as usize, other.shared_encoders as usize),
        ];
        let diffs: Vec<String> = fields
            .iter()
            .filter(|(_, a, b)| a != b)
            .map(|(name, a, b)| format!("{name} {a} vs {b}"))
            .collect();
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigMismatch(diffs.join(", ")))
        }
    }

    /// Number of scalar parameters for a vocabulary of `vocab_size`.
    pub fn param_count(&self, vocab_size: usize) -> usize {
        let d = self.d_model;
        let h = self.encoder_hidden;
        let a = self.aggregation_hidden;
        let lstm = |d_in: usize, h: usize| 4 * h * (d_in + h + 1);
        let encoder = 2 * d + lstm(d, h);
        let stylebook = if self.use_stylebook {
            self.stylebook_size * d + d * d + d
        } else {
            0
        };
        let encoders = if self.shared_encoders { 1 } else { 2 };
        vocab_size * d
            + stylebook
            + encoders * encoder
            + 3 * (d * h + d)
            + (d * d + d)
            + lstm(d, a)
            + (2 * a + 2)
    }
}
