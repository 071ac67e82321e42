use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Hyperparameters of the sequence-to-sequence model and its optimizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    /// Longest sequence, language tags and BOS/EOS included.
    pub max_len: usize,
    /// Largest number of sentence pairs per optimizer step.
    pub max_batch: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    /// Share the embedding table with the output projection (in addition to
    /// the always-shared source/target input embeddings).
    pub tie_output: bool,
    /// Peak learning rate reached at the end of warmup.
    pub lr: f64,
    /// Linear warmup followed by inverse-square-root decay. `0` keeps `lr` constant.
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_enc_layers: 2,
            n_dec_layers: 2,
            ff_dim: 256,
            vocab_size: 0,
            max_len: 100,
            max_batch: 50,
            dropout: 0.1,
            label_smoothing: 0.1,
            tie_output: true,
            lr: 1e-3,
            warmup_steps: 400,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            clip_norm: 1.0,
            seed: 1,
        }
    }
}

impl ModelConfig {
    /// Default toy configuration (d=64, 2+2 layers, 4 heads) for a vocabulary.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            ..Default::default()
        }
    }

    /// Smaller configuration (d=32, 1+1 layers, peak lr 3e-3) for fast
    /// experiments and tests.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 32,
            n_heads: 2,
            n_enc_layers: 1,
            n_dec_layers: 1,
            ff_dim: 64,
            lr: 3e-3,
            vocab_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size <= crate::corpus::special::COUNT {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        if self.max_len < 4 {
            return bad(format!("max_len {} too small", self.max_len));
        }
        if self.max_batch == 0 {
            return bad("max_batch must be positive".into());
        }
        if self.ff_dim == 0 {
            return bad("ff_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0,1)", self.dropout));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!("label_smoothing {} outside [0,1)", self.label_smoothing));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("optimizer constants out of range".into());
        }
        Ok(())
    }

    /// Learning rate for 1-based optimizer step `step`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let step = step.max(1) as f64;
        if self.warmup_steps == 0 {
            return self.lr;
        }
        let w = self.warmup_steps as f64;
        self.lr * (step / w).min((w / step).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_peaks_at_warmup() {
        let c = ModelConfig {
            lr: 1e-3,
            warmup_steps: 100,
            ..ModelConfig::toy(50)
        };
        assert!((c.lr_at(100) - 1e-3).abs() < 1e-12);
        assert!(c.lr_at(50) < c.lr_at(100));
        assert!((c.lr_at(400) - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            n_heads: 3,
            ..ModelConfig::toy(50)
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
