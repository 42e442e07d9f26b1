use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feed-forward block variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FfnKind {
    /// `W_out · relu(W_in · x + b_in) + b_out`
    Relu,
    /// `W_down · (silu(W_gate · x + b_gate) ⊙ W_up · x) + b_down`
    GatedSilu,
}

impl std::str::FromStr for FfnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(FfnKind::Relu),
            "gated-silu" => Ok(FfnKind::GatedSilu),
            other => Err(Error::input(format!(
                "unknown ffn kind {other:?} (expected relu or gated-silu)"
            ))),
        }
    }
}

/// Architecture hyperparameters of the toy decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub ffn_kind: FfnKind,
    /// Reuse the token embedding as the unembedding matrix.
    #[serde(default)]
    pub tied_unembedding: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Total number of FFN inner units across all layers.
    pub fn n_neurons(&self) -> usize {
        self.n_layers * self.d_ff
    }
}
