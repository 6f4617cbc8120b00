use serde::{Deserialize, Serialize};

use super::EncoderError;

/// Similarity head applied to the two sentence embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Dot,
    Cosine,
}

/// Whether sentence embeddings are shifted so that each input's PAD
/// reference lands on the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    None,
    ReferenceShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub model_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    /// Linear projection after pooling (`model_dim → model_dim`).
    pub projection: bool,
    pub head: Head,
    pub shift_mode: ShiftMode,
    pub seed: u64,
}

/// The toy model: 4 blocks of width 64 with 8 heads, mean pooling without
/// projection, cosine head.
impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            model_dim: 64,
            num_heads: 8,
            ffn_dim: 128,
            max_seq_len: 64,
            projection: false,
            head: Head::Cosine,
            shift_mode: ShiftMode::None,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    /// Mean pooling of the embeddings and nothing else: a linear encoder.
    pub fn pooling_only(model_dim: usize) -> Self {
        Self {
            num_layers: 0,
            model_dim,
            num_heads: 1,
            projection: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return Err(EncoderError::Config(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(EncoderError::Config(
                "max_seq_len must be at least 2".into(),
            ));
        }
        if self.num_layers > 0 && self.ffn_dim == 0 {
            return Err(EncoderError::Config("ffn_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn out_dim(&self) -> usize {
        self.model_dim
    }

    pub fn is_shifted(&self) -> bool {
        self.shift_mode == ShiftMode::ReferenceShift
    }
}
