//! Toy Siamese transformer encoder.
//!
//! Word-level tokenizer, token plus learned position embeddings, post-norm
//! transformer blocks, mean pooling and an optional linear projection. A
//! shifted model subtracts the encoding of each input's PAD reference so the
//! reference maps to the origin. Every layer can be tapped and the remainder
//! of the network re-run from it with [`SiameseEncoder::encode_tail`].

mod config;
mod io;
mod model;
mod vocab;

use thiserror::Error;

pub use config::{EncoderConfig, Head, ShiftMode};
pub use io::{from_bytes, load_model, save_model, to_bytes, FORMAT_VERSION};
pub use model::{
    cosine, param_specs, BoundParams, LayerActivation, ParamKind, ParamSpec, SiameseEncoder,
};
pub use vocab::{
    is_special, make_reference, split_words, word_units, TokenId, TokenSeq, Vocab, CLS,
    CONTINUATION, EOS, PAD, UNK,
};

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds max_seq_len {max_seq_len}")]
    SequenceTooLong { len: usize, max_seq_len: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownTokenId(u32),
    #[error("layer {layer} outside 0..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },
    #[error("activation shape {shape:?} does not match model_dim {expected_dim}")]
    ActivationShape {
        expected_dim: usize,
        shape: Vec<usize>,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("model format version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("model file has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
    #[error("model file checksum mismatch")]
    Checksum,
    #[error("model file header: {0}")]
    Header(String),
}

#[cfg(test)]
mod tests;
