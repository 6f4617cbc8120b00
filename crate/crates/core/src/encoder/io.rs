//! Model file layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes   "SIAMATTR"
//! version      u32
//! header_len   u64
//! header       header_len bytes of JSON {config, vocab, tensors: [{name, shape}]}
//! weights      f64 values of every tensor, in header order
//! checksum     32 bytes  SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderConfig, EncoderError, SiameseEncoder, Vocab};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"SIAMATTR";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    vocab: Vocab,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(model: &SiameseEncoder) -> Result<Vec<u8>, EncoderError> {
    let header = Header {
        config: model.config().clone(),
        vocab: model.vocab().clone(),
        tensors: model
            .param_specs()
            .into_iter()
            .map(|s| TensorEntry {
                name: s.name,
                shape: s.shape,
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| EncoderError::Header(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in model.params() {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn checksum_ok(bytes: &[u8]) -> bool {
    bytes.len() >= CHECKSUM_LEN && {
        let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        Sha256::digest(body).as_slice() == sum
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<SiameseEncoder, EncoderError> {
    if bytes.len() < PREFIX_LEN {
        return Err(EncoderError::Truncated {
            expected: PREFIX_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(EncoderError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(EncoderError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX_LEN.saturating_add(header_len);
    if bytes.len() < header_end.saturating_add(CHECKSUM_LEN) {
        return Err(EncoderError::Truncated {
            expected: header_end.saturating_add(CHECKSUM_LEN),
            found: bytes.len(),
        });
    }
    let header: Header = match serde_json::from_slice(&bytes[PREFIX_LEN..header_end]) {
        Ok(h) => h,
        Err(_) if !checksum_ok(bytes) => return Err(EncoderError::Checksum),
        Err(e) => return Err(EncoderError::Header(e.to_string())),
    };
    let values: usize = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>())
        .sum();
    let expected = header_end + values * 8 + CHECKSUM_LEN;
    if bytes.len() < expected {
        return Err(EncoderError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(EncoderError::TrailingBytes(bytes.len() - expected));
    }
    if !checksum_ok(bytes) {
        return Err(EncoderError::Checksum);
    }
    let mut offset = header_end;
    let mut params = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let data = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        offset += n * 8;
        params.push(Tensor::new(entry.shape.clone(), data)?);
    }
    let specs = super::param_specs(&header.config, header.vocab.len());
    if specs
        .iter()
        .map(|s| &s.name)
        .ne(header.tensors.iter().map(|t| &t.name))
    {
        return Err(EncoderError::Header(
            "tensor names do not match the config".into(),
        ));
    }
    SiameseEncoder::from_params(header.config, header.vocab, params)
}

pub fn save_model(model: &SiameseEncoder, path: impl AsRef<Path>) -> Result<(), EncoderError> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SiameseEncoder, EncoderError> {
    from_bytes(&fs::read(path)?)
}
