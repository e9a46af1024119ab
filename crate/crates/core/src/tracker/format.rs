//! Binary model file.
//!
//! Little-endian layout:
//!
//! ```text
//! "BDST"  u32 version  u32 header_len  header (JSON)
//! u32 num_blocks
//! per block: u32 name_len  name  u32 ndim  u32 dims[ndim]  f32 data[prod(dims)]
//! u32 crc32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelBundle, TrackerOptions};
use super::ModelError;
use crate::encoder::{EncoderConfig, LAYER_NORM_EPS};
use crate::heads::SharingMode;
use crate::numeric::{ParamStore, Tensor};
use crate::tokenizer::{Vocab, MAX_WORD_CHARS};

pub const MAGIC: &[u8; 4] = b"BDST";
pub const FORMAT_VERSION: u32 = 1;

const ACTIVATION: &str = "gelu_erf";
const NORM_PLACEMENT: &str = "post";
const MAX_NDIM: u32 = 8;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenizerFlags {
    lowercase: bool,
    max_word_chars: usize,
    continuation_prefix: String,
}

#[derive(Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: EncoderConfig,
    sharing: SharingMode,
    slots: Vec<String>,
    options: TrackerOptions,
    seed: u64,
    tokenizer: TokenizerFlags,
    activation: String,
    layer_norm: String,
    layer_norm_eps: f64,
    vocab: Vec<String>,
}

fn tokenizer_flags() -> TokenizerFlags {
    TokenizerFlags {
        lowercase: true,
        max_word_chars: MAX_WORD_CHARS,
        continuation_prefix: "##".into(),
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<(), ModelError> {
    let v = u32::try_from(v).map_err(|_| ModelError::Invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(ModelError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, ModelError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct RawBlock<'a> {
    name: &'a [u8],
    dims: Vec<usize>,
    data: &'a [u8],
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let header = Header {
            config: *self.config(),
            sharing: self.sharing(),
            slots: self.slots().to_vec(),
            options: *self.options(),
            seed: self.seed(),
            tokenizer: tokenizer_flags(),
            activation: ACTIVATION.into(),
            layer_norm: NORM_PLACEMENT.into(),
            layer_norm_eps: LAYER_NORM_EPS,
            vocab: self.vocab().tokens().to_vec(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| ModelError::Invalid(e.to_string()))?;
        let mut out = Vec::with_capacity(header.len() + 4 * self.parameter_count() + 1024);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u32(&mut out, header.len())?;
        out.extend_from_slice(&header);
        put_u32(&mut out, self.params().len())?;
        for (name, tensor) in self.params().iter() {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, tensor.shape().len())?;
            for &d in tensor.shape() {
                put_u32(&mut out, d)?;
            }
            for v in tensor.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(ModelError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = r.u32("header length")? as usize;
        let header = r.take(header_len, "header")?;
        let num_blocks = r.u32("block count")?;
        let mut blocks = Vec::new();
        for _ in 0..num_blocks {
            let name_len = r.u32("block name length")? as usize;
            let name = r.take(name_len, "block name")?;
            let ndim = r.u32("block rank")?;
            if ndim > MAX_NDIM {
                return Err(ModelError::Malformed(format!("block rank {ndim} exceeds {MAX_NDIM}")));
            }
            let dims = (0..ndim)
                .map(|_| r.u32("block shape").map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let bytes_len = dims
                .iter()
                .try_fold(4usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| ModelError::Malformed("block size overflows".into()))?;
            let data = r.take(bytes_len, "block data")?;
            blocks.push(RawBlock { name, dims, data });
        }
        let body_len = r.pos;
        let stored = r.u32("checksum")?;
        let computed = crc32fast::hash(&bytes[..body_len]);
        if stored != computed {
            return Err(ModelError::Checksum { stored, computed });
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Malformed(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }

        let header: Header = serde_json::from_slice(header).map_err(|e| ModelError::Malformed(format!("header: {e}")))?;
        if header.tokenizer != tokenizer_flags()
            || header.activation != ACTIVATION
            || header.layer_norm != NORM_PLACEMENT
            || header.layer_norm_eps != LAYER_NORM_EPS
        {
            return Err(ModelError::Malformed("unsupported tokenizer or architecture flags".into()));
        }
        let vocab = Vocab::from_tokens(header.vocab).map_err(|e| ModelError::Malformed(e.to_string()))?;
        let mut store = ParamStore::new();
        for b in blocks {
            let name = std::str::from_utf8(b.name).map_err(|_| ModelError::Malformed("block name is not UTF-8".into()))?;
            if store.find(name).is_some() {
                return Err(ModelError::Malformed(format!("duplicate block {name}")));
            }
            let values = b
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::param(b.dims, values).map_err(|e| ModelError::Malformed(e.to_string()))?;
            store.add(name, tensor);
        }
        ModelBundle::from_parts(header.config, header.sharing, header.slots, vocab, header.options, header.seed, store).map_err(
            |e| match e {
                ModelError::Malformed(m) => ModelError::Malformed(m),
                other => ModelError::Malformed(other.to_string()),
            },
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&fs::read(path)?)
    }
}
