//! `TLMCKPT1` checkpoint files.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, the UTF-8
//! JSON header, then every tensor's values in manifest order as
//! little-endian IEEE-754 numbers. Offsets in the manifest are relative to
//! the first payload byte. Nothing time-dependent is written, so equal
//! parameters give byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ModelParams, TreeLmConfig, Variant};
use crate::corpus::Vocab;
use crate::error::{Error, Result};
use crate::nncore::ParamSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TLMCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// Vocabulary file the checkpoint was trained with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRef {
    /// Relative to the checkpoint's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: Dtype,
    offset: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    config: TreeLmConfig,
    variant: Variant,
    vocab_size: usize,
    tensors: Vec<TensorEntry>,
    vocab: Option<VocabRef>,
    meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TreeLmConfig,
    pub params: ModelParams,
    pub vocab: Option<VocabRef>,
    /// Free-form metadata (epoch, learning rate, validation NLL, ...).
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn new(config: TreeLmConfig, params: ModelParams) -> Self {
        Checkpoint {
            config,
            params,
            vocab: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_vocab(mut self, path: impl Into<String>, vocab: &Vocab) -> Self {
        self.vocab = Some(VocabRef {
            path: path.into(),
            sha256: vocab.digest(),
        });
        self
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        self.params.check_shapes(&self.config)?;
        let mut offset = 0u64;
        let tensors: Vec<TensorEntry> = self
            .params
            .tensors()
            .into_iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name,
                    shape: [t.rows(), t.cols()],
                    dtype,
                    offset,
                };
                offset += (t.len() * dtype.width()) as u64;
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            variant: self.config.variant,
            vocab_size: self.config.vocab_size,
            tensors,
            vocab: self.vocab.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("encoding header: {e}")))?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.tensors() {
            for &v in t.data() {
                match dtype {
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing TLMCKPT1 magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let payload = &bytes[body..];
        let config = header.config;
        config.validate()?;
        if header.variant != config.variant || header.vocab_size != config.vocab_size {
            return Err(bad("header fields disagree with the stored configuration"));
        }
        let mut params = ModelParams::zeros(&config);
        let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
        if names.len() != header.tensors.len() {
            return Err(bad("tensor manifest does not match the model layout"));
        }
        for ((entry, name), t) in header.tensors.iter().zip(&names).zip(params.tensors_mut()) {
            if &entry.name != name || entry.shape != [t.rows(), t.cols()] {
                return Err(Error::Checkpoint(format!("unexpected tensor `{}` {:?}", entry.name, entry.shape)));
            }
            let w = entry.dtype.width();
            let start = entry.offset as usize;
            let end = start + t.len() * w;
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("payload of `{name}` truncated")))?;
            for (dst, chunk) in t.data_mut().iter_mut().zip(raw.chunks_exact(w)) {
                *dst = match entry.dtype {
                    Dtype::F64 => f64::from_le_bytes(chunk.try_into().expect("8 bytes")),
                    Dtype::F32 => f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64,
                };
            }
            if !t.is_finite() {
                return Err(Error::Checkpoint(format!("tensor `{name}` holds non-finite values")));
            }
        }
        Ok(Checkpoint {
            config,
            params,
            vocab: header.vocab,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let bytes = self.to_bytes(dtype)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Loads the checkpoint and the vocabulary it references, verifying
    /// the vocabulary hash.
    pub fn load_with_vocab(path: &Path) -> Result<(Self, Vocab)> {
        let ckpt = Checkpoint::load(path)?;
        let vref = ckpt
            .vocab
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("checkpoint does not reference a vocabulary".into()))?;
        let vpath: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&vref.path);
        let vocab = Vocab::load(&vpath)?;
        ckpt.verify_vocab(&vocab)?;
        Ok((ckpt, vocab))
    }

    pub fn verify_vocab(&self, vocab: &Vocab) -> Result<()> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        if let Some(r) = &self.vocab {
            if r.sha256 != vocab.digest() {
                return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
            }
        }
        Ok(())
    }
}
