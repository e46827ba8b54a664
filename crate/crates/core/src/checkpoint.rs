//! Bit-exact model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "LSTMDSSM"
//! version  u32
//! hlen     u64      byte length of the header
//! header   hlen     UTF-8 JSON: dims, gamma, step, vocabulary hash, array manifest
//! payload           f64 arrays, row-major, in manifest order
//! digest   32 bytes SHA-256 of header and payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bptt::Velocity;
use crate::error::{Error, Result};
use crate::lstm::{LstmParameters, ModelDims, GROUP_NAMES};
use crate::text::TrigramVocabulary;

pub const MAGIC: &[u8; 8] = b"LSTMDSSM";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub dims: ModelDims,
    pub gamma: f64,
    /// SHA-256 of the vocabulary file the model was trained against.
    pub vocab_hash: [u8; 32],
    pub vocab_dimension: usize,
    pub params: LstmParameters,
    pub velocity: Option<Velocity>,
    /// Parameter updates applied so far.
    pub step: u64,
}

impl Checkpoint {
    pub fn new(params: LstmParameters, vocab: &TrigramVocabulary, gamma: f64) -> Self {
        Checkpoint {
            dims: params.dims(),
            gamma,
            vocab_hash: vocab.content_hash(),
            vocab_dimension: vocab.dimension(),
            params,
            velocity: None,
            step: 0,
        }
    }

    /// Fails unless `vocab` is the vocabulary this checkpoint was trained with.
    pub fn check_vocabulary(&self, vocab: &TrigramVocabulary) -> Result<()> {
        if vocab.dimension() != self.vocab_dimension || vocab.content_hash() != self.vocab_hash {
            return Err(Error::Config(format!(
                "vocabulary does not match checkpoint (dimension {} vs {}, or content differs)",
                vocab.dimension(),
                self.vocab_dimension
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let mut payload = Vec::new();
        let mut push = |prefix: &str, p: &LstmParameters| {
            for (name, group) in GROUP_NAMES.iter().zip(p.groups()) {
                arrays.push(ArrayEntry {
                    name: format!("{prefix}{name}"),
                    offset: payload.len() as u64,
                    len: group.len() as u64,
                });
                for v in group {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
            }
        };
        push("", &self.params);
        if let Some(v) = &self.velocity {
            push("velocity.", v);
        }
        let header = Header {
            input_dim: self.dims.input_dim,
            ncell: self.dims.ncell,
            gamma: self.gamma,
            step: self.step,
            vocab_hash: hex(&self.vocab_hash),
            vocab_dimension: self.vocab_dimension,
            has_velocity: self.velocity.is_some(),
            arrays,
        };
        let header = serde_json::to_vec(&header)?;

        let mut out = Vec::with_capacity(20 + header.len() + payload.len() + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        let digest = Sha256::new().chain_update(&header).chain_update(&payload).finalize();
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Shape(format!("file truncated at {} bytes", bytes.len()));
        if bytes.len() < 8 {
            return Err(truncated());
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(bytes.get(8..12).ok_or_else(truncated)?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let hlen = u64::from_le_bytes(bytes.get(12..20).ok_or_else(truncated)?.try_into().unwrap());
        let header_end = 20usize.checked_add(usize::try_from(hlen).map_err(|_| truncated())?).ok_or_else(truncated)?;
        let header_bytes = bytes.get(20..header_end).ok_or_else(truncated)?;
        let header: Header = serde_json::from_slice(header_bytes)?;

        let dims = ModelDims::new(header.input_dim, header.ncell).map_err(|e| Error::Shape(e.to_string()))?;
        let expected = LstmParameters::zeros(dims);
        let groups_per_set = GROUP_NAMES.len();
        let sets = if header.has_velocity { 2 } else { 1 };
        if header.arrays.len() != groups_per_set * sets {
            return Err(Error::Shape(format!(
                "manifest lists {} arrays, expected {}",
                header.arrays.len(),
                groups_per_set * sets
            )));
        }
        let payload_len: u64 = header.arrays.iter().map(|a| a.len * 8).sum();
        let payload_end = usize::try_from(payload_len)
            .ok()
            .and_then(|l| header_end.checked_add(l))
            .ok_or_else(truncated)?;
        if bytes.len() != payload_end + DIGEST_LEN {
            return Err(Error::Shape(format!(
                "file is {} bytes, manifest implies {}",
                bytes.len(),
                payload_end + DIGEST_LEN
            )));
        }
        let payload = &bytes[header_end..payload_end];
        let digest = Sha256::new().chain_update(header_bytes).chain_update(payload).finalize();
        if digest.as_slice() != &bytes[payload_end..] {
            return Err(Error::HashMismatch);
        }

        let read_set = |entries: &[ArrayEntry], prefix: &str| -> Result<LstmParameters> {
            let mut p = expected.clone();
            for ((entry, name), dst) in entries.iter().zip(GROUP_NAMES).zip(p.groups_mut()) {
                if entry.name != format!("{prefix}{name}") || entry.len as usize != dst.len() {
                    return Err(Error::Shape(format!(
                        "array {:?} of length {} does not fit {prefix}{name} of length {}",
                        entry.name,
                        entry.len,
                        dst.len()
                    )));
                }
                let start = entry.offset as usize;
                let raw = payload.get(start..start + dst.len() * 8).ok_or_else(|| {
                    Error::Shape(format!("array {} runs past the payload", entry.name))
                })?;
                for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
                    *d = f64::from_le_bytes(chunk.try_into().unwrap());
                }
            }
            Ok(p)
        };
        let params = read_set(&header.arrays[..groups_per_set], "")?;
        let velocity = if header.has_velocity {
            Some(read_set(&header.arrays[groups_per_set..], "velocity.")?)
        } else {
            None
        };
        let vocab_hash = unhex(&header.vocab_hash).ok_or_else(|| Error::Shape("bad vocabulary hash".into()))?;
        Ok(Checkpoint {
            dims,
            gamma: header.gamma,
            vocab_hash,
            vocab_dimension: header.vocab_dimension,
            params,
            velocity,
            step: header.step,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    input_dim: usize,
    ncell: usize,
    gamma: f64,
    step: u64,
    vocab_hash: String,
    vocab_dimension: usize,
    has_velocity: bool,
    arrays: Vec<ArrayEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    /// Byte offset within the payload.
    offset: u64,
    /// Number of f64 values.
    len: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_bytes()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
