//! Portable checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "FERCKPT1"
//! meta_len     u32
//! meta         meta_len bytes of JSON (CheckpointMeta)
//! group_count  u32
//! per group:
//!   name_len u32, name utf-8
//!   role_len u32, role tag utf-8 ("backbone" | "head" | "normalization")
//!   trainable u8, decay u8
//!   ndim u32, dims u64 x ndim
//!   values f32 x prod(dims)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HeadSpec, InputSpec, ModelError, ParameterGroup, ParameterRole};
use crate::rng::sha256_hex;

pub const MAGIC: &[u8; 8] = b"FERCKPT1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub backend: String,
    pub config_digest: String,
    pub epoch: usize,
    pub phase: String,
    pub val_loss: f64,
    pub val_acc: f64,
    pub head: HeadSpec,
    pub input: InputSpec,
    /// Smoothing coefficient used by the training loss.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub groups: Vec<ParameterGroup>,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Format(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Format("invalid utf-8 string".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let meta = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            put_str(&mut out, &g.name);
            put_str(&mut out, g.role.tag());
            out.push(g.trainable as u8);
            out.push(g.decay as u8);
            out.extend_from_slice(&(g.shape.len() as u32).to_le_bytes());
            for &d in &g.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &g.values {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        if cur.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let meta_len = cur.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?)?;
        let n = cur.u32()? as usize;
        let mut groups = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let name = cur.string()?;
            let role: ParameterRole = cur.string()?.parse()?;
            let trainable = cur.u8()? != 0;
            let decay = cur.u8()? != 0;
            let ndim = cur.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| cur.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| CheckpointError::Format(format!("group {name:?} is too large")))?;
            let raw = cur.take(len.checked_mul(4).ok_or_else(|| {
                CheckpointError::Format(format!("group {name:?} is too large"))
            })?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            groups.push(ParameterGroup {
                name,
                role,
                shape,
                values,
                trainable,
                decay,
            });
        }
        if cur.pos != bytes.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                bytes.len() - cur.pos
            )));
        }
        Ok(Self { meta, groups })
    }

    pub fn write(&self, path: &Path) -> Result<String, CheckpointError> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn digest(&self) -> Result<String, CheckpointError> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                backend: "reference".into(),
                config_digest: "abc".into(),
                epoch: 3,
                phase: "warmup".into(),
                val_loss: 0.5,
                val_acc: 0.75,
                head: HeadSpec::new(4, 0.5, 7).unwrap(),
                input: InputSpec::Flat { downsample: 24 },
                epsilon: 0.06,
            },
            groups: vec![
                ParameterGroup::zeros("backbone", ParameterRole::Backbone, vec![0], true),
                ParameterGroup {
                    name: "head.kernel".into(),
                    role: ParameterRole::Head,
                    shape: vec![4, 7],
                    values: (0..28).map(|i| i as f64 * 0.25 - 3.0).collect(),
                    trainable: true,
                    decay: true,
                },
                ParameterGroup::zeros("bn.gamma", ParameterRole::Normalization, vec![3], false),
            ],
        }
    }

    #[test]
    fn round_trip_of_f32_representable_values() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn layout_starts_with_magic_and_le_lengths() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let meta_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        assert_eq!(bytes[12], b'{');
        assert_eq!(bytes[12 + meta_len - 1], b'}');
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CheckpointError::Format(_))
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }

    #[test]
    fn unknown_role_tag_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let needle = b"normalization";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut bad = bytes.clone();
        bad[pos..pos + needle.len()].copy_from_slice(b"normalizatiox");
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Model(ModelError::UnknownRole(_)))
        ));
    }
}
