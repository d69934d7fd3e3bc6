//! `DFLH` head checkpoints.
//!
//! ```text
//! "DFLH" | u16 version | u16 flags (bit 0: ADAM state present) | u64 meta length | meta JSON
//! | parameter tensors as f32 LE, model tensor order
//! | [u64 ADAM step | first moments f32 LE | second moments f32 LE]
//! ```
//!
//! Tensor lengths are implied by the config echoed in the metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::config::HeadConfig;
use super::model::{init_head, HeadModel};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DFLH";
pub const CHECKPOINT_VERSION: u16 = 1;
const FLAG_ADAM: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: HeadConfig,
    pub classes: Vec<String>,
    pub views: Vec<String>,
    pub backbone_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: HeadModel,
    pub classes: Vec<String>,
    pub views: Vec<String>,
    pub backbone_id: String,
}

pub fn encode_checkpoint(ckpt: &Checkpoint, include_adam: bool) -> Vec<u8> {
    let meta = CheckpointMeta {
        config: ckpt.model.config.clone(),
        classes: ckpt.classes.clone(),
        views: ckpt.views.clone(),
        backbone_id: ckpt.backbone_id.clone(),
    };
    let meta = serde_json::to_vec(&meta).expect("checkpoint metadata serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let flags = if include_adam { FLAG_ADAM } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    let put = |out: &mut Vec<u8>, t: &[f64]| {
        for &v in t {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    };
    for t in ckpt.model.tensors() {
        put(&mut out, t);
    }
    if include_adam {
        out.extend_from_slice(&ckpt.model.adam.step.to_le_bytes());
        for t in ckpt.model.adam.first.iter().chain(&ckpt.model.adam.second) {
            put(&mut out, t);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s_into(&mut self, out: &mut [f64]) -> Result<()> {
        let raw = self.take(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().unwrap()) as f64;
        }
        Ok(())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4)?.try_into().unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = cur.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let flags = cur.u16()?;
    let meta_len = cur.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(cur.take(meta_len)?).map_err(|e| Error::Parse {
        path: Default::default(),
        message: format!("checkpoint metadata: {e}"),
    })?;
    let mut model = init_head(&meta.config)?;
    for t in model.tensors_mut() {
        cur.f32s_into(t)?;
    }
    if flags & FLAG_ADAM != 0 {
        let step = cur.u64()?;
        let mut adam = AdamState::zeros_like(&model.tensors());
        adam.step = step;
        for t in adam.first.iter_mut().chain(adam.second.iter_mut()) {
            cur.f32s_into(t)?;
        }
        model.adam = adam;
    }
    if cur.pos != bytes.len() {
        return Err(Error::Truncated {
            expected: cur.pos as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(Checkpoint {
        model,
        classes: meta.classes,
        views: meta.views,
        backbone_id: meta.backbone_id,
    })
}

/// Atomically writes a checkpoint file.
pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>, include_adam: bool) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    std::io::Write::write_all(&mut tmp, &encode_checkpoint(ckpt, include_adam)).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_owned())
        } else {
            Error::io(path, e)
        }
    })?;
    decode_checkpoint(&bytes)
}
