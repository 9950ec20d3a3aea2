//! Binary checkpoint format.
//!
//! Layout (little endian): magic, format version, JSON model config, the
//! parameter tensors followed by normalization buffers (each as a `u64` length
//! and `f32` data), an opaque extra payload, then a SHA-256 of everything
//! before it.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Encoder, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"RPPGCKPT";
const VERSION: u32 = 1;
const HASH_LEN: usize = 32;

/// A model plus whatever the writer attached (e.g. serialized optimizer state).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Encoder,
    pub extra: Vec<u8>,
    pub hash: [u8; HASH_LEN],
}

impl Checkpoint {
    pub fn hash_hex(&self) -> String {
        hex(&self.hash)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode(model: &Encoder, extra: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(model.config())?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    let tensors: Vec<&[f32]> = model.params().into_iter().chain(model.buffers()).collect();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(extra.len() as u64).to_le_bytes());
    out.extend_from_slice(extra);
    let hash = Sha256::digest(&out);
    out.extend_from_slice(&hash);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + HASH_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(corrupt("not a checkpoint"));
    }
    let (body, stored) = bytes.split_at(bytes.len() - HASH_LEN);
    let hash: [u8; HASH_LEN] = Sha256::digest(body).into();
    if hash[..] != stored[..] {
        return Err(corrupt("content hash mismatch"));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u32()?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let cfg_len = r.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len)?).map_err(|e| corrupt(format!("config: {e}")))?;
    let mut model = Encoder::new(cfg, 0).map_err(|e| corrupt(format!("config: {e}")))?;
    let n = r.u32()? as usize;
    let mut slots: Vec<&mut [f32]> = Vec::new();
    let expected = model.params().len() + model.buffers().len();
    if n != expected {
        return Err(corrupt(format!("{n} tensors, expected {expected}")));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u64()? as usize;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("tensor length overflow"))?)?;
        data.push(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes"))).collect::<Vec<f32>>());
    }
    {
        let mut params = model.params_mut();
        slots.append(&mut params);
    }
    let nparams = slots.len();
    for (slot, d) in slots.iter_mut().zip(&data) {
        if slot.len() != d.len() {
            return Err(corrupt("tensor shape mismatch"));
        }
        slot.copy_from_slice(d);
    }
    for (slot, d) in model.buffers_mut().into_iter().zip(&data[nparams..]) {
        if slot.len() != d.len() {
            return Err(corrupt("buffer shape mismatch"));
        }
        slot.copy_from_slice(d);
    }
    let extra_len = r.u64()? as usize;
    let extra = r.take(extra_len)?.to_vec();
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Checkpoint { model, extra, hash })
}

/// Writes atomically (temporary sibling, then rename) and returns the content hash.
pub fn save(path: &Path, model: &Encoder, extra: &[u8]) -> Result<String> {
    let bytes = encode(model, extra)?;
    write_atomic(path, &bytes)?;
    Ok(hex(&bytes[bytes.len() - HASH_LEN..]))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
