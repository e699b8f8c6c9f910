//! Versioned checkpoint container: a JSON header plus named tensor sets,
//! sealed with a SHA-256 digest.
//!
//! Layout (little endian):
//!
//! ```text
//! "LWCK" | u32 version | u64 header_len | header JSON
//! u32 set_count, then per set:
//!   name | u32 tensor_count, then per tensor: name | u32 rank | u64 dims... | f64 values...
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Names are `u32 length` + UTF-8 bytes.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};
use crate::nn::TensorSet;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub header: serde_json::Value,
    sets: Vec<(String, TensorSet)>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

impl Container {
    pub fn new(header: serde_json::Value) -> Self {
        Self { header, sets: Vec::new() }
    }

    /// Adds or replaces a named set.
    pub fn insert(&mut self, name: &str, set: TensorSet) {
        match self.sets.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = set,
            None => self.sets.push((name.to_string(), set)),
        }
    }

    pub fn set(&self, name: &str) -> Option<&TensorSet> {
        self.sets.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn require(&self, name: &str) -> Result<&TensorSet> {
        self.set(name).ok_or_else(|| Error::Checkpoint(format!("checkpoint has no `{name}` tensors")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(self.sets.len() as u32).to_le_bytes());
        for (name, set) in &self.sets {
            put_str(&mut buf, name);
            buf.extend_from_slice(&(set.len() as u32).to_le_bytes());
            for (tname, t) in set.iter() {
                put_str(&mut buf, tname);
                buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                for &d in t.shape() {
                    buf.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut c = Cursor { bytes: body, pos: 4 };
        let version = c.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (file truncated or corrupt)".into()));
        }
        let header_len = c.len()?;
        let header = serde_json::from_slice(c.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut out = Self::new(header);
        for _ in 0..c.u32()? {
            let name = c.string()?;
            let mut set = TensorSet::new();
            for _ in 0..c.u32()? {
                let tname = c.string()?;
                let rank = c.u32()? as usize;
                let shape = (0..rank).map(|_| c.len()).collect::<Result<Vec<_>>>()?;
                let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
                let n = n.ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
                let raw = c.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?)?;
                let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                set.add(tname, Tensor::new(shape, data));
            }
            out.sets.push((name, set));
        }
        if c.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_bytes(path)?).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut set = TensorSet::new();
        set.add("w", Tensor::new([2, 2], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25]));
        set.add("b", Tensor::scalar(0.1));
        let mut c = Container::new(serde_json::json!({"step": 3}));
        c.insert("model", set);
        c
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.require("model").unwrap().checksum(), c.require("model").unwrap().checksum());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            assert!(Container::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn corruption_and_version_are_detected() {
        let mut bytes = sample().to_bytes().unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(Container::from_bytes(&bytes).unwrap_err().to_string().contains("checksum"));
        let mut bytes = sample().to_bytes().unwrap();
        bytes[4] = 9;
        assert!(Container::from_bytes(&bytes).unwrap_err().to_string().contains("version"));
    }
}
