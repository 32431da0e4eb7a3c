//! Flat binary container of named `f64` arrays with a text manifest.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      "CDCK"
//! version    u32 (= 1)
//! manifest   u64 byte length, then UTF-8 text
//! count      u32
//! per array  u32 name length, name bytes (UTF-8),
//!            u32 rank, rank × u64 dims,
//!            product(dims) × f64 payload
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"CDCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub manifest: String,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(manifest: impl Into<String>) -> Self {
        Self {
            manifest: manifest.into(),
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.arrays.push((name.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.manifest.len() as u64).to_le_bytes())?;
        w.write_all(self.manifest.as_bytes())?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for (name, t) in &self.arrays {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TensorError::Checkpoint(format!("unsupported version {version}")));
        }
        let manifest_len = read_u64(r)? as usize;
        let manifest = read_string(r, manifest_len)?;
        let count = read_u32(r)?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = read_string(r, name_len)?;
            let rank = read_u32(r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u64(r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 8];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| TensorError::Checkpoint(format!("array {name}: {e}")))?;
            arrays.push((name, tensor));
        }
        Ok(Self { manifest, arrays })
    }

    /// Writes via a temporary sibling file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, self.to_bytes())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| TensorError::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let mut ck = Checkpoint::new("k=v\n");
        ck.push("w", Tensor::new([1, 2], vec![1.5, -2.0]).unwrap());
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..4], b"CDCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 4);
        assert_eq!(&bytes[16..20], b"k=v\n");
        let tail = &bytes[bytes.len() - 16..];
        assert_eq!(f64::from_le_bytes(tail[..8].try_into().unwrap()), 1.5);
    }

    #[test]
    fn truncated_input_is_an_error() {
        let mut ck = Checkpoint::new("");
        ck.push("w", Tensor::zeros([3]));
        let bytes = ck.to_bytes();
        assert!(Checkpoint::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::read_from(&mut &b"XXXX"[..]).is_err());
    }
}
