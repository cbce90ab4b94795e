//! Binary checkpoint format.
//!
//! ```text
//! "NEC1"                      magic
//! u32 version                 (1)
//! u32 len, [u8; len]          metadata (UTF-8, typically JSON)
//! u32 count                   tensor table entries
//!   u32 len, [u8; len]        name
//!   u8 dtype                  (0 = float32)
//!   u32 ndim, u64 × ndim      shape
//!   u64 offset                byte offset into the data section
//! raw little-endian float32 data
//! ```
//!
//! All integers are little-endian. Optimizer state is stored under the
//! reserved `__adam/` prefix.

use std::fs;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NEC1";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const OPTIMIZER_PREFIX: &str = "__adam/";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<(String, Tensor)>,
}

fn corrupt(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
}

impl Checkpoint {
    /// Snapshot parameter values and, optionally, Adam state.
    pub fn from_store(store: &ParamStore, adam: Option<&Adam>, metadata: impl Into<String>) -> Self {
        let mut tensors: Vec<(String, Tensor)> = store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        if let Some(adam) = adam {
            tensors.push((
                format!("{OPTIMIZER_PREFIX}step"),
                Tensor::from_vec(vec![adam.step as f64]),
            ));
            for ((_, p), m) in store.iter().zip(&adam.m) {
                tensors.push((format!("{OPTIMIZER_PREFIX}m/{}", p.name), m.clone()));
            }
            for ((_, p), v) in store.iter().zip(&adam.v) {
                tensors.push((format!("{OPTIMIZER_PREFIX}v/{}", p.name), v.clone()));
            }
        }
        Self {
            metadata: metadata.into(),
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 4 * t.len() as u64;
        }
        for (_, t) in &self.tensors {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic (not a NEC1 checkpoint)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let metadata = r.string()?;
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(corrupt(format!("{name}: unsupported dtype {dtype}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = r.u64()? as usize;
            table.push((name, shape, offset));
        }
        let data = &buf[r.pos..];
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape, offset) in table {
            let n: usize = shape.iter().product();
            let bytes = data
                .get(offset..offset + 4 * n)
                .ok_or_else(|| corrupt(format!("{name}: data out of range")))?;
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            tensors.push((name, Tensor::new(&shape, values)?));
        }
        Ok(Self { metadata, tensors })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Copy stored values into every parameter of `store` (matched by name).
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(_, p)| p.name.clone()).collect();
        for name in names {
            let t = self
                .get(&name)
                .ok_or_else(|| corrupt(format!("missing parameter `{name}`")))?;
            store.set_value(&name, t.clone())?;
        }
        Ok(())
    }

    /// Rebuild optimizer state, if the checkpoint carries one.
    pub fn restore_adam(&self, store: &ParamStore, config: AdamConfig) -> Result<Option<Adam>> {
        let Some(step) = self.get(&format!("{OPTIMIZER_PREFIX}step")) else {
            return Ok(None);
        };
        let mut adam = Adam::new(config, store);
        adam.step = step.data()[0] as u64;
        for (i, (_, p)) in store.iter().enumerate() {
            for (prefix, slot) in [("m", &mut adam.m[i]), ("v", &mut adam.v[i])] {
                let key = format!("{OPTIMIZER_PREFIX}{prefix}/{}", p.name);
                let t = self.get(&key).ok_or_else(|| corrupt(format!("missing `{key}`")))?;
                if t.shape() != p.value.shape() {
                    return Err(corrupt(format!("`{key}` has shape {:?}", t.shape())));
                }
                *slot = t.clone();
            }
        }
        Ok(Some(adam))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::from_bytes(b"XXXX\x01\0\0\0").is_err());
        let ck = Checkpoint {
            metadata: "{}".into(),
            tensors: vec![("a".into(), Tensor::from_vec(vec![1.0, 2.0]))],
        };
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    }

    #[test]
    fn header_layout() {
        let ck = Checkpoint {
            metadata: "m".into(),
            tensors: vec![("w".into(), Tensor::new(&[1, 2], vec![0.5, -1.0]).unwrap())],
        };
        let b = ck.to_bytes();
        assert_eq!(&b[..4], b"NEC1");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(b[12], b'm');
        // data section: the last 8 bytes are the two float32 values
        let n = b.len();
        assert_eq!(f32::from_le_bytes(b[n - 8..n - 4].try_into().unwrap()), 0.5);
        assert_eq!(f32::from_le_bytes(b[n - 4..].try_into().unwrap()), -1.0);
    }
}
