//! Debug dump of feature tensors: `"NEF1"`, u32 layout version, u32 rank,
//! u64 dims, then little-endian f32 values.

use std::io::{Read, Write};
use std::path::Path;

use neuralecho_nn::Tensor;

use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"NEF1";
const LAYOUT_VERSION: u32 = 1;

pub fn write_feature_dump(path: &Path, tensor: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + tensor.len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&LAYOUT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for d in tensor.shape() {
        buf.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in tensor.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(&buf)).at(path)
}

pub fn read_feature_dump(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).at(path)?;
    let bad = |msg: &str| Error::InvalidArgument(format!("{}: {msg}", path.display()));
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("not a feature dump"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if u32_at(4) != LAYOUT_VERSION {
        return Err(bad("unsupported layout version"));
    }
    let rank = u32_at(8) as usize;
    let mut pos = 12;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated header"))?;
        shape.push(u64::from_le_bytes(d.try_into().unwrap()) as usize);
        pos += 8;
    }
    let count: usize = shape.iter().product();
    let body = &bytes[pos..];
    if body.len() != count * 4 {
        return Err(bad("payload size does not match dims"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Tensor::new(&shape, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feat.bin");
        let t = Tensor::new(&[2, 3], vec![0.5, -1.0, 2.0, 0.0, 3.25, 1e-3]).unwrap();
        write_feature_dump(&path, &t).unwrap();
        let back = read_feature_dump(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn garbage_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"hello world!").unwrap();
        assert!(read_feature_dump(&path).is_err());
    }
}
