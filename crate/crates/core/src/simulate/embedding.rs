use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};

pub const EMBEDDING_DIM: usize = 128;

/// Stable 64-bit seed from a string key and a numeric seed.
pub fn hash_seed(key: &str, seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(key.as_bytes());
    h.update(seed.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-8 {
        return Err(Error::InvalidArgument("embedding norm below 1e-8".into()));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Deterministic unit-norm Gaussian direction standing in for a trained
/// speaker encoder.
pub fn synth_speaker_embedding(speaker_id: &str, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(hash_seed(speaker_id, seed));
    let v = (0..EMBEDDING_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(v).expect("Gaussian draw has positive norm")
}

/// Mean of per-utterance embeddings renormalized to unit length.
pub fn enroll_embedding(utterances: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = utterances
        .first()
        .ok_or_else(|| Error::InvalidArgument("no enrollment utterances".into()))?;
    let dim = first.len();
    if utterances.iter().any(|u| u.len() != dim) {
        return Err(Error::Shape("enrollment embeddings differ in length".into()));
    }
    let mut mean = vec![0.0; dim];
    for u in utterances {
        for (m, v) in mean.iter_mut().zip(u) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= utterances.len() as f64);
    normalize(mean)
}

pub fn write_embedding(path: &Path, v: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = v.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes).at(path)
}

pub fn read_embedding(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).at(path)?;
    if bytes.len() != EMBEDDING_DIM * 4 {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} bytes of f32 embedding, found {}",
            path.display(),
            EMBEDDING_DIM * 4,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect())
}
