//! Binary embedding matrix: magic `KEMB`, little-endian `u32` version,
//! `u32` dimension, `u64` row count, then row-major `f32` values.

use std::fs;
use std::path::Path;

use kare_core::vector::Embedding;

use crate::error::{io_err, KareError, Result};

const MAGIC: &[u8; 4] = b"KEMB";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub rows: Vec<Embedding>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, rows: Vec<Embedding>) -> Result<Self, String> {
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(format!("row {i} has dimension {} (expected {dim})", r.len()));
        }
        if let Some(i) = rows.iter().position(|r| !r.iter().all(|x| x.is_finite())) {
            return Err(format!("row {i} has non-finite values"));
        }
        Ok(EmbeddingMatrix { dim, rows })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.rows.len() * self.dim * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u64).to_le_bytes());
        for row in &self.rows {
            for x in row {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err("not an embedding matrix (bad magic)".into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(format!("unsupported embedding matrix version {version}"));
        }
        let dim = u32_at(8) as usize;
        let n = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let expected = n.checked_mul(dim).and_then(|x| x.checked_mul(4)).and_then(|x| x.checked_add(HEADER_LEN));
        if expected != Some(bytes.len()) {
            return Err(format!("length {} does not match {n} rows of dimension {dim}", bytes.len()));
        }
        let values: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let rows = if dim == 0 { vec![Vec::new(); n] } else { values.chunks(dim).map(<[f32]>::to_vec).collect() };
        EmbeddingMatrix::new(dim, rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        EmbeddingMatrix::from_bytes(&bytes).map_err(|message| KareError::Format { path: path.to_path_buf(), message })
    }
}
