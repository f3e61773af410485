//! VQEF embedding files and spatial pooling.
//!
//! Layout, all little-endian: magic `VQEF`, version `u32 = 1`, then
//! `m, grid_h, grid_w, dim` as `u32`, then `m·grid_h·grid_w·dim` `f32`
//! values ordered frame → row → col → channel.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const VQEF_MAGIC: &[u8; 4] = b"VQEF";
pub const VQEF_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 5;

/// Vision-encoder features of a video's key frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBlock {
    pub video_id: String,
    pub m: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl EmbeddingBlock {
    pub fn new(
        video_id: impl Into<String>,
        m: usize,
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if m == 0 || grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(Error::Format(format!(
                "embedding shape {m}x{grid_h}x{grid_w}x{dim} has a zero extent"
            )));
        }
        let expected = m * grid_h * grid_w * dim;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingBlock {
            video_id: video_id.into(),
            m,
            grid_h,
            grid_w,
            dim,
            data,
        })
    }

    /// Length of the pooled feature vector.
    pub fn pooled_len(&self) -> usize {
        self.m * self.dim
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(VQEF_MAGIC);
        for v in [VQEF_VERSION, self.m as u32, self.grid_h as u32, self.grid_w as u32, self.dim as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(video_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!("VQEF header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != VQEF_MAGIC {
            return Err(Error::Format("bad VQEF magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != VQEF_VERSION {
            return Err(Error::Format(format!("unsupported VQEF version {}", word(0))));
        }
        let (m, grid_h, grid_w, dim) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
        let expected = m
            .checked_mul(grid_h)
            .and_then(|v| v.checked_mul(grid_w))
            .and_then(|v| v.checked_mul(dim))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("VQEF shape overflows".into()))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "VQEF payload size mismatch: header implies {expected} bytes, found {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingBlock::new(video_id, m, grid_h, grid_w, dim, data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }
}

/// Reads a VQEF file; the video id is the file stem.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingBlock> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    EmbeddingBlock::from_bytes(id, &bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Averages each frame over its spatial grid and concatenates the per-frame
/// `dim` vectors in frame order.
pub fn pool_features(block: &EmbeddingBlock) -> Vec<f64> {
    let cells = block.grid_h * block.grid_w;
    let mut out = vec![0.0; block.pooled_len()];
    for (frame, chunk) in block.data.chunks_exact(cells * block.dim).enumerate() {
        let acc = &mut out[frame * block.dim..(frame + 1) * block.dim];
        for cell in chunk.chunks_exact(block.dim) {
            for (a, &v) in acc.iter_mut().zip(cell) {
                *a += f64::from(v);
            }
        }
        for a in acc.iter_mut() {
            *a /= cells as f64;
        }
    }
    out
}
