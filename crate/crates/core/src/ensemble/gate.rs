//! The gating network: two fully connected layers with a ReLU between them
//! and a sigmoid on the single output, mapping pooled content features to
//! the blend weight given to the MLLM.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::blend::blend_unchecked;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::rng::StreamKey;

pub const VQGM_MAGIC: &[u8; 4] = b"VQGM";
pub const VQGM_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 128;

/// Parameters stored flat as `[w1 (hidden×in_dim, row-major) | b1 | w2 | b2]`.
/// The same shape doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    in_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

fn param_count(in_dim: usize, hidden: usize) -> usize {
    hidden * in_dim + hidden + hidden + 1
}

/// Overflow-safe logistic function. The result is kept strictly inside
/// `(0, 1)` even where `f64` rounding would saturate.
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

impl GateModel {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        GateModel {
            in_dim,
            hidden,
            params: vec![0.0; param_count(in_dim, hidden)],
        }
    }

    /// Fan-based uniform initialization of both weight matrices, zero biases.
    pub fn init(in_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut model = Self::zeros(in_dim, hidden);
        let mut rng = StreamKey::new("gate-init", seed)
            .u64(in_dim as u64)
            .u64(hidden as u64)
            .rng();
        let l1 = (6.0 / (in_dim + hidden) as f64).sqrt();
        for w in model.w1_mut() {
            *w = rng.random_range(-l1..=l1);
        }
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        for w in model.w2_mut() {
            *w = rng.random_range(-l2..=l2);
        }
        model
    }

    pub fn from_params(in_dim: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        if in_dim == 0 || hidden == 0 {
            return Err(Error::Format("gate dimensions must be >= 1".into()));
        }
        let expected = param_count(in_dim, hidden);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("gate parameters must be finite".into()));
        }
        Ok(GateModel {
            in_dim,
            hidden,
            params,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (w1, rest) = self.params.split_at(self.hidden * self.in_dim);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden);
        (w1, b1, w2, b2[0])
    }

    pub fn w1(&self) -> &[f64] {
        self.split().0
    }

    pub fn b1(&self) -> &[f64] {
        self.split().1
    }

    pub fn w2(&self) -> &[f64] {
        self.split().2
    }

    pub fn b2(&self) -> f64 {
        self.split().3
    }

    fn w1_mut(&mut self) -> &mut [f64] {
        let n = self.hidden * self.in_dim;
        &mut self.params[..n]
    }

    fn w2_mut(&mut self) -> &mut [f64] {
        let start = self.hidden * self.in_dim + self.hidden;
        &mut self.params[start..start + self.hidden]
    }

    pub fn set_b2(&mut self, v: f64) {
        let last = self.params.len() - 1;
        self.params[last] = v;
    }

    fn check_features(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                actual: features.len(),
            });
        }
        Ok(())
    }

    /// Hidden pre-activations and the output logit.
    fn forward(&self, features: &[f64]) -> (Vec<f64>, f64) {
        let (w1, b1, w2, b2) = self.split();
        let pre: Vec<f64> = w1
            .chunks_exact(self.in_dim)
            .zip(b1)
            .map(|(row, b)| row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect();
        let logit = pre.iter().zip(w2).map(|(a, w)| a.max(0.0) * w).sum::<f64>() + b2;
        (pre, logit)
    }

    /// The MLLM's blend weight for a video with these pooled features.
    pub fn predict_alpha(&self, features: &[f64]) -> Result<f64> {
        self.check_features(features)?;
        Ok(sigmoid(self.forward(features).1))
    }

    /// Checkpoint bytes: magic `VQGM`, version, `in_dim`, `hidden` as
    /// little-endian `u32`, then every parameter as little-endian `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.len() * 4);
        out.extend_from_slice(VQGM_MAGIC);
        for v in [VQGM_VERSION, self.in_dim as u32, self.hidden as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format("VQGM header truncated".into()));
        }
        if &bytes[..4] != VQGM_MAGIC {
            return Err(Error::Format("bad VQGM magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        if word(0) != VQGM_VERSION as usize {
            return Err(Error::Format(format!("unsupported VQGM version {}", word(0))));
        }
        let (in_dim, hidden) = (word(1), word(2));
        let payload = &bytes[16..];
        let expected = param_count(in_dim, hidden) * 4;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "VQGM payload size mismatch: header implies {expected} bytes, found {}",
                payload.len()
            )));
        }
        let params = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::from_params(in_dim, hidden, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One training example. The two predictions are fixed inputs; only the
/// gate is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRecord {
    pub video_id: String,
    pub features: Vec<f64>,
    pub q_p: f64,
    pub q_l: f64,
    pub mos_norm: f64,
}

/// Mean squared error of the blended score over `batch`, with the gradient
/// of that loss for every gate parameter.
pub fn loss_and_gradients(model: &GateModel, batch: &[TrainingRecord]) -> Result<(f64, GateModel)> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    let (_, _, w2, _) = model.split();
    let n = batch.len() as f64;
    let mut grad = GateModel::zeros(model.in_dim, model.hidden);
    let (in_dim, hidden) = (model.in_dim, model.hidden);
    let mut loss = 0.0;
    for rec in batch {
        model.check_features(&rec.features)?;
        let (pre, logit) = model.forward(&rec.features);
        let alpha = sigmoid(logit);
        let q_e = blend_unchecked(alpha, rec.q_p, rec.q_l);
        let err = q_e - rec.mos_norm;
        loss += err * err;

        let d_alpha = 2.0 * err * (rec.q_p - rec.q_l) / n;
        let d_logit = d_alpha * alpha * (1.0 - alpha);
        if d_logit == 0.0 {
            continue;
        }
        let g = &mut grad.params;
        let b1_at = hidden * in_dim;
        let w2_at = b1_at + hidden;
        for j in 0..hidden {
            let h = pre[j].max(0.0);
            g[w2_at + j] += d_logit * h;
            if pre[j] > 0.0 {
                let d_pre = d_logit * w2[j];
                g[b1_at + j] += d_pre;
                for (gw, x) in g[j * in_dim..(j + 1) * in_dim].iter_mut().zip(&rec.features) {
                    *gw += d_pre * x;
                }
            }
        }
        g[w2_at + hidden] += d_logit;
    }
    Ok((loss / n, grad))
}
