//! Score normalization and prediction records.
//!
//! Every cross-model computation works in normalized `[0, 1]` space: MLLM
//! levels live on `[1, 5]`, MOS on whatever scale the manifest declares.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The MLLM rating scale.
pub const MLLM_MIN: f64 = 1.0;
pub const MLLM_MAX: f64 = 5.0;

pub fn normalize_score(s: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::DegenerateRange { lo, hi });
    }
    if !(s >= lo && s <= hi) {
        return Err(Error::OutOfRange { value: s, lo, hi });
    }
    Ok((s - lo) / (hi - lo))
}

pub fn denormalize_score(u: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::DegenerateRange { lo, hi });
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::OutOfRange {
            value: u,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(lo + u * (hi - lo))
}

/// Per-video predictions in normalized space, the unit of evaluation and
/// weight analysis. Serialized one per line in prediction files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionTriple {
    pub video_id: String,
    pub q_p: f64,
    pub q_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_e: Option<f64>,
    /// Fixed-weight blend, written alongside the learned one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_naive: Option<f64>,
    pub mos_norm: f64,
}

impl PredictionTriple {
    /// Checks score ranges and, when both are present, that `q_e` is the
    /// alpha-weighted blend of `q_p` and `q_l`.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::OutOfRange {
                    value: v,
                    lo: 0.0,
                    hi: 1.0,
                })
            }
        };
        unit(self.q_p)?;
        unit(self.q_l)?;
        unit(self.mos_norm)?;
        for v in [self.alpha, self.q_e, self.q_naive].into_iter().flatten() {
            unit(v)?;
        }
        if let (Some(a), Some(e)) = (self.alpha, self.q_e) {
            let expected = a * self.q_p + (1.0 - a) * self.q_l;
            if (expected - e).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "{}: q_e {e} disagrees with blend {expected}",
                    self.video_id
                )));
            }
        }
        Ok(())
    }
}
