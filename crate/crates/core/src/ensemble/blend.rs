use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::PredictionTriple;

pub const NAIVE_ALPHA: f64 = 0.5;

/// `alpha·q_p + (1 − alpha)·q_l`, kept within `[min, max]` of the two inputs
/// and exact at the endpoints and when both predictions agree.
pub(crate) fn blend_unchecked(alpha: f64, q_p: f64, q_l: f64) -> f64 {
    if alpha == 1.0 || q_p == q_l {
        return q_p;
    }
    if alpha == 0.0 {
        return q_l;
    }
    let e = alpha * q_p + (1.0 - alpha) * q_l;
    e.clamp(q_p.min(q_l), q_p.max(q_l))
}

pub fn blend(alpha: f64, q_p: f64, q_l: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange {
            value: alpha,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(blend_unchecked(alpha, q_p, q_l))
}

/// The fixed equal-weight combination.
pub fn naive_blend(q_p: f64, q_l: f64) -> f64 {
    blend_unchecked(NAIVE_ALPHA, q_p, q_l)
}

/// Whether the MLLM pulled the blend above (`Up`) or below (`Down`) the
/// conventional model's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFinding {
    pub video_id: String,
    pub alpha: f64,
    pub q_p: f64,
    pub q_l: f64,
    pub delta: f64,
    pub direction: Direction,
}

impl WeightFinding {
    /// Sort key: large MLLM weight on a large disagreement.
    pub fn salience(&self) -> f64 {
        self.alpha * self.delta
    }
}

/// Videos where the learned weight on the MLLM is at least `alpha_min` and
/// the two predictions differ by at least `delta_min`, most salient first.
pub fn analyze_weights(
    triples: &[PredictionTriple],
    alpha_min: f64,
    delta_min: f64,
) -> Result<Vec<WeightFinding>> {
    let mut out = Vec::new();
    for t in triples {
        let alpha = t.alpha.ok_or_else(|| Error::MissingVideo {
            video_id: t.video_id.clone(),
            what: "alpha".into(),
        })?;
        let delta = (t.q_p - t.q_l).abs();
        if alpha < alpha_min || delta < delta_min {
            continue;
        }
        let direction = match t.q_p.partial_cmp(&t.q_l) {
            Some(Ordering::Greater) => Direction::Up,
            Some(Ordering::Less) => Direction::Down,
            _ => Direction::Even,
        };
        out.push(WeightFinding {
            video_id: t.video_id.clone(),
            alpha,
            q_p: t.q_p,
            q_l: t.q_l,
            delta,
            direction,
        });
    }
    out.sort_by(|a, b| {
        b.salience()
            .total_cmp(&a.salience())
            .then_with(|| a.video_id.cmp(&b.video_id))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(id: &str, alpha: Option<f64>, q_p: f64, q_l: f64) -> PredictionTriple {
        PredictionTriple {
            video_id: id.into(),
            q_p,
            q_l,
            alpha,
            q_e: None,
            q_naive: None,
            mos_norm: 0.5,
        }
    }

    #[test]
    fn blend_examples() {
        assert_eq!(blend(0.5, 4.0, 2.0).unwrap(), 3.0);
        assert_eq!(blend(1.0, 0.37, 0.91).unwrap(), 0.37);
        assert_eq!(blend(0.0, 0.37, 0.91).unwrap(), 0.91);
        assert!((blend(0.25, 0.8, 0.4).unwrap() - 0.5).abs() < 1e-15);
        assert!(blend(1.2, 0.1, 0.2).is_err());
        assert!(blend(-0.1, 0.1, 0.2).is_err());
    }

    #[test]
    fn naive_examples() {
        assert_eq!(naive_blend(4.0, 2.0), 3.0);
        assert_eq!(naive_blend(0.123, 0.123), 0.123);
        assert_eq!(naive_blend(0.9, 0.1), 0.5);
    }

    #[test]
    fn analysis_filters_and_directions() {
        let found = analyze_weights(&[triple("a", Some(0.9), 0.8, 0.2)], 0.6, 0.1).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].direction, Direction::Up);

        let found = analyze_weights(&[triple("b", Some(0.1), 0.8, 0.2)], 0.6, 0.1).unwrap();
        assert!(found.is_empty());

        let found = analyze_weights(&[triple("c", Some(0.7), 0.1, 0.6)], 0.6, 0.1).unwrap();
        assert_eq!(found[0].direction, Direction::Down);

        let found = analyze_weights(&[triple("d", Some(0.95), 0.5, 0.55)], 0.6, 0.1).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn analysis_ordering() {
        let found = analyze_weights(
            &[triple("low", Some(0.8), 0.7, 0.2), triple("high", Some(0.9), 0.8, 0.2)],
            0.6,
            0.1,
        )
        .unwrap();
        let ids: Vec<_> = found.iter().map(|f| f.video_id.as_str()).collect();
        assert_eq!(ids, ["high", "low"]);
        assert!((found[0].salience() - 0.54).abs() < 1e-12);
        assert!((found[1].salience() - 0.40).abs() < 1e-12);
    }

    #[test]
    fn analysis_needs_alpha() {
        assert!(analyze_weights(&[triple("x", None, 0.1, 0.2)], 0.6, 0.1).is_err());
    }
}
