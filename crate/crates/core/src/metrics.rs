//! Spearman rank (SRCC) and Pearson linear (PLCC) correlation.
//!
//! PLCC is computed on raw scores without any nonlinear remapping. Ties get
//! the average of the ranks they occupy.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("correlation undefined for constant input")]
    ConstantInput,
    #[error("non-finite input")]
    NonFinite,
}

pub fn rankify(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.is_empty() {
        return Err(MetricError::Empty);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    Ok(ranks)
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricError::TooFew(x.len()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y)?;
    plcc(&rankify(x)?, &rankify(y)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub srcc: f64,
    pub plcc: f64,
    pub n: usize,
}

impl MetricPair {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self, MetricError> {
        Ok(MetricPair {
            srcc: srcc(pred, truth)?,
            plcc: plcc(pred, truth)?,
            n: pred.len(),
        })
    }
}

/// `SRCC / PLCC` to three decimals, as in the result tables.
impl fmt::Display for MetricPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} / {:.3}", self.srcc, self.plcc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rankify(&[10.0, 20.0, 30.0]).unwrap(), [1.0, 2.0, 3.0]);
        assert_eq!(rankify(&[5.0, 5.0]).unwrap(), [1.5, 1.5]);
        assert_eq!(rankify(&[3.0, 1.0, 3.0, 2.0]).unwrap(), [3.5, 1.0, 3.5, 2.0]);
        assert_eq!(rankify(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn plcc_examples() {
        let x = [0.3, -1.0, 2.5, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((plcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((plcc(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!((plcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn srcc_examples() {
        let x = [0.1, 0.5, 2.0, 9.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp() * 3.0).collect();
        assert!((srcc(&x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((srcc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(plcc(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::ConstantInput));
        assert_eq!(srcc(&[1.0, 2.0], &[4.0, 4.0]), Err(MetricError::ConstantInput));
        assert_eq!(plcc(&[1.0], &[1.0]), Err(MetricError::TooFew(1)));
        assert_eq!(plcc(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1)));
        assert_eq!(plcc(&[1.0, f64::NAN], &[1.0, 2.0]), Err(MetricError::NonFinite));
    }

    #[test]
    fn table_format() {
        let pair = MetricPair {
            srcc: 0.6774,
            plcc: 0.6786,
            n: 10,
        };
        assert_eq!(pair.to_string(), "0.677 / 0.679");
        let neg = MetricPair {
            srcc: -1.0,
            plcc: -0.99999,
            n: 3,
        };
        assert_eq!(neg.to_string(), "-1.000 / -1.000");
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..30).prop_flat_map(|n| {
            (
                proptest::collection::vec(-50.0f64..50.0, n),
                proptest::collection::vec(-50.0f64..50.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn srcc_monotone_invariance((x, y) in arb_pair(), a in 0.1f64..3.0, b in -5.0f64..5.0) {
            let base = srcc(&x, &y);
            prop_assume!(base.is_ok());
            let gx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() * a + b).collect();
            let hy: Vec<f64> = y.iter().map(|v| v.powi(3) + v).collect();
            prop_assert!((srcc(&gx, &hy).unwrap() - base.unwrap()).abs() < 1e-9);
        }

        #[test]
        fn plcc_affine_invariance((x, y) in arb_pair(), a in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0], b in -5.0f64..5.0) {
            let base = plcc(&x, &y);
            prop_assume!(base.is_ok());
            let ax: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((plcc(&ax, &y).unwrap() - a.signum() * base.unwrap()).abs() < 1e-9);
        }
    }
}
