use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState, LrSchedule};
use super::gate::{loss_and_gradients, GateModel, TrainingRecord, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: DEFAULT_HIDDEN,
            lr: 3e-4,
            lr_decay: 0.95,
            decay_every: 2,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            decay: self.lr_decay,
            every: self.decay_every,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("hidden", self.hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("decay_every", self.decay_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("ensemble.{name} must be >= 1")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("ensemble.lr {} must be positive", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("ensemble.lr_decay {} must be in (0, 1]", self.lr_decay)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-record loss over the epoch's minibatches, each evaluated
    /// before its update.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGate {
    pub model: GateModel,
    pub epochs: Vec<EpochLog>,
}

/// Trains the gate with shuffled minibatches (the final partial batch is
/// kept). Fixed seed and records give bit-identical parameters.
pub fn train(records: &[TrainingRecord], config: &TrainConfig) -> Result<TrainedGate> {
    config.validate()?;
    let first = records.first().ok_or(Error::Empty("training set"))?;
    let in_dim = first.features.len();
    if let Some(bad) = records.iter().find(|r| r.features.len() != in_dim) {
        return Err(Error::DimensionMismatch {
            expected: in_dim,
            actual: bad.features.len(),
        });
    }
    let mut model = GateModel::init(in_dim, config.hidden, config.seed);
    let mut state = AdamState::new(model.params().len());
    let schedule = config.schedule();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        let mut rng = StreamKey::new("shuffle", config.seed).u64(epoch as u64).rng();
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| records[i].clone()));
            let (loss, grads) = loss_and_gradients(&model, &batch)?;
            total += loss * chunk.len() as f64;
            adam_step(&mut model, &mut state, &grads, epoch, &schedule)?;
        }
        log.push(EpochLog {
            epoch,
            lr: schedule.lr(epoch),
            loss: total / records.len() as f64,
        });
    }
    Ok(TrainedGate { model, epochs: log })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, target: impl Fn(usize, f64, f64) -> f64) -> Vec<TrainingRecord> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let q_p = 0.1 + 0.8 * t;
                let q_l = if i % 2 == 0 { q_p - 0.3 } else { q_p + 0.3 }.clamp(0.0, 1.0);
                let q_l = if (q_l - q_p).abs() < 0.2 { 1.0 - q_p } else { q_l };
                let cluster = if i % 3 == 0 { 1.0 } else { -1.0 };
                TrainingRecord {
                    video_id: format!("v{i}"),
                    features: vec![cluster, 0.5 * t, 1.0, -cluster * 0.3],
                    q_p,
                    q_l,
                    mos_norm: target(i, q_p, q_l),
                }
            })
            .collect()
    }

    fn fast() -> TrainConfig {
        TrainConfig {
            hidden: 16,
            lr: 0.05,
            epochs: 200,
            batch_size: 8,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn mean_alpha(model: &GateModel, recs: &[TrainingRecord]) -> f64 {
        recs.iter().map(|r| model.predict_alpha(&r.features).unwrap()).sum::<f64>() / recs.len() as f64
    }

    #[test]
    fn learns_to_trust_mllm() {
        let recs = synthetic(40, |_, q_p, _| q_p);
        let trained = train(&recs, &fast()).unwrap();
        assert!(mean_alpha(&trained.model, &recs) > 0.9);
        assert!(trained.epochs.last().unwrap().loss < trained.epochs[0].loss);
    }

    #[test]
    fn learns_to_trust_conventional_model() {
        let recs = synthetic(40, |_, _, q_l| q_l);
        let trained = train(&recs, &fast()).unwrap();
        assert!(mean_alpha(&trained.model, &recs) < 0.1);
    }

    #[test]
    fn separates_content_clusters() {
        let recs = synthetic(60, |i, q_p, q_l| if i % 3 == 0 { q_p } else { q_l });
        let trained = train(&recs, &fast()).unwrap();
        let (a, b): (Vec<_>, Vec<_>) = recs.iter().cloned().partition(|r| r.features[0] > 0.0);
        let (ma, mb) = (mean_alpha(&trained.model, &a), mean_alpha(&trained.model, &b));
        assert!(ma > 0.5 && 0.5 > mb, "{ma} {mb}");
    }

    #[test]
    fn deterministic_for_seed() {
        let recs = synthetic(20, |_, q_p, _| q_p);
        let cfg = TrainConfig {
            epochs: 3,
            ..fast()
        };
        let a = train(&recs, &cfg).unwrap().model;
        let b = train(&recs, &cfg).unwrap().model;
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(matches!(train(&[], &fast()), Err(Error::Empty(_))));
        let mut recs = synthetic(4, |_, q_p, _| q_p);
        recs[2].features.push(0.0);
        assert!(train(&recs, &fast()).is_err());
    }

    #[test]
    fn default_recipe() {
        let c = TrainConfig::default();
        assert_eq!((c.hidden, c.epochs, c.batch_size, c.decay_every), (128, 10, 32, 2));
        assert_eq!((c.lr, c.lr_decay), (3e-4, 0.95));
    }
}
