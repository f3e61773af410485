//! Adam with bias correction and a step-decay learning-rate schedule.

use super::gate::GateModel;
use crate::error::{Error, Result};

/// Learning rate `base · decay^floor(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base: 3e-4,
            decay: 0.95,
            every: 2,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base * self.decay.powi((epoch / self.every.max(1)) as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of `params` against `grads` at learning rate `lr`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                actual: if params.len() != self.m.len() { params.len() } else { grads.len() },
            });
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Applies one Adam update to the gate at the scheduled rate for `epoch`.
pub fn adam_step(
    model: &mut GateModel,
    state: &mut AdamState,
    gradients: &GateModel,
    epoch: usize,
    schedule: &LrSchedule,
) -> Result<()> {
    if gradients.in_dim() != model.in_dim() || gradients.hidden() != model.hidden() {
        return Err(Error::DimensionMismatch {
            expected: model.params().len(),
            actual: gradients.params().len(),
        });
    }
    state.step(model.params_mut(), gradients.params(), schedule.lr(epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_on_square() {
        // m_hat = 2, v_hat = 4, step = 0.1 · 2 / (2 + 1e-8)
        let mut w = [1.0];
        let mut s = AdamState::new(1);
        let g = [2.0 * w[0]];
        s.step(&mut w, &g, 0.1).unwrap();
        assert!((w[0] - (1.0 - 0.1 * 2.0 / (2.0 + 1e-8))).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_null_update() {
        let mut w = [0.3, -0.7];
        let mut s = AdamState::new(2);
        s.step(&mut w, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(w, [0.3, -0.7]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn schedule_decays_every_two_epochs() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 3e-4);
        assert_eq!(s.lr(1), 3e-4);
        assert_eq!(s.lr(2), 3e-4 * 0.95);
        assert!((s.lr(2) / s.lr(0) - 0.95).abs() <= f64::EPSILON);
        assert_eq!(s.lr(2), s.lr(3));
        assert!((s.lr(9) - 3e-4 * 0.95f64.powi(4)).abs() < 1e-18);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
        let mut m = GateModel::zeros(2, 2);
        let mut st = AdamState::new(m.params().len());
        let g = GateModel::zeros(3, 2);
        assert!(adam_step(&mut m, &mut st, &g, 0, &LrSchedule::default()).is_err());
    }
}
