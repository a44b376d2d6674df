use std::f64::consts::PI;

use super::net::{ClassifierState, Real};

/// Cosine decay from `lr0` at step 0 to zero at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub lr0: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.lr0;
        }
        let t = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        0.5 * self.lr0 * (1.0 + (PI * t).cos())
    }
}

/// Heavy-ball SGD: `v ← μ·v + g`, `φ ← φ − lr·v`. No weight decay.
pub fn sgd_momentum_step<T: Real>(
    state: &mut ClassifierState<T>,
    grad: &[T],
    lr: f64,
    momentum: f64,
) {
    let lr = T::of(lr);
    let mu = T::of(momentum);
    for ((p, v), &g) in state
        .params
        .iter_mut()
        .zip(state.momentum.iter_mut())
        .zip(grad)
    {
        *v = mu * *v + g;
        *p = *p - lr * *v;
    }
}
