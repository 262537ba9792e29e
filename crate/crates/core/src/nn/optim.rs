use alloc::vec::Vec;

use super::{NnError, Parameterized};
use crate::math::sqrtf;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient norm cap; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 1,
            seed: 0,
            optimizer: OptimizerKind::ADAM,
            clip_norm: 5.0,
        }
    }
}

/// Global l2 norm with fixed left-to-right accumulation.
pub fn grad_norm(grads: &[Vec<f64>]) -> f64 {
    let mut acc = 0.0;
    for t in grads {
        for g in t {
            acc += g * g;
        }
    }
    sqrtf(acc)
}

pub fn clip_grads(grads: &mut [Vec<f64>], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let n = grad_norm(grads);
    if n > max_norm {
        let s = max_norm / n;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
}

/// Optimizer with per-tensor moment state matching the model's tensor order.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new<M: Parameterized + ?Sized>(cfg: &TrainConfig, model: &M) -> Optimizer {
        let zeros = model.zero_grads();
        let v = match cfg.optimizer {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam { .. } => zeros.clone(),
        };
        let m = match cfg.optimizer {
            OptimizerKind::Sgd => Vec::new(),
            OptimizerKind::Adam { .. } => zeros,
        };
        Optimizer {
            kind: cfg.optimizer,
            learning_rate: cfg.learning_rate,
            clip_norm: cfg.clip_norm,
            t: 0,
            m,
            v,
        }
    }

    /// Clips `grads` in place and applies one update.
    pub fn apply<M: Parameterized + ?Sized>(&mut self, model: &mut M, grads: &mut [Vec<f64>]) {
        clip_grads(grads, self.clip_norm);
        self.t += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in model.tensors_mut().into_iter().zip(grads.iter()) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - libm::pow(beta1, self.t as f64);
                let bc2 = 1.0 - libm::pow(beta2, self.t as f64);
                for (ti, p) in model.tensors_mut().into_iter().enumerate() {
                    let g = &grads[ti];
                    let m = &mut self.m[ti];
                    let v = &mut self.v[ti];
                    for k in 0..p.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        p[k] -= lr * mh / (sqrtf(vh) + eps);
                    }
                }
            }
        }
    }
}

/// One optimizer step on the mean loss over `batch`. `loss_grad` returns an
/// example's loss and accumulates its gradient into the provided buffers.
pub fn train_step<M, B, F>(model: &mut M, opt: &mut Optimizer, batch: &[B], mut loss_grad: F) -> Result<f64, NnError>
where
    M: Parameterized + ?Sized,
    F: FnMut(&M, &B, &mut [Vec<f64>]) -> f64,
{
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let mut grads = model.zero_grads();
    let mut total = 0.0;
    for ex in batch {
        total += loss_grad(model, ex, &mut grads);
    }
    let scale = 1.0 / batch.len() as f64;
    let mean = total * scale;
    if !mean.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(NnError::NonFiniteLoss);
    }
    grads.iter_mut().flatten().for_each(|g| *g *= scale);
    opt.apply(model, &mut grads);
    Ok(mean)
}
