use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffcore::rng::{stream, Domain};
use crate::diffcore::Reparameterize;
use crate::{Error, Result};

/// Adam training recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.004,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 8,
            epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be at least 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    /// Dataset indices in this batch, in the order they were drawn.
    pub batch: Vec<usize>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepRecord>,
    /// Epochs actually run.
    pub epochs_run: usize,
    /// Set when an epoch-end monitor asked to stop early.
    pub stopped_early: bool,
}

impl TrainingLog {
    /// Dataset indices in the order the optimizer consumed them.
    pub fn stream_order(&self) -> Vec<usize> {
        self.steps
            .iter()
            .flat_map(|s| s.batch.iter().copied())
            .collect()
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Minibatch Adam on the mean per-example loss.
///
/// Each epoch visits the data in a seeded permutation; per-example gradients
/// are computed in parallel and summed in batch order, so the result is
/// bit-reproducible. `monitor` runs after every epoch and returns `true` to
/// stop at that epoch boundary.
pub fn train<M, F>(
    model: &M,
    data: &[M::Example],
    cfg: &TrainConfig,
    mut monitor: F,
) -> Result<(M, TrainingLog)>
where
    M: Reparameterize + Sync,
    M::Example: Sync,
    F: FnMut(&M, usize) -> bool,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut current = model.with_params(model.params().clone())?;
    let mut theta = model.params().values().to_vec();
    let mut adam = Adam::new(theta.len());
    let mut log = TrainingLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Domain::Shuffle, epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let per_example: Vec<Result<(f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| current.loss_and_grad_at(&theta, &data[i]))
                .collect();
            let mut grad = vec![0.0; theta.len()];
            let mut loss_sum = 0.0;
            for r in per_example {
                let (l, g) = r?;
                loss_sum += l;
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in grad.iter_mut() {
                *g *= scale;
            }
            let mean_loss = loss_sum * scale;
            if !mean_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged { step });
            }
            adam.step(&mut theta, &grad, cfg);
            log.steps.push(StepRecord {
                step,
                epoch,
                batch: batch.to_vec(),
                mean_loss,
            });
            step += 1;
        }
        current = current.with_params(current.params().with_values(theta.clone())?)?;
        log.epochs_run = epoch + 1;
        if monitor(&current, epoch) {
            log.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    Ok((current, log))
}
