//! Model-perturbation score: mean loss increase at `x` when isotropic
//! Gaussian noise is added to every parameter.
//!
//! The `n` perturbed parameter sets are a function of the config alone, so a
//! batch of examples is scored against the same perturbed models. Draws whose
//! loss is not finite are dropped from that example's mean and counted.
//!
//! With `antithetic` set, every noise draw is used as both `+eps` and `-eps`.
//! The expectation is unchanged but the first-order term `g . eps` cancels
//! exactly, which matters when `sigma` is small.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{NoiseSpec, Parametric};
use crate::{Error, Result};

/// Draws are materialized this many at a time.
const DRAW_CHUNK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MopeConfig {
    pub sigma: f64,
    pub n_perturbations: u64,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

impl Default for MopeConfig {
    fn default() -> Self {
        Self {
            sigma: 0.005,
            n_perturbations: 20,
            seed: 0,
            antithetic: false,
        }
    }
}

impl MopeConfig {
    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.sigma, self.n_perturbations, self.seed)
    }
}

/// Pairs each draw of `inner` with its negation: draw `2k` is `+eps_k`,
/// draw `2k + 1` is `-eps_k`.
pub struct Antithetic<S>(pub S);

impl<S: NoiseSource> NoiseSource for Antithetic<S> {
    fn n_draws(&self) -> u64 {
        2 * self.0.n_draws()
    }

    fn fill(&self, draw: u64, out: &mut [f64]) -> Result<()> {
        if draw >= self.n_draws() {
            return Err(Error::DrawOutOfRange {
                index: draw,
                n_draws: self.n_draws(),
            });
        }
        self.0.fill(draw / 2, out)?;
        if draw % 2 == 1 {
            out.iter_mut().for_each(|v| *v = -*v);
        }
        Ok(())
    }
}

/// Where perturbations come from. [`NoiseSpec`] is the production source.
pub trait NoiseSource: Sync {
    fn n_draws(&self) -> u64;
    fn fill(&self, draw: u64, out: &mut [f64]) -> Result<()>;
}

impl NoiseSource for NoiseSpec {
    fn n_draws(&self) -> u64 {
        NoiseSpec::n_draws(self)
    }

    fn fill(&self, draw: u64, out: &mut [f64]) -> Result<()> {
        self.noise_into(draw, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MopeOutcome {
    pub score: f64,
    pub used_draws: u64,
    pub excluded_draws: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MopeBatch {
    pub outcomes: Vec<Result<MopeOutcome>>,
    /// Fingerprint of each perturbed parameter set, in draw order.
    pub draw_log: Vec<u64>,
}

impl MopeBatch {
    pub fn excluded_draws(&self) -> u64 {
        self.outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok())
            .map(|o| o.excluded_draws)
            .sum()
    }
}

fn fingerprint(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Scores every example against the same perturbed models.
pub fn mope_batch_with<M, S>(model: &M, xs: &[M::Example], source: &S) -> Result<MopeBatch>
where
    M: Parametric + Sync,
    M::Example: Sync,
    S: NoiseSource + ?Sized,
{
    let theta = model.params().values();
    let n = source.n_draws();
    if n == 0 {
        return Err(Error::invalid("at least one perturbation is required"));
    }
    let base: Vec<Result<f64>> = xs
        .par_iter()
        .map(|x| {
            let l = model.loss_at(theta, x)?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::NonFiniteLoss)
            }
        })
        .collect();

    let n_ex = xs.len();
    let mut sums = vec![0.0; n_ex];
    let mut used = vec![0u64; n_ex];
    let mut excluded = vec![0u64; n_ex];
    let mut draw_log = Vec::with_capacity(n as usize);

    let mut start = 0;
    while start < n {
        let draws: Vec<u64> = (start..(start + DRAW_CHUNK).min(n)).collect();
        let perturbed: Vec<Vec<f64>> = draws
            .par_iter()
            .map(|&d| {
                let mut buf = vec![0.0; theta.len()];
                source.fill(d, &mut buf)?;
                for (b, t) in buf.iter_mut().zip(theta) {
                    *b += t;
                }
                Ok(buf)
            })
            .collect::<Result<_>>()?;
        draw_log.extend(perturbed.iter().map(|p| fingerprint(p)));

        // losses[d * n_ex + e]
        let losses: Vec<Option<f64>> = (0..draws.len() * n_ex)
            .into_par_iter()
            .map(|k| {
                let (d, e) = (k / n_ex, k % n_ex);
                if base[e].is_err() {
                    return None;
                }
                model
                    .loss_at(&perturbed[d], &xs[e])
                    .ok()
                    .filter(|l| l.is_finite())
            })
            .collect();
        for e in 0..n_ex {
            let Ok(b) = base[e] else { continue };
            let mut chunk_sum = 0.0;
            for d in 0..draws.len() {
                match losses[d * n_ex + e] {
                    Some(l) => {
                        chunk_sum += l - b;
                        used[e] += 1;
                    }
                    None => excluded[e] += 1,
                }
            }
            sums[e] += chunk_sum;
        }
        start += DRAW_CHUNK;
    }

    let outcomes = base
        .into_iter()
        .enumerate()
        .map(|(e, b)| {
            b?;
            if used[e] == 0 {
                return Err(Error::NonFiniteLoss);
            }
            Ok(MopeOutcome {
                score: sums[e] / used[e] as f64,
                used_draws: used[e],
                excluded_draws: excluded[e],
            })
        })
        .collect();
    Ok(MopeBatch { outcomes, draw_log })
}

pub fn mope_batch<M>(model: &M, xs: &[M::Example], cfg: &MopeConfig) -> Result<MopeBatch>
where
    M: Parametric + Sync,
    M::Example: Sync,
{
    let spec = cfg.noise_spec()?;
    if cfg.antithetic {
        mope_batch_with(model, xs, &Antithetic(spec))
    } else {
        mope_batch_with(model, xs, &spec)
    }
}

/// `(1/n) sum_i [l(x, theta + eps_i) - l(x, theta)]` for one example.
pub fn mope_score<M>(model: &M, x: &M::Example, cfg: &MopeConfig) -> Result<f64>
where
    M: Parametric + Sync,
    M::Example: Sync + Clone,
{
    let batch = mope_batch(model, std::slice::from_ref(x), cfg)?;
    batch.outcomes.into_iter().next().unwrap().map(|o| o.score)
}
