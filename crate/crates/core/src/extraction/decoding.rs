//! Candidate sampling: repetition penalty -> temperature -> top-k -> nucleus
//! -> typical -> renormalize -> sample.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::rng::unit_f64;
use crate::diffcore::softmax;
use crate::models::Token;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    /// `None` disables the top-k filter.
    pub top_k: Option<usize>,
    pub nucleus_mass: f64,
    pub typical_mass: f64,
    pub temperature: f64,
    pub repetition_penalty: f64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            top_k: Some(24),
            nucleus_mass: 0.8,
            typical_mass: 0.9,
            temperature: 0.58,
            repetition_penalty: 1.04,
        }
    }
}

impl DecodingParams {
    /// Plain softmax sampling at `temperature`.
    pub fn plain(temperature: f64) -> Self {
        Self {
            top_k: None,
            nucleus_mass: 1.0,
            typical_mass: 1.0,
            temperature,
            repetition_penalty: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == Some(0) {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        if !(self.nucleus_mass > 0.0 && self.nucleus_mass <= 1.0) {
            return Err(Error::invalid("nucleus_mass must lie in (0, 1]"));
        }
        if !(self.typical_mass > 0.0 && self.typical_mass <= 1.0) {
            return Err(Error::invalid("typical_mass must lie in (0, 1]"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::invalid("repetition_penalty must be >= 1"));
        }
        Ok(())
    }
}

/// Sampling distribution after all filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtered {
    pub probs: Vec<f64>,
    /// Filtering left no mass and the argmax token was used instead.
    pub fallback: bool,
}

/// Indices sorted by `key` ascending, ties by lower index.
fn sorted_by(indices: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut idx = indices.to_vec();
    idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    idx
}

/// Keeps a prefix of `order` until its mass reaches `mass` (the crossing
/// token is kept, so at least one token always survives).
fn keep_mass(probs: &mut [f64], order: &[usize], mass: f64) {
    let total: f64 = order.iter().map(|&i| probs[i]).sum();
    let mut cum = 0.0;
    let mut cut = order.len();
    for (n, &i) in order.iter().enumerate() {
        cum += probs[i] / total;
        if cum >= mass {
            cut = n + 1;
            break;
        }
    }
    for &i in &order[cut..] {
        probs[i] = 0.0;
    }
}

fn renormalize(probs: &mut [f64]) -> bool {
    let total: f64 = probs.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return false;
    }
    for p in probs.iter_mut() {
        *p /= total;
    }
    true
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.total_cmp(&v[best]).is_gt() {
            best = i;
        }
    }
    best
}

pub fn filtered_distribution(
    logits: &[f64],
    history: &[Token],
    params: &DecodingParams,
) -> Result<Filtered> {
    params.validate()?;
    if logits.is_empty() {
        return Err(Error::invalid("empty logits"));
    }
    let mut adjusted = logits.to_vec();
    if params.repetition_penalty > 1.0 {
        let shift = params.repetition_penalty.ln();
        let mut seen = vec![false; adjusted.len()];
        for &t in history {
            if let Some(s) = seen.get_mut(t as usize) {
                if !*s {
                    *s = true;
                    adjusted[t as usize] -= shift;
                }
            }
        }
    }
    for l in adjusted.iter_mut() {
        *l /= params.temperature;
    }
    let mut probs = softmax(&adjusted);
    if probs.iter().any(|p| !p.is_finite()) || !renormalize(&mut probs) {
        let mut one_hot = vec![0.0; logits.len()];
        one_hot[argmax(logits)] = 1.0;
        return Ok(Filtered {
            probs: one_hot,
            fallback: true,
        });
    }

    let live =
        |probs: &[f64]| -> Vec<usize> { (0..probs.len()).filter(|&i| probs[i] > 0.0).collect() };

    if let Some(k) = params.top_k {
        let order = sorted_by(&live(&probs), |i| -probs[i]);
        for &i in order.iter().skip(k) {
            probs[i] = 0.0;
        }
        renormalize(&mut probs);
    }

    if params.nucleus_mass < 1.0 {
        let order = sorted_by(&live(&probs), |i| -probs[i]);
        keep_mass(&mut probs, &order, params.nucleus_mass);
        renormalize(&mut probs);
    }

    if params.typical_mass < 1.0 {
        let support = live(&probs);
        let entropy: f64 = support.iter().map(|&i| -probs[i] * probs[i].ln()).sum();
        let snapshot = probs.clone();
        let order = sorted_by(&support, |i| (-snapshot[i].ln() - entropy).abs());
        keep_mass(&mut probs, &order, params.typical_mass);
        renormalize(&mut probs);
    }

    if !renormalize(&mut probs) {
        let mut one_hot = vec![0.0; logits.len()];
        one_hot[argmax(logits)] = 1.0;
        return Ok(Filtered {
            probs: one_hot,
            fallback: true,
        });
    }
    Ok(Filtered {
        probs,
        fallback: false,
    })
}

/// Draws one token; returns it with the fallback flag.
pub fn sample_next(
    logits: &[f64],
    history: &[Token],
    params: &DecodingParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Token, bool)> {
    let f = filtered_distribution(logits, history, params)?;
    let u = unit_f64(rng);
    let mut cum = 0.0;
    let mut last_live = 0;
    for (i, p) in f.probs.iter().enumerate() {
        if *p > 0.0 {
            last_live = i;
            cum += p;
            if u < cum {
                return Ok((i as Token, f.fallback));
            }
        }
    }
    Ok((last_live as Token, f.fallback))
}
