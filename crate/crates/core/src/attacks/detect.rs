//! DetectGPT-style input perturbation score. The mask-filling model is
//! replaced by uniform random substitution inside randomly placed spans.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::rng::{stream, Domain};
use crate::diffcore::Objective;
use crate::models::{SequenceModel, TokenSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    pub n_perturbations: u64,
    pub mask_fraction: f64,
    pub span: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            n_perturbations: 10,
            mask_fraction: 0.15,
            span: 2,
            seed: 0,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_perturbations == 0 {
            return Err(Error::invalid("n_perturbations must be at least 1"));
        }
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::invalid("mask_fraction must lie in (0, 1)"));
        }
        if self.span == 0 {
            return Err(Error::invalid("span must be at least 1"));
        }
        Ok(())
    }

    /// `floor(mask_fraction * len / span)`.
    pub fn n_spans(&self, len: usize) -> usize {
        (self.mask_fraction * len as f64 / self.span as f64).floor() as usize
    }
}

fn sequence_key(x: &TokenSequence) -> u64 {
    x.tokens().iter().fold(0x243F_6A88_85A3_08D3u64, |h, &t| {
        (h ^ t as u64)
            .wrapping_mul(0x1000_0000_01b3)
            .rotate_left(17)
    })
}

/// Replaces `n_spans` non-overlapping spans, placed uniformly at random, with
/// tokens drawn uniformly from the rest of the vocabulary. The draw is a pure
/// function of `(cfg.seed, x, draw_index)`.
pub fn perturb_input(
    x: &TokenSequence,
    vocab: usize,
    cfg: &DetectConfig,
    draw_index: u64,
) -> Result<TokenSequence> {
    cfg.validate()?;
    if vocab < 2 {
        return Err(Error::invalid(
            "substitution needs a vocabulary of at least 2",
        ));
    }
    x.check_vocab(vocab)?;
    let k = cfg.n_spans(x.len());
    if k == 0 {
        let min = (cfg.span as f64 / cfg.mask_fraction).ceil() as usize;
        return Err(Error::SequenceTooShort { len: x.len(), min });
    }
    let mut rng = stream(cfg.seed ^ sequence_key(x), Domain::InputMask, draw_index);
    // k spans of length s in n slots <=> k items out of n - k(s - 1).
    let slots = x.len() - k * (cfg.span - 1);
    let mut picks = sample(&mut rng, slots, k).into_vec();
    picks.sort_unstable();
    let mut tokens = x.tokens().to_vec();
    for (i, p) in picks.into_iter().enumerate() {
        let start = p + i * (cfg.span - 1);
        for tok in &mut tokens[start..start + cfg.span] {
            let r = rng.gen_range(0..vocab as u32 - 1);
            *tok = if r >= *tok { r + 1 } else { r };
        }
    }
    Ok(TokenSequence::new(tokens))
}

/// Mean loss increase over perturbed inputs.
pub fn score_against_variants<M>(
    model: &M,
    x: &TokenSequence,
    variants: &[TokenSequence],
) -> Result<f64>
where
    M: Objective<Example = TokenSequence> + ?Sized,
{
    if variants.is_empty() {
        return Err(Error::invalid("no perturbed inputs"));
    }
    let base = model.loss(x)?;
    if !base.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    let mut sum = 0.0;
    for v in variants {
        let l = model.loss(v)?;
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        sum += l - base;
    }
    Ok(sum / variants.len() as f64)
}

/// `(1/n) sum_i [l(x~_i) - l(x)]`; larger means more likely a member.
pub fn detectgpt_score<M>(model: &M, x: &TokenSequence, cfg: &DetectConfig) -> Result<f64>
where
    M: Objective<Example = TokenSequence> + SequenceModel + ?Sized,
{
    let variants = (0..cfg.n_perturbations)
        .map(|i| perturb_input(x, model.vocab_size(), cfg, i))
        .collect::<Result<Vec<_>>>()?;
    score_against_variants(model, x, &variants)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::TableLm;

    fn seq(len: usize) -> TokenSequence {
        TokenSequence::new((0..len as u32).map(|i| (i * 7 + 3) % 11).collect())
    }

    #[test]
    fn twenty_tokens_one_span_of_two() {
        let x = seq(20);
        let cfg = DetectConfig::default();
        for d in 0..50 {
            let y = perturb_input(&x, 11, &cfg, d).unwrap();
            assert_eq!(y.len(), 20);
            let changed: Vec<usize> = (0..20)
                .filter(|&i| x.tokens()[i] != y.tokens()[i])
                .collect();
            assert_eq!(changed.len(), 2, "draw {d}");
            assert_eq!(changed[1], changed[0] + 1);
        }
    }

    #[test]
    fn spans_do_not_overlap_and_replacements_differ() {
        let x = seq(60);
        let cfg = DetectConfig {
            mask_fraction: 0.3,
            span: 3,
            ..Default::default()
        };
        for d in 0..30 {
            let y = perturb_input(&x, 11, &cfg, d).unwrap();
            let changed = (0..60).filter(|&i| x.tokens()[i] != y.tokens()[i]).count();
            assert_eq!(changed, 6 * 3);
        }
    }

    #[test]
    fn too_short_sequence() {
        assert!(matches!(
            perturb_input(&seq(6), 11, &DetectConfig::default(), 0),
            Err(Error::SequenceTooShort { .. })
        ));
    }

    #[test]
    fn deterministic_per_sequence_and_draw() {
        let cfg = DetectConfig::default();
        let a = perturb_input(&seq(40), 11, &cfg, 3).unwrap();
        assert_eq!(a, perturb_input(&seq(40), 11, &cfg, 3).unwrap());
        assert_ne!(a, perturb_input(&seq(40), 11, &cfg, 4).unwrap());
    }

    #[test]
    fn unperturbed_variants_score_zero() {
        let m = TableLm::uniform(11);
        let x = seq(20);
        assert_eq!(
            score_against_variants(&m, &x, &[x.clone(), x.clone()]).unwrap(),
            0.0
        );
    }

    #[test]
    fn uniform_model_scores_zero() {
        let m = TableLm::uniform(11);
        for len in [20, 33, 50] {
            let s = detectgpt_score(&m, &seq(len), &DetectConfig::default()).unwrap();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn chain_model_penalizes_off_chain_tokens() {
        let succ: Vec<u32> = (0..11).map(|t| (t + 1) % 11).collect();
        let m = TableLm::chain(11, succ, 0.01).unwrap();
        let x = TokenSequence::new((0..30u32).map(|i| i % 11).collect());
        assert!(detectgpt_score(&m, &x, &DetectConfig::default()).unwrap() > 0.0);
    }
}
