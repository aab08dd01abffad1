//! Synthetic Markov-chain text with planted canaries.

use std::collections::HashSet;

use anyhow::{bail, ensure, Result};
use mia_core::diffcore::rng::{fill_standard_normal, stream, unit_f64, Domain};
use mia_core::diffcore::softmax;
use mia_core::extraction::PrefixSuffixPair;
use mia_core::models::{Token, TokenSequence};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

/// Transition tables larger than this are refused.
const MAX_TABLE_ROWS: usize = 1 << 20;
/// Minimum canary entropy in bits.
const MIN_CANARY_BITS: f64 = 32.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub sequence_length: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Markov order of the generator.
    pub order: usize,
    /// Scale of the transition logits; 0 gives uniform text.
    pub sharpness: f64,
    pub n_canaries: usize,
    /// Canary tokens shown as the extraction prompt.
    pub canary_prefix: usize,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn from_config(c: &Config, seed: u64) -> Result<Self> {
        Ok(Self {
            vocab_size: c.usize("corpus.vocab_size")?,
            sequence_length: c.usize("corpus.sequence_length")?,
            n_train: c.usize("corpus.n_train")?,
            n_test: c.usize("corpus.n_test")?,
            order: c.usize("corpus.order")?,
            sharpness: c.f64("corpus.sharpness")?,
            n_canaries: c.usize("corpus.n_canaries")?,
            canary_prefix: if c.contains("corpus.canary_prefix") {
                c.usize("corpus.canary_prefix")?
            } else {
                0
            },
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab_size >= 2, "corpus.vocab_size must be at least 2");
        ensure!(
            self.sequence_length >= 2,
            "corpus.sequence_length must be at least 2"
        );
        ensure!(
            self.order >= 1 && self.order < self.sequence_length,
            "corpus.order must lie in [1, sequence_length)"
        );
        ensure!(
            self.sharpness >= 0.0 && self.sharpness.is_finite(),
            "corpus.sharpness must be >= 0"
        );
        let rows = (self.vocab_size as f64).powi(self.order as i32);
        ensure!(
            rows <= MAX_TABLE_ROWS as f64,
            "transition table of {rows} rows is too large"
        );
        if self.n_canaries > 0 {
            let bits = self.sequence_length as f64 * (self.vocab_size as f64).log2();
            if bits < MIN_CANARY_BITS {
                bail!("vocab too small for requested entropy: canaries carry {bits:.1} bits, need {MIN_CANARY_BITS}");
            }
            ensure!(
                self.canary_prefix >= 1 && self.canary_prefix < self.sequence_length,
                "corpus.canary_prefix must lie in [1, sequence_length)"
            );
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCorpus {
    pub spec: CorpusSpec,
    /// Training sequences in id order; canaries included.
    pub train: Vec<(u64, TokenSequence)>,
    pub test: Vec<(u64, TokenSequence)>,
    pub canary_ids: Vec<u64>,
    pub benchmark: Vec<PrefixSuffixPair>,
}

impl TextCorpus {
    pub fn split_hash(&self) -> String {
        split_hash(&self.train, &self.test)
    }

    pub fn train_sequences(&self) -> Vec<TokenSequence> {
        self.train.iter().map(|(_, s)| s.clone()).collect()
    }
}

/// Hash over ids and contents of both splits.
pub fn split_hash<T: Serialize>(train: &[(u64, T)], test: &[(u64, T)]) -> String {
    let mut h = Sha256::new();
    for (tag, split) in [("train", train), ("test", test)] {
        h.update(tag.as_bytes());
        for (id, x) in split {
            h.update(id.to_le_bytes());
            h.update(serde_json::to_vec(x).unwrap());
        }
    }
    hex::encode(h.finalize())
}

fn sample_index(rng: &mut rand_chacha::ChaCha8Rng, probs: &[f64]) -> usize {
    let u = unit_f64(rng);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn transition_table(spec: &CorpusSpec) -> Vec<Vec<f64>> {
    let v = spec.vocab_size;
    let rows = v.pow(spec.order as u32);
    (0..rows)
        .map(|r| {
            let mut rng = stream(spec.seed, Domain::Data, r as u64);
            let mut logits = vec![0.0; v];
            fill_standard_normal(&mut rng, &mut logits);
            logits.iter_mut().for_each(|l| *l *= spec.sharpness);
            softmax(&logits)
        })
        .collect()
}

fn markov_sequence(spec: &CorpusSpec, table: &[Vec<f64>], index: u64) -> Vec<Token> {
    let v = spec.vocab_size;
    let mut rng = stream(spec.seed, Domain::Sample, index);
    let mut seq: Vec<Token> = (0..spec.order)
        .map(|_| (rng.next_u64() % v as u64) as Token)
        .collect();
    while seq.len() < spec.sequence_length {
        let state = seq[seq.len() - spec.order..]
            .iter()
            .fold(0usize, |s, &t| s * v + t as usize);
        seq.push(sample_index(&mut rng, &table[state]) as Token);
    }
    seq
}

fn canary(spec: &CorpusSpec, index: u64) -> Vec<Token> {
    let mut rng = stream(spec.seed, Domain::Sample, (1 << 48) | index);
    (0..spec.sequence_length)
        .map(|_| (rng.next_u64() % spec.vocab_size as u64) as Token)
        .collect()
}

/// Train and test are disjoint draws from one Markov chain; canaries are
/// uniform token strings placed only in train, at seeded positions.
pub fn synth_text_corpus(spec: &CorpusSpec) -> Result<TextCorpus> {
    spec.validate()?;
    let table = transition_table(spec);
    let mut seen = HashSet::new();
    let mut next_index = 0u64;
    let budget = 100 * (spec.n_train + spec.n_test + 10) as u64;
    let mut draw = |seen: &mut HashSet<Vec<Token>>| -> Result<Vec<Token>> {
        loop {
            let s = markov_sequence(spec, &table, next_index);
            next_index += 1;
            if seen.insert(s.clone()) {
                return Ok(s);
            }
            ensure!(
                next_index < budget,
                "generator cannot produce enough distinct sequences"
            );
        }
    };
    let mut natural = Vec::with_capacity(spec.n_train);
    for _ in 0..spec.n_train {
        natural.push(draw(&mut seen)?);
    }
    let mut test_seqs = Vec::with_capacity(spec.n_test);
    for _ in 0..spec.n_test {
        test_seqs.push(draw(&mut seen)?);
    }
    let mut canaries = Vec::with_capacity(spec.n_canaries);
    let mut j = 0;
    while canaries.len() < spec.n_canaries {
        let c = canary(spec, j);
        j += 1;
        if seen.insert(c.clone()) {
            canaries.push(c);
        }
    }

    // Canary k goes to a seeded slot in the combined train list.
    let total = spec.n_train + spec.n_canaries;
    let mut slots: Vec<usize> = (0..total).collect();
    let mut rng = stream(spec.seed, Domain::Shuffle, u64::MAX);
    for i in (1..total).rev() {
        let k = (rng.next_u64() % (i as u64 + 1)) as usize;
        slots.swap(i, k);
    }
    let canary_slots: HashSet<usize> = slots[..spec.n_canaries].iter().copied().collect();
    let mut train = Vec::with_capacity(total);
    let mut canary_ids = Vec::new();
    let (mut nat, mut can) = (natural.into_iter(), canaries.iter());
    for id in 0..total {
        if canary_slots.contains(&id) {
            canary_ids.push(id as u64);
            train.push((id as u64, TokenSequence::new(can.next().unwrap().clone())));
        } else {
            train.push((id as u64, TokenSequence::new(nat.next().unwrap())));
        }
    }
    let test = test_seqs
        .into_iter()
        .enumerate()
        .map(|(i, s)| ((total + i) as u64, TokenSequence::new(s)))
        .collect();
    let benchmark = canary_ids
        .iter()
        .map(|&id| {
            let t = train[id as usize].1.tokens();
            PrefixSuffixPair {
                prefix: TokenSequence::new(t[..spec.canary_prefix].to_vec()),
                suffix: TokenSequence::new(t[spec.canary_prefix..].to_vec()),
            }
        })
        .collect();
    Ok(TextCorpus {
        spec: spec.clone(),
        train,
        test,
        canary_ids,
        benchmark,
    })
}
