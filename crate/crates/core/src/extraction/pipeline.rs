use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::decoding::DecodingParams;
use crate::attacks::{loss_attack, mope_batch, MopeConfig};
use crate::diffcore::rng::{stream, Domain};
use crate::diffcore::Parametric;
use crate::metrics::{auc, fmt_f64, roc};
use crate::models::{generate, SequenceModel, Token, TokenSequence};
use crate::{Error, Result};

/// A prompt and its ground-truth continuation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixSuffixPair {
    pub prefix: TokenSequence,
    pub suffix: TokenSequence,
}

/// One benchmark record per line: `{"prefix":[...],"suffix":[...]}`.
pub fn write_benchmark(pairs: &[PrefixSuffixPair]) -> String {
    pairs
        .iter()
        .map(|p| serde_json::to_string(p).expect("pair serializes") + "\n")
        .collect()
}

pub fn read_benchmark(text: &str) -> Result<Vec<PrefixSuffixPair>> {
    let pairs: Vec<PrefixSuffixPair> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Parse(format!("benchmark line {}: {e}", i + 1)))
        })
        .collect::<Result<_>>()?;
    check_suffix_lengths(&pairs)?;
    Ok(pairs)
}

fn check_suffix_lengths(pairs: &[PrefixSuffixPair]) -> Result<usize> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::invalid("benchmark is empty"))?;
    let len = first.suffix.len();
    if len == 0 {
        return Err(Error::invalid("suffixes must be non-empty"));
    }
    if pairs.iter().any(|p| p.suffix.len() != len) {
        return Err(Error::invalid(
            "all suffixes in a benchmark must have the same length",
        ));
    }
    Ok(len)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub suffix: Vec<Token>,
    /// Attack score, set by ranking.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrefixCandidates {
    pub prefix: Vec<Token>,
    pub truth: Vec<Token>,
    pub candidates: Vec<Candidate>,
    /// Index of the best-ranked candidate.
    pub selected: Option<usize>,
}

impl PrefixCandidates {
    pub fn selected_candidate(&self) -> Option<&Candidate> {
        self.selected.map(|i| &self.candidates[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub prefixes: Vec<PrefixCandidates>,
    /// Sampling steps that fell back to argmax.
    pub fallbacks: usize,
}

/// Samples `n` suffixes (of the true-suffix length) per prefix. Prefix `i`
/// draws from its own stream, so the result does not depend on scheduling.
pub fn generate_candidates<M>(
    lm: &M,
    pairs: &[PrefixSuffixPair],
    n: usize,
    decoding: &DecodingParams,
    seed: u64,
) -> Result<CandidateSet>
where
    M: SequenceModel + Sync,
{
    if n == 0 {
        return Err(Error::invalid("need at least one candidate per prefix"));
    }
    let len = check_suffix_lengths(pairs)?;
    decoding.validate()?;
    let per_prefix: Vec<(PrefixCandidates, usize)> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = stream(seed, Domain::Generate, i as u64);
            let mut candidates = Vec::with_capacity(n);
            let mut fallbacks = 0;
            for _ in 0..n {
                let g = generate(lm, &pair.prefix, len, decoding, &mut rng)?;
                fallbacks += g.fallbacks;
                candidates.push(Candidate {
                    suffix: g.sequence.tokens()[pair.prefix.len()..].to_vec(),
                    score: None,
                });
            }
            Ok((
                PrefixCandidates {
                    prefix: pair.prefix.tokens().to_vec(),
                    truth: pair.suffix.tokens().to_vec(),
                    candidates,
                    selected: None,
                },
                fallbacks,
            ))
        })
        .collect::<Result<_>>()?;
    let fallbacks = per_prefix.iter().map(|(_, f)| f).sum();
    Ok(CandidateSet {
        prefixes: per_prefix.into_iter().map(|(p, _)| p).collect(),
        fallbacks,
    })
}

/// Attack used to rank `prefix ++ suffix` candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankingAttack {
    Loss,
    Mope(MopeConfig),
}

impl RankingAttack {
    pub fn name(&self) -> &'static str {
        match self {
            RankingAttack::Loss => "loss",
            RankingAttack::Mope(_) => "mope",
        }
    }
}

/// Scores every candidate with `scorer` (called once on all full sequences,
/// in prefix-major order) and selects the argmax per prefix, lowest index on ties.
pub fn rank_candidates_with<F>(mut set: CandidateSet, scorer: F) -> Result<CandidateSet>
where
    F: FnOnce(&[TokenSequence]) -> Result<Vec<f64>>,
{
    let full: Vec<TokenSequence> = set
        .prefixes
        .iter()
        .flat_map(|p| {
            p.candidates.iter().map(move |c| {
                let mut t = p.prefix.clone();
                t.extend_from_slice(&c.suffix);
                TokenSequence::new(t)
            })
        })
        .collect();
    let scores = scorer(&full)?;
    if scores.len() != full.len() {
        return Err(Error::Misaligned(
            "scorer returned the wrong number of scores".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    let mut it = scores.into_iter();
    for p in &mut set.prefixes {
        for c in &mut p.candidates {
            c.score = it.next();
        }
        p.selected = select_best(&p.candidates);
    }
    Ok(set)
}

fn select_best(candidates: &[Candidate]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let s = c.score?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

pub fn rank_candidates<M>(
    set: CandidateSet,
    attack: &RankingAttack,
    model: &M,
) -> Result<CandidateSet>
where
    M: Parametric<Example = TokenSequence> + Sync,
{
    rank_candidates_with(set, |seqs| match attack {
        RankingAttack::Loss => seqs.par_iter().map(|x| loss_attack(model, x)).collect(),
        RankingAttack::Mope(cfg) => mope_batch(model, seqs, cfg)?
            .outcomes
            .into_iter()
            .map(|o| o.map(|o| o.score))
            .collect(),
    })
}

/// A count with its denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCount {
    pub count: usize,
    pub total: usize,
}

impl MatchCount {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }
}

fn require_selection(set: &CandidateSet) -> Result<()> {
    if set.prefixes.iter().any(|p| p.selected.is_none()) {
        return Err(Error::invalid("candidates have not been ranked"));
    }
    Ok(())
}

/// Prefixes whose selected suffix equals the truth.
pub fn exact_match(set: &CandidateSet) -> Result<MatchCount> {
    require_selection(set)?;
    Ok(MatchCount {
        count: set
            .prefixes
            .iter()
            .filter(|p| p.selected_candidate().unwrap().suffix == p.truth)
            .count(),
        total: set.prefixes.len(),
    })
}

pub fn exact_match_accuracy(set: &CandidateSet) -> Result<f64> {
    Ok(exact_match(set)?.fraction())
}

/// Matching positions between selected suffix and truth, over all prefixes.
pub fn token_level(set: &CandidateSet) -> Result<MatchCount> {
    require_selection(set)?;
    let mut count = 0;
    let mut total = 0;
    for p in &set.prefixes {
        let s = &p.selected_candidate().unwrap().suffix;
        if s.len() != p.truth.len() {
            return Err(Error::Misaligned(format!(
                "selected suffix has {} tokens, truth has {}",
                s.len(),
                p.truth.len()
            )));
        }
        count += s.iter().zip(&p.truth).filter(|(a, b)| a == b).count();
        total += s.len();
    }
    Ok(MatchCount { count, total })
}

pub fn token_level_accuracy(set: &CandidateSet) -> Result<f64> {
    Ok(token_level(set)?.fraction())
}

/// Prefixes where any candidate equals the truth.
pub fn any_match(set: &CandidateSet) -> MatchCount {
    MatchCount {
        count: set
            .prefixes
            .iter()
            .filter(|p| p.candidates.iter().any(|c| c.suffix == p.truth))
            .count(),
        total: set.prefixes.len(),
    }
}

pub fn any_match_accuracy(set: &CandidateSet) -> f64 {
    any_match(set).fraction()
}

/// All `(prefix, candidate, score)` triples by descending score; ties by
/// prefix then candidate index.
pub fn global_ranking(set: &CandidateSet) -> Result<Vec<(usize, usize, f64)>> {
    let mut all = Vec::new();
    for (i, p) in set.prefixes.iter().enumerate() {
        for (j, c) in p.candidates.iter().enumerate() {
            let s = c
                .score
                .ok_or_else(|| Error::invalid("candidates have not been ranked"))?;
            all.push((i, j, s));
        }
    }
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    Ok(all)
}

/// Walks the per-prefix best predictions by descending score and stops just
/// before the `(k + 1)`-th wrong prediction. Returns correct / M.
pub fn recall_at_k_errors(set: &CandidateSet, k: usize) -> Result<f64> {
    require_selection(set)?;
    if set.prefixes.is_empty() {
        return Ok(0.0);
    }
    let mut preds: Vec<(usize, f64, bool)> = set
        .prefixes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let c = p.selected_candidate().unwrap();
            (i, c.score.unwrap(), c.suffix == p.truth)
        })
        .collect();
    preds.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut errors = 0;
    let mut correct = 0;
    for (_, _, ok) in preds {
        if ok {
            correct += 1;
        } else {
            errors += 1;
            if errors > k {
                break;
            }
        }
    }
    Ok(correct as f64 / set.prefixes.len() as f64)
}

/// AUC over every candidate, positives = candidates equal to the truth.
/// `None` when all candidates are correct or all are wrong.
pub fn extraction_auc(set: &CandidateSet) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for p in &set.prefixes {
        for c in &p.candidates {
            scores.push(
                c.score
                    .ok_or_else(|| Error::invalid("candidates have not been ranked"))?,
            );
            labels.push(c.suffix == p.truth);
        }
    }
    match roc(&scores, &labels) {
        Ok(curve) => Ok(Some(auc(&curve))),
        Err(Error::SingleClass(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn join_tokens(t: &[Token]) -> String {
    t.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Per-prefix results:
/// `prefix_index,selected_candidate,score,exact_match,token_matches,any_match,selected_suffix,true_suffix`.
pub fn results_csv(set: &CandidateSet) -> Result<String> {
    require_selection(set)?;
    let mut out = String::from(
        "prefix_index,selected_candidate,score,exact_match,token_matches,any_match,selected_suffix,true_suffix\n",
    );
    for (i, p) in set.prefixes.iter().enumerate() {
        let sel = p.selected.unwrap();
        let c = &p.candidates[sel];
        let token_matches = c
            .suffix
            .iter()
            .zip(&p.truth)
            .filter(|(a, b)| a == b)
            .count();
        out.push_str(&format!(
            "{i},{sel},{},{},{token_matches},{},{},{}\n",
            fmt_f64(c.score.unwrap()),
            c.suffix == p.truth,
            p.candidates.iter().any(|c| c.suffix == p.truth),
            join_tokens(&c.suffix),
            join_tokens(&p.truth),
        ));
    }
    Ok(out)
}

/// Summary of the extraction metric suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionSummary {
    pub attack: String,
    pub n_prefixes: usize,
    pub n_candidates: usize,
    pub exact_match: MatchCount,
    pub exact_match_accuracy: f64,
    pub token_level: MatchCount,
    pub token_level_accuracy: f64,
    pub any_match: MatchCount,
    pub any_match_accuracy: f64,
    pub recall_at_k_errors: f64,
    pub k_errors: usize,
    pub auc: Option<f64>,
    pub fallbacks: usize,
}

pub fn summarize(set: &CandidateSet, attack: &str, k_errors: usize) -> Result<ExtractionSummary> {
    let em = exact_match(set)?;
    let tl = token_level(set)?;
    let am = any_match(set);
    Ok(ExtractionSummary {
        attack: attack.to_string(),
        n_prefixes: set.prefixes.len(),
        n_candidates: set.prefixes.iter().map(|p| p.candidates.len()).sum(),
        exact_match_accuracy: em.fraction(),
        exact_match: em,
        token_level_accuracy: tl.fraction(),
        token_level: tl,
        any_match_accuracy: am.fraction(),
        any_match: am,
        recall_at_k_errors: recall_at_k_errors(set, k_errors)?,
        k_errors,
        auc: extraction_auc(set)?,
        fallbacks: set.fallbacks,
    })
}
