use super::sequence::{nll_loss, SequenceModel, Token, TokenSequence};
use crate::diffcore::Objective;
use crate::{Error, Result};

/// Bigram reference model with an explicit probability table.
///
/// Used as a closed-form fixture: uniform, hand-filled and deterministic-chain
/// models all have losses computable by hand.
#[derive(Debug, Clone, PartialEq)]
pub struct TableLm {
    /// `log p(next | last)`, one row per previous token.
    log_rows: Vec<Vec<f64>>,
}

impl TableLm {
    pub fn uniform(vocab: usize) -> Self {
        let lp = -(vocab as f64).ln();
        Self {
            log_rows: vec![vec![lp; vocab]; vocab],
        }
    }

    /// Rows must be probability distributions over the vocabulary.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let v = rows.len();
        if v < 2 {
            return Err(Error::invalid("table needs at least two tokens"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != v {
                return Err(Error::invalid(format!(
                    "row {i} has {} entries, expected {v}",
                    row.len()
                )));
            }
            let s: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} is not a distribution")));
            }
        }
        Ok(Self {
            log_rows: rows
                .into_iter()
                .map(|r| r.into_iter().map(f64::ln).collect())
                .collect(),
        })
    }

    /// Chain model: `successor[t]` gets mass `1 - leak`, the rest is spread
    /// evenly. `leak = 0` gives a perfect deterministic chain.
    pub fn chain(vocab: usize, successor: Vec<Token>, leak: f64) -> Result<Self> {
        if successor.len() != vocab || successor.iter().any(|&s| s as usize >= vocab) {
            return Err(Error::invalid("successor map must cover the vocabulary"));
        }
        if !(0.0..1.0).contains(&leak) {
            return Err(Error::invalid("leak must lie in [0, 1)"));
        }
        let other = leak / (vocab - 1) as f64;
        let rows = successor
            .iter()
            .map(|&s| {
                (0..vocab)
                    .map(|t| if t == s as usize { 1.0 - leak } else { other })
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }
}

impl SequenceModel for TableLm {
    fn vocab_size(&self) -> usize {
        self.log_rows.len()
    }

    fn next_logits(&self, history: &[Token]) -> Result<Vec<f64>> {
        let last = *history
            .last()
            .ok_or_else(|| Error::invalid("empty history"))? as usize;
        self.log_rows
            .get(last)
            .cloned()
            .ok_or(Error::TokenOutOfVocabulary {
                token: last as Token,
                vocab: self.log_rows.len(),
            })
    }
}

impl Objective for TableLm {
    type Example = TokenSequence;

    fn loss(&self, x: &TokenSequence) -> Result<f64> {
        nll_loss(self, x)
    }
}
