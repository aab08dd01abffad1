use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::log_softmax_in_place;
use crate::extraction::{sample_next, DecodingParams};
use crate::{Error, Result};

pub type Token = u32;

/// Ordered token ids over a finite vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<Token>);

impl TokenSequence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<Token> {
        self.0
    }

    pub fn concat(&self, other: &TokenSequence) -> TokenSequence {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        TokenSequence(v)
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.0.iter().find(|&&t| t as usize >= vocab) {
            Some(&token) => Err(Error::TokenOutOfVocabulary { token, vocab }),
            None => Ok(()),
        }
    }
}

impl From<Vec<Token>> for TokenSequence {
    fn from(v: Vec<Token>) -> Self {
        Self(v)
    }
}

/// Autoregressive next-token model.
pub trait SequenceModel {
    fn vocab_size(&self) -> usize;

    /// Longest sequence accepted for loss evaluation.
    fn max_len(&self) -> usize {
        usize::MAX
    }

    /// Unnormalized next-token scores given a non-empty history.
    /// `-inf` marks zero-probability tokens.
    fn next_logits(&self, history: &[Token]) -> Result<Vec<f64>>;
}

pub(crate) fn validate_for_loss(x: &TokenSequence, vocab: usize, cap: usize) -> Result<()> {
    if x.len() < 2 {
        return Err(Error::SequenceTooShort {
            len: x.len(),
            min: 2,
        });
    }
    if x.len() > cap {
        return Err(Error::SequenceTooLong { len: x.len(), cap });
    }
    x.check_vocab(vocab)
}

/// Per-position terms `-log p(x_t | x_<t)` for `t = 1..len`.
pub fn token_nlls<M: SequenceModel + ?Sized>(model: &M, x: &TokenSequence) -> Result<Vec<f64>> {
    validate_for_loss(x, model.vocab_size(), model.max_len())?;
    let tokens = x.tokens();
    (1..tokens.len())
        .map(|t| {
            let mut lp = model.next_logits(&tokens[..t])?;
            log_softmax_in_place(&mut lp);
            Ok(-lp[tokens[t] as usize])
        })
        .collect()
}

/// Negative log-likelihood summed over the predictable positions.
pub fn nll_loss<M: SequenceModel + ?Sized>(model: &M, x: &TokenSequence) -> Result<f64> {
    Ok(token_nlls(model, x)?.iter().sum())
}

/// `-nll_loss`.
pub fn confidence<M: SequenceModel + ?Sized>(model: &M, x: &TokenSequence) -> Result<f64> {
    Ok(-nll_loss(model, x)?)
}

/// Next-token probabilities after softmax.
pub fn next_distribution<M: SequenceModel + ?Sized>(
    model: &M,
    history: &[Token],
) -> Result<Vec<f64>> {
    let mut lp = model.next_logits(history)?;
    log_softmax_in_place(&mut lp);
    Ok(lp.into_iter().map(f64::exp).collect())
}

/// Output of [`generate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    /// Prefix followed by the sampled continuation.
    pub sequence: TokenSequence,
    /// Steps where filtering removed all mass and argmax was used instead.
    pub fallbacks: usize,
}

/// Samples `length` tokens after `prefix` under `params`.
pub fn generate<M: SequenceModel + ?Sized>(
    model: &M,
    prefix: &TokenSequence,
    length: usize,
    params: &DecodingParams,
    rng: &mut ChaCha8Rng,
) -> Result<Generated> {
    if prefix.is_empty() {
        return Err(Error::invalid("generation needs a non-empty prefix"));
    }
    if length == 0 {
        return Err(Error::invalid("generation length must be at least 1"));
    }
    prefix.check_vocab(model.vocab_size())?;
    params.validate()?;
    let mut tokens = prefix.tokens().to_vec();
    let mut fallbacks = 0;
    for _ in 0..length {
        let logits = model.next_logits(&tokens)?;
        let (tok, fell_back) = sample_next(&logits, &tokens, params, rng)?;
        fallbacks += fell_back as usize;
        tokens.push(tok);
    }
    Ok(Generated {
        sequence: TokenSequence(tokens),
        fallbacks,
    })
}
