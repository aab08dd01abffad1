use serde::{Deserialize, Serialize};

use super::sequence::{validate_for_loss, SequenceModel, Token, TokenSequence};
use crate::diffcore::rng::{fill_standard_normal, stream, Domain};
use crate::diffcore::{
    log_sum_exp, Alignment, GradientVector, InputDifferentiable, Objective, ParamVector,
    Parametric, Reparameterize,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab_size: usize,
    /// Number of previous tokens the model sees.
    pub context: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    /// Longest sequence accepted for loss evaluation.
    pub max_len: usize,
}

impl LmConfig {
    pub fn n_params(&self) -> usize {
        let (v, c, e, h) = (self.vocab_size, self.context, self.embed_dim, self.hidden);
        (v + 1) * e + h * c * e + h + v * h + v
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.context == 0 || self.embed_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid(format!("degenerate LM config {self:?}")));
        }
        Ok(())
    }
}

/// Fixed-context feed-forward language model:
/// concatenated embeddings of the last `context` tokens -> tanh hidden layer
/// -> softmax over the vocabulary. Positions before the start of the
/// sequence read a dedicated padding embedding (row `vocab_size`).
#[derive(Debug, Clone, PartialEq)]
pub struct LmModel {
    config: LmConfig,
    params: ParamVector,
}

/// Parameter offsets, computed once per call.
struct Offsets {
    emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

impl LmModel {
    fn shapes(cfg: &LmConfig) -> Vec<(&'static str, Vec<usize>)> {
        vec![
            ("embedding", vec![cfg.vocab_size + 1, cfg.embed_dim]),
            (
                "hidden.weight",
                vec![cfg.hidden, cfg.context * cfg.embed_dim],
            ),
            ("hidden.bias", vec![cfg.hidden]),
            ("output.weight", vec![cfg.vocab_size, cfg.hidden]),
            ("output.bias", vec![cfg.vocab_size]),
        ]
    }

    fn zero_params(cfg: &LmConfig) -> Result<ParamVector> {
        let shapes = Self::shapes(cfg);
        let refs: Vec<(&str, &[usize])> = shapes.iter().map(|(n, s)| (*n, s.as_slice())).collect();
        ParamVector::zeros(&refs)
    }

    /// All-zero parameters: every next-token distribution is uniform.
    pub fn uniform(config: LmConfig) -> Result<Self> {
        config.validate()?;
        let params = Self::zero_params(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: LmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Self::zero_params(&config)?;
        let mut rng = stream(seed, Domain::Init, 1);
        let fan = [
            ("embedding", 1.0),
            ("hidden.weight", (config.context * config.embed_dim) as f64),
            ("output.weight", config.hidden as f64),
        ];
        for (name, fan_in) in fan {
            let range = params.segment(name).unwrap().range();
            let slot = &mut params.values_mut()[range];
            fill_standard_normal(&mut rng, slot);
            for v in slot.iter_mut() {
                *v /= f64::sqrt(fan_in);
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: LmConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        if params.len() != config.n_params() {
            return Err(Error::LayoutMismatch(format!(
                "LM needs {} parameters, got {}",
                config.n_params(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    fn offsets(&self) -> Offsets {
        let c = &self.config;
        let emb = 0;
        let w1 = emb + (c.vocab_size + 1) * c.embed_dim;
        let b1 = w1 + c.hidden * c.context * c.embed_dim;
        let w2 = b1 + c.hidden;
        let b2 = w2 + c.vocab_size * c.hidden;
        Offsets {
            emb,
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// Embedding rows for each token of `x` (`len x embed_dim`), the input
    /// representation the input gradient is taken against.
    pub fn embed(&self, x: &TokenSequence) -> Result<Vec<f64>> {
        x.check_vocab(self.config.vocab_size)?;
        let e = self.config.embed_dim;
        let emb = &self.params.values()[..(self.config.vocab_size + 1) * e];
        Ok(x.tokens()
            .iter()
            .flat_map(|&t| emb[t as usize * e..(t as usize + 1) * e].iter().copied())
            .collect())
    }

    /// Row index in the embedded matrix for context slot `k` when predicting
    /// position `t`; `None` means the padding embedding.
    fn slot_position(&self, t: usize, k: usize) -> Option<usize> {
        (t + k).checked_sub(self.config.context)
    }

    /// Hidden activations and logits for the window ending before `t`.
    fn window(&self, theta: &[f64], off: &Offsets, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let width = c.context * c.embed_dim;
        let w1 = &theta[off.w1..off.b1];
        let b1 = &theta[off.b1..off.w2];
        let w2 = &theta[off.w2..off.b2];
        let b2 = &theta[off.b2..off.b2 + c.vocab_size];
        let hidden: Vec<f64> = (0..c.hidden)
            .map(|j| {
                let row = &w1[j * width..(j + 1) * width];
                (b1[j] + row.iter().zip(input).map(|(w, u)| w * u).sum::<f64>()).tanh()
            })
            .collect();
        let logits = (0..c.vocab_size)
            .map(|v| {
                let row = &w2[v * c.hidden..(v + 1) * c.hidden];
                b2[v] + row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>()
            })
            .collect();
        (hidden, logits)
    }

    fn gather(&self, theta: &[f64], off: &Offsets, embedded: &[f64], t: usize) -> Vec<f64> {
        let e = self.config.embed_dim;
        let pad = self.config.vocab_size;
        let mut input = Vec::with_capacity(self.config.context * e);
        for k in 0..self.config.context {
            match self.slot_position(t, k) {
                Some(p) => input.extend_from_slice(&embedded[p * e..(p + 1) * e]),
                None => input.extend_from_slice(&theta[off.emb + pad * e..off.emb + (pad + 1) * e]),
            }
        }
        input
    }

    fn embed_with(&self, theta: &[f64], x: &TokenSequence) -> Vec<f64> {
        let e = self.config.embed_dim;
        x.tokens()
            .iter()
            .flat_map(|&t| theta[t as usize * e..(t as usize + 1) * e].iter().copied())
            .collect()
    }

    /// Loss with the token embeddings replaced by `embedded` (`len x embed_dim`).
    pub fn loss_from_embedded(&self, x: &TokenSequence, embedded: &[f64]) -> Result<f64> {
        validate_for_loss(x, self.config.vocab_size, self.config.max_len)?;
        if embedded.len() != x.len() * self.config.embed_dim {
            return Err(Error::invalid("embedded input has the wrong shape"));
        }
        let theta = self.params.values();
        let off = self.offsets();
        Ok((1..x.len())
            .map(|t| {
                let input = self.gather(theta, &off, embedded, t);
                let (_, logits) = self.window(theta, &off, &input);
                log_sum_exp(&logits) - logits[x.tokens()[t] as usize]
            })
            .sum())
    }

    /// Returns (loss, parameter gradient, gradient w.r.t. embedded rows).
    fn backward(&self, theta: &[f64], x: &TokenSequence) -> (f64, Vec<f64>, Vec<f64>) {
        let c = &self.config;
        let (e, width) = (c.embed_dim, c.context * c.embed_dim);
        let off = self.offsets();
        let embedded = self.embed_with(theta, x);
        let mut grad = vec![0.0; theta.len()];
        let mut grad_rows = vec![0.0; embedded.len()];
        let mut loss = 0.0;
        for t in 1..x.len() {
            let target = x.tokens()[t] as usize;
            let input = self.gather(theta, &off, &embedded, t);
            let (hidden, logits) = self.window(theta, &off, &input);
            let lse = log_sum_exp(&logits);
            loss += lse - logits[target];

            let mut dlogits: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
            dlogits[target] -= 1.0;

            let mut dhidden = vec![0.0; c.hidden];
            for (v, d) in dlogits.iter().enumerate() {
                grad[off.b2 + v] += d;
                let row = off.w2 + v * c.hidden;
                for j in 0..c.hidden {
                    grad[row + j] += d * hidden[j];
                    dhidden[j] += theta[row + j] * d;
                }
            }
            let mut dinput = vec![0.0; width];
            for j in 0..c.hidden {
                let dz = dhidden[j] * (1.0 - hidden[j] * hidden[j]);
                grad[off.b1 + j] += dz;
                let row = off.w1 + j * width;
                for i in 0..width {
                    grad[row + i] += dz * input[i];
                    dinput[i] += theta[row + i] * dz;
                }
            }
            for k in 0..c.context {
                let slot = &dinput[k * e..(k + 1) * e];
                let (token_row, pos) = match self.slot_position(t, k) {
                    Some(p) => (x.tokens()[p] as usize, Some(p)),
                    None => (c.vocab_size, None),
                };
                for (g, d) in grad[off.emb + token_row * e..off.emb + (token_row + 1) * e]
                    .iter_mut()
                    .zip(slot)
                {
                    *g += d;
                }
                if let Some(p) = pos {
                    for (g, d) in grad_rows[p * e..(p + 1) * e].iter_mut().zip(slot) {
                        *g += d;
                    }
                }
            }
        }
        (loss, grad, grad_rows)
    }
}

impl SequenceModel for LmModel {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn next_logits(&self, history: &[Token]) -> Result<Vec<f64>> {
        if history.is_empty() {
            return Err(Error::invalid("empty history"));
        }
        let x = TokenSequence::new(history.to_vec());
        x.check_vocab(self.config.vocab_size)?;
        let theta = self.params.values();
        let off = self.offsets();
        // Only the last `context` tokens matter.
        let start = history.len().saturating_sub(self.config.context);
        let tail = TokenSequence::new(history[start..].to_vec());
        let embedded = self.embed_with(theta, &tail);
        let input = self.gather(theta, &off, &embedded, tail.len());
        Ok(self.window(theta, &off, &input).1)
    }
}

impl Objective for LmModel {
    type Example = TokenSequence;

    fn loss(&self, x: &TokenSequence) -> Result<f64> {
        self.loss_at(self.params.values(), x)
    }
}

impl Parametric for LmModel {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn loss_at(&self, theta: &[f64], x: &TokenSequence) -> Result<f64> {
        validate_for_loss(x, self.config.vocab_size, self.config.max_len)?;
        let off = self.offsets();
        let embedded = self.embed_with(theta, x);
        Ok((1..x.len())
            .map(|t| {
                let input = self.gather(theta, &off, &embedded, t);
                let (_, logits) = self.window(theta, &off, &input);
                log_sum_exp(&logits) - logits[x.tokens()[t] as usize]
            })
            .sum())
    }

    fn loss_and_grad_at(&self, theta: &[f64], x: &TokenSequence) -> Result<(f64, Vec<f64>)> {
        validate_for_loss(x, self.config.vocab_size, self.config.max_len)?;
        let (loss, g, _) = self.backward(theta, x);
        Ok((loss, g))
    }
}

impl InputDifferentiable for LmModel {
    fn input_gradient(&self, x: &TokenSequence) -> Result<GradientVector> {
        validate_for_loss(x, self.config.vocab_size, self.config.max_len)?;
        let (_, _, rows) = self.backward(self.params.values(), x);
        Ok(GradientVector {
            values: rows,
            alignment: Alignment::Input {
                rows: x.len(),
                cols: self.config.embed_dim,
            },
        })
    }
}

impl Reparameterize for LmModel {
    fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::from_params(self.config.clone(), params)
    }
}
