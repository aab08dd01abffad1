//! Membership-inference scores. Every attack is oriented so that a larger
//! score means "more likely a training member".

mod detect;
mod ensemble;
mod grad;
mod mope;
mod suite;
mod table;

pub use detect::{detectgpt_score, perturb_input, score_against_variants, DetectConfig};
pub use ensemble::ensemble_scores;
pub use grad::{grad_score, GradConfig, GradTarget, NormOrder};
pub use mope::{
    mope_batch, mope_batch_with, mope_score, Antithetic, MopeBatch, MopeConfig, MopeOutcome,
    NoiseSource,
};
pub use suite::{run_attack_suite, AttackSpec, Auditable, SuiteFailure, SuiteOutput};
pub use table::{Membership, ScoreColumn, ScoreRecord, ScoreTable};

use crate::diffcore::Objective;
use crate::{Error, Result};

/// Confidence `-l(x)`.
pub fn loss_attack<M: Objective + ?Sized>(model: &M, x: &M::Example) -> Result<f64> {
    let l = model.loss(x)?;
    if !l.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok(-l)
}
