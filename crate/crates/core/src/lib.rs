//! White-box membership-inference auditing for small models.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffcore`]: flat parameter vectors, counter-based noise, gradients and
//!   finite-difference oracles.
//! * [`models`]: an MLP classifier and a fixed-context feed-forward token LM,
//!   Adam training, checkpoints and sampling.
//! * [`attacks`]: LOSS, MoPe, DetectGPT-style, gradient-norm and ensemble
//!   scores, all oriented so that a larger score means "more likely a member".
//! * [`metrics`]: ROC, AUC, TPR at fixed FPR, best accuracy, z-scores.
//! * [`hessianlab`]: exact Hessian traces and the Hutchinson estimator.
//! * [`extraction`]: the generate / rank / score training-data extraction
//!   pipeline.

pub mod attacks;
pub mod diffcore;
mod error;
pub mod extraction;
pub mod hessianlab;
pub mod metrics;
pub mod models;

pub use error::{Error, Result};
