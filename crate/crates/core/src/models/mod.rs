//! Desk-scale models: an MLP classifier and a fixed-context token LM, plus
//! training, sampling and checkpoint persistence.

mod checkpoint;
mod lm;
mod mlp;
mod sequence;
mod table;
mod train;

pub use checkpoint::{Architecture, Checkpoint, CHECKPOINT_FORMAT};
pub use lm::{LmConfig, LmModel};
pub use mlp::{Activation, LabeledPoint, MlpConfig, MlpModel};
pub use sequence::{
    confidence, generate, next_distribution, nll_loss, token_nlls, Generated, SequenceModel, Token,
    TokenSequence,
};
pub use table::TableLm;
pub use train::{train, StepRecord, TrainConfig, TrainingLog};

/// Trains the MLP, stopping at the first epoch boundary where train accuracy
/// reaches `target_accuracy` (or when `cfg.epochs` runs out).
pub fn train_classifier(
    model: &MlpModel,
    data: &[LabeledPoint],
    cfg: &TrainConfig,
    target_accuracy: Option<f64>,
) -> crate::Result<(MlpModel, TrainingLog)> {
    train(model, data, cfg, |m, _| match target_accuracy {
        Some(target) => m.accuracy(data) >= target,
        None => false,
    })
}
