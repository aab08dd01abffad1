use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::detect::{detectgpt_score, DetectConfig};
use super::grad::{grad_score, GradConfig};
use super::loss_attack;
use super::mope::{mope_batch, MopeConfig};
use super::table::{Membership, ScoreRecord, ScoreTable};
use crate::diffcore::{InputDifferentiable, Parametric};
use crate::models::{LmModel, MlpModel, TokenSequence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackSpec {
    Loss,
    Mope(MopeConfig),
    DetectGpt(DetectConfig),
    Grad(GradConfig),
}

impl AttackSpec {
    pub fn name(&self) -> String {
        match self {
            AttackSpec::Loss => "loss".into(),
            AttackSpec::Mope(_) => "mope".into(),
            AttackSpec::DetectGpt(_) => "detectgpt".into(),
            AttackSpec::Grad(g) => g.name(),
        }
    }
}

/// Models the full suite can score.
pub trait Auditable: Parametric + InputDifferentiable + Sync
where
    Self::Example: Sync,
{
    fn input_perturbation_score(&self, _x: &Self::Example, _cfg: &DetectConfig) -> Result<f64> {
        Err(Error::Unsupported(
            "input-perturbation scoring needs a token model".into(),
        ))
    }
}

impl Auditable for MlpModel {}

impl Auditable for LmModel {
    fn input_perturbation_score(&self, x: &TokenSequence, cfg: &DetectConfig) -> Result<f64> {
        detectgpt_score(self, x, cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteFailure {
    pub example_id: u64,
    pub attack: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutput {
    pub table: ScoreTable,
    pub failures: Vec<SuiteFailure>,
    /// Perturbed draws dropped for non-finite loss, summed over examples.
    pub mope_excluded_draws: u64,
    /// Fingerprints of the shared MoPe perturbations (empty without MoPe).
    pub mope_draw_log: Vec<u64>,
}

/// Scores every example with every attack. Records are ordered by attack
/// (as given) then example id, so input order does not matter. Per-example
/// failures are collected instead of aborting the run.
pub fn run_attack_suite<M>(
    model: &M,
    members: &[(u64, M::Example)],
    nonmembers: &[(u64, M::Example)],
    attacks: &[AttackSpec],
) -> Result<SuiteOutput>
where
    M: Auditable,
    M::Example: Sync,
{
    let mut ids = HashSet::new();
    for (id, _) in members.iter().chain(nonmembers) {
        if !ids.insert(*id) {
            return Err(Error::invalid(format!(
                "example id {id} appears more than once"
            )));
        }
    }
    let mut names = HashSet::new();
    for a in attacks {
        if !names.insert(a.name()) {
            return Err(Error::invalid(format!("duplicate attack `{}`", a.name())));
        }
    }

    let mut all: Vec<(u64, Membership, &M::Example)> = members
        .iter()
        .map(|(id, x)| (*id, Membership::Member, x))
        .chain(
            nonmembers
                .iter()
                .map(|(id, x)| (*id, Membership::Nonmember, x)),
        )
        .collect();
    all.sort_by_key(|(id, _, _)| *id);

    let mut out = SuiteOutput {
        table: ScoreTable::default(),
        failures: Vec::new(),
        mope_excluded_draws: 0,
        mope_draw_log: Vec::new(),
    };
    for attack in attacks {
        let name = attack.name();
        let scores: Vec<Result<f64>> = match attack {
            AttackSpec::Mope(cfg) => {
                let xs: Vec<&M::Example> = all.iter().map(|(_, _, x)| *x).collect();
                let batch = mope_batch_refs(model, &xs, cfg)?;
                out.mope_excluded_draws += batch.1;
                out.mope_draw_log = batch.2;
                batch.0
            }
            _ => all
                .par_iter()
                .map(|(_, _, x)| match attack {
                    AttackSpec::Loss => loss_attack(model, x),
                    AttackSpec::DetectGpt(cfg) => model.input_perturbation_score(x, cfg),
                    AttackSpec::Grad(cfg) => grad_score(model, x, cfg),
                    AttackSpec::Mope(_) => unreachable!(),
                })
                .collect(),
        };
        for ((id, label, _), s) in all.iter().zip(scores) {
            match s.and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFiniteLoss)
                }
            }) {
                Ok(score) => out.table.records.push(ScoreRecord {
                    example_id: *id,
                    label: *label,
                    attack: name.clone(),
                    score,
                }),
                Err(e) => out.failures.push(SuiteFailure {
                    example_id: *id,
                    attack: name.clone(),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(out)
}

/// MoPe over borrowed examples: (scores, excluded draws, draw log).
fn mope_batch_refs<M>(
    model: &M,
    xs: &[&M::Example],
    cfg: &MopeConfig,
) -> Result<(Vec<Result<f64>>, u64, Vec<u64>)>
where
    M: Parametric + Sync,
    M::Example: Sync,
{
    let adapter = RefModel(model);
    let batch = mope_batch(&adapter, xs, cfg)?;
    let excluded = batch.excluded_draws();
    Ok((
        batch
            .outcomes
            .into_iter()
            .map(|o| o.map(|o| o.score))
            .collect(),
        excluded,
        batch.draw_log,
    ))
}

/// Lets a model score `&Example` slices without cloning the examples.
struct RefModel<'a, M>(&'a M);

impl<'a, M: Parametric> crate::diffcore::Objective for RefModel<'a, M> {
    type Example = &'a M::Example;

    fn loss(&self, x: &Self::Example) -> Result<f64> {
        self.0.loss(x)
    }
}

impl<'a, M: Parametric> Parametric for RefModel<'a, M> {
    fn params(&self) -> &crate::diffcore::ParamVector {
        self.0.params()
    }

    fn loss_at(&self, theta: &[f64], x: &Self::Example) -> Result<f64> {
        self.0.loss_at(theta, x)
    }

    fn loss_and_grad_at(&self, theta: &[f64], x: &Self::Example) -> Result<(f64, Vec<f64>)> {
        self.0.loss_and_grad_at(theta, x)
    }
}
