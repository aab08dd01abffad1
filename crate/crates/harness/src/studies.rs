//! Training-order study, model-size sweep and the LOSS-vs-MoPe scatter.

use anyhow::{bail, ensure, Context, Result};
use mia_core::attacks::{mope_batch, run_attack_suite, AttackSpec, MopeConfig, ScoreColumn};
use mia_core::diffcore::Objective;
use mia_core::metrics::{evaluate, fmt_f64, log_modulus, zscore, EvalReport};
use mia_core::models::{train, LmConfig, LmModel, TokenSequence, TrainConfig, TrainingLog};
use serde::{Deserialize, Serialize};

use crate::corpus::TextCorpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchGroupStat {
    pub group: usize,
    /// Position in the training stream of the group's first example.
    pub first_position: usize,
    pub size: usize,
    pub mean_loss: f64,
    pub mean_mope: f64,
}

/// Splits the first epoch's training stream into `n_groups` contiguous groups
/// of (near) equal size and averages LOSS and MoPe over each, with MoPe
/// drawn once for all examples. `per_group` keeps an evenly spaced subsample.
pub fn training_order_study(
    model: &LmModel,
    data: &[TokenSequence],
    log: &TrainingLog,
    n_groups: usize,
    per_group: Option<usize>,
    mope: &MopeConfig,
) -> Result<Vec<BatchGroupStat>> {
    ensure!(n_groups >= 1, "need at least one batch group");
    let stream: Vec<usize> = log
        .steps
        .iter()
        .filter(|s| s.epoch == 0)
        .flat_map(|s| s.batch.iter().copied())
        .collect();
    let n = stream.len();
    let mut groups = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let (lo, hi) = (g * n / n_groups, (g + 1) * n / n_groups);
        if lo == hi {
            bail!("batch group {g} is empty: {n} examples cannot fill {n_groups} groups");
        }
        let positions: Vec<usize> = match per_group {
            Some(k) if k < hi - lo => {
                ensure!(k >= 1, "order.per_group must be at least 1");
                (0..k).map(|j| lo + j * (hi - lo) / k).collect()
            }
            _ => (lo..hi).collect(),
        };
        groups.push((lo, positions));
    }
    let examples: Vec<TokenSequence> = groups
        .iter()
        .flat_map(|(_, ps)| ps.iter().map(|&p| data[stream[p]].clone()))
        .collect();
    let losses: Vec<f64> = examples
        .iter()
        .map(|x| model.loss(x))
        .collect::<mia_core::Result<_>>()?;
    let mope_scores: Vec<f64> = mope_batch(model, &examples, mope)?
        .outcomes
        .into_iter()
        .map(|o| o.map(|o| o.score))
        .collect::<mia_core::Result<_>>()?;
    let mut at = 0;
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(g, (lo, ps))| {
            let k = ps.len();
            let stat = BatchGroupStat {
                group: g,
                first_position: lo,
                size: k,
                mean_loss: losses[at..at + k].iter().sum::<f64>() / k as f64,
                mean_mope: mope_scores[at..at + k].iter().sum::<f64>() / k as f64,
            };
            at += k;
            stat
        })
        .collect())
}

pub fn order_study_csv(stats: &[BatchGroupStat]) -> String {
    let mut out = String::from("group,first_position,size,mean_loss,mean_mope\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.group,
            s.first_position,
            s.size,
            fmt_f64(s.mean_loss),
            fmt_f64(s.mean_mope)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub hidden: usize,
    pub n_params: usize,
    pub split_hash: String,
    pub reports: Vec<EvalReport>,
    pub failures: usize,
    /// Set when this size could not be trained or scored.
    pub error: Option<String>,
}

/// Trains one LM per hidden width on the same corpus and runs the full
/// attack suite (train split = members, test split = nonmembers). A failing
/// size is recorded and the sweep moves on.
pub fn model_size_sweep(
    corpus: &TextCorpus,
    base: &LmConfig,
    hidden_sizes: &[usize],
    train_cfg: &TrainConfig,
    init_seed: u64,
    attacks: &[AttackSpec],
    fpr_levels: &[f64],
) -> Vec<SweepRow> {
    let split_hash = corpus.split_hash();
    hidden_sizes
        .iter()
        .map(|&hidden| {
            let cfg = LmConfig {
                hidden,
                ..base.clone()
            };
            let mut row = SweepRow {
                hidden,
                n_params: cfg.n_params(),
                split_hash: split_hash.clone(),
                reports: Vec::new(),
                failures: 0,
                error: None,
            };
            let run = || -> Result<(Vec<EvalReport>, usize)> {
                let init = LmModel::init(cfg.clone(), init_seed)?;
                let (model, _) = train(&init, &corpus.train_sequences(), train_cfg, |_, _| false)
                    .with_context(|| format!("training hidden={hidden}"))?;
                let out = run_attack_suite(&model, &corpus.train, &corpus.test, attacks)?;
                let mut reports = Vec::new();
                for name in out.table.attacks() {
                    let col = out.table.column(&name)?;
                    reports.push(evaluate(&name, &col.scores, &col.member_mask(), fpr_levels)?.0);
                }
                Ok((reports, out.failures.len()))
            };
            match run() {
                Ok((reports, failures)) => {
                    row.reports = reports;
                    row.failures = failures;
                }
                Err(e) => row.error = Some(format!("{e:#}")),
            }
            row
        })
        .collect()
}

/// One line per (size, attack): `hidden,n_params,split_hash,attack,auc,best_accuracy,error`.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("hidden,n_params,split_hash,attack,auc,best_accuracy,error\n");
    for r in rows {
        match &r.error {
            Some(e) => out.push_str(&format!(
                "{},{},{},,,,\"{}\"\n",
                r.hidden,
                r.n_params,
                r.split_hash,
                e.replace('"', "'")
            )),
            None => {
                for rep in &r.reports {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},\n",
                        r.hidden,
                        r.n_params,
                        r.split_hash,
                        rep.attack,
                        fmt_f64(rep.auc),
                        fmt_f64(rep.best_accuracy)
                    ));
                }
            }
        }
    }
    out
}

/// Per example: `log_modulus(z(a))` and `log_modulus(z(b))`, z-scored first.
pub fn scatter_points(a: &ScoreColumn, b: &ScoreColumn) -> Result<Vec<(u64, bool, f64, f64)>> {
    ensure!(
        a.ids == b.ids,
        "score columns `{}` and `{}` cover different examples",
        a.attack,
        b.attack
    );
    let za = zscore(&a.scores)?;
    let zb = zscore(&b.scores)?;
    Ok(a.ids
        .iter()
        .zip(&a.labels)
        .zip(za.iter().zip(&zb))
        .map(|((id, l), (x, y))| (*id, l.is_member(), log_modulus(*x), log_modulus(*y)))
        .collect())
}

/// `example_id,label,<a>,<b>` CSV of [`scatter_points`].
pub fn scatter_export(a: &ScoreColumn, b: &ScoreColumn) -> Result<String> {
    let points = scatter_points(a, b)?;
    let mut out = format!("example_id,label,{},{}\n", a.attack, b.attack);
    for (id, member, x, y) in points {
        let label = if member { "member" } else { "nonmember" };
        out.push_str(&format!("{id},{label},{},{}\n", fmt_f64(x), fmt_f64(y)));
    }
    Ok(out)
}
