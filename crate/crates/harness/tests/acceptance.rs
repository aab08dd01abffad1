//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria that exercise the toolkit end to end go through `run_stage` with
//! the shipped configs; derived quantities are recomputed here from the
//! written CSVs and checkpoints rather than taken from the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{anyhow, ensure, Context, Result};
use mia_core::attacks::{ensemble_scores, Membership, ScoreColumn, ScoreTable};
use mia_core::diffcore::Parametric;
use mia_core::extraction::{
    any_match, any_match_accuracy, exact_match, exact_match_accuracy, recall_at_k_errors,
    token_level_accuracy, Candidate, CandidateSet, PrefixCandidates,
};
use mia_core::hessianlab::{hutchinson_trace, ExplicitMatrix, ProbeKind};
use mia_core::metrics::{auc, best_accuracy, roc, tpr_at_fpr};
use mia_core::models::Checkpoint;
use mia_harness::classification::{synth_classification, ClassificationSpec};
use mia_harness::config::Config;
use mia_harness::rundir::RunManifest;
use mia_harness::stages::{run_stage, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str, overrides: &[(&str, toml::Value)]) -> Result<Config> {
    let mut c = Config::load(&configs().join(name))?;
    for (k, v) in overrides {
        c.set(k, v.clone());
    }
    Ok(c)
}

fn run(stage: Stage, config: &Config, root: &Path, name: &str) -> Result<(PathBuf, RunManifest)> {
    let out = root.join(name);
    let m =
        run_stage(stage, config, &out, false).with_context(|| format!("stage {}", stage.name()))?;
    Ok((out, m))
}

// ---- brute-force oracles ----

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                num += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / pairs
}

/// `(fpr, tpr, correct)` for "member iff score >= t" at every distinct score and at +inf.
fn threshold_scan(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64, usize)> {
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|&t| {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|(s, l)| **l && **s >= t)
                .count();
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|(s, l)| !**l && **s >= t)
                .count();
            (
                fp as f64 / n_neg as f64,
                tp as f64 / n_pos as f64,
                tp + n_neg - fp,
            )
        })
        .collect()
}

fn column(table: &ScoreTable, name: &str) -> Result<ScoreColumn> {
    Ok(table.column(name)?)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn read_csv(path: &Path) -> Result<Vec<BTreeMap<String, String>>> {
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    rdr.records()
        .map(|r| {
            let r = r?;
            Ok(headers
                .iter()
                .zip(r.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect())
        })
        .collect()
}

fn field(row: &BTreeMap<String, String>, key: &str) -> Result<f64> {
    row.get(key)
        .ok_or_else(|| anyhow!("missing column {key}"))?
        .parse()
        .map_err(|e| anyhow!("{key}: {e}"))
}

// ---- shared classification run ----

struct Classification {
    _root: tempfile::TempDir,
    config: Config,
    model_path: PathBuf,
    attack_dir: PathBuf,
}

fn classification_run() -> Result<Classification> {
    let root = tempfile::tempdir()?;
    let config = load("classification.toml", &[])?;
    let (train_dir, _) = run(Stage::Train, &config, root.path(), "train")?;
    let model_path = train_dir.join("model.json");
    let mut attack_cfg = config.clone();
    attack_cfg.set(
        "model.checkpoint",
        model_path.to_string_lossy().into_owned(),
    );
    let (attack_dir, _) = run(Stage::Attack, &attack_cfg, root.path(), "attack")?;
    Ok(Classification {
        _root: root,
        config,
        model_path,
        attack_dir,
    })
}

// ---- criteria ----

fn criterion_1(cls: &Classification) -> Result<Outcome> {
    let started = Instant::now();
    let mut c = cls.config.clone();
    c.set(
        "model.checkpoint",
        cls.model_path.to_string_lossy().into_owned(),
    );
    c.set("mope.sigma", 1e-3);
    c.set("mope.n", 10_000);
    c.set("mope.antithetic", true);
    c.set("hesslab.n_examples", 20);
    let root = tempfile::tempdir()?;
    let (dir, _) = run(Stage::Hesslab, &c, root.path(), "hesslab")?;
    let secs = started.elapsed().as_secs_f64();
    let n_params = Checkpoint::load(&cls.model_path)?
        .into_mlp()?
        .params()
        .len();
    let rows = read_csv(&dir.join("traces.csv"))?;
    ensure!(
        rows.len() == 20,
        "expected 20 trace rows, got {}",
        rows.len()
    );
    let mut rel = Vec::new();
    for r in &rows {
        let (exact, scaled) = (field(r, "exact_trace")?, field(r, "scaled_mope")?);
        rel.push((scaled - exact).abs() / exact.abs());
    }
    let err = mean(rel.iter().copied());
    Ok(Outcome {
        pass: n_params <= 5000 && err < 0.10 && secs <= 300.0,
        detail: format!(
            "{n_params} params, 20 examples, sigma=1e-3, n=1e4 antithetic: mean relative error {:.2}% in {secs:.0}s",
            100.0 * err
        ),
    })
}

fn symmetric(dim: usize, seed: u64, shift: f64) -> (ExplicitMatrix, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b: Vec<f64> = (0..dim * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            a[i * dim + j] = (0..dim)
                .map(|k| b[i * dim + k] * b[j * dim + k])
                .sum::<f64>()
                / dim as f64;
        }
        a[i * dim + i] += shift;
    }
    let trace = (0..dim).map(|i| a[i * dim + i]).sum();
    (ExplicitMatrix::new(dim, a).unwrap(), trace)
}

fn criterion_2() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut details = Vec::new();
    for (k, (dim, shift)) in [(64, 0.0), (48, 1.0), (16, 0.5)].into_iter().enumerate() {
        let (m, trace) = symmetric(dim, 10 + k as u64, shift);
        let est = hutchinson_trace(&m, 100_000, 7 + k as u64, ProbeKind::Gaussian)?;
        let rel = (est - trace).abs() / trace.abs();
        worst = worst.max(rel);
        details.push(format!("d={dim} {:.3}%", 100.0 * rel));
    }
    let (m, trace) = symmetric(64, 10, 0.0);
    let mut medians = Vec::new();
    for (k, n) in [100usize, 1_000, 10_000].into_iter().enumerate() {
        let errs: Vec<f64> = (0..20)
            .map(|r| {
                hutchinson_trace(&m, n, 1_000 * (k as u64 + 1) + r, ProbeKind::Gaussian)
                    .map(|e| (e - trace).abs())
            })
            .collect::<mia_core::Result<_>>()?;
        medians.push(median(errs));
    }
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    let slope = (medians[2].ln() - medians[0].ln()) / (2.0 * 10f64.ln());
    Ok(Outcome {
        pass: worst < 0.01 && monotone,
        detail: format!(
            "1e5 probes: {}; median |error| at n=1e2,1e3,1e4: {:.4} {:.4} {:.4} (log-log slope {slope:.2})",
            details.join(", "),
            medians[0],
            medians[1],
            medians[2]
        ),
    })
}

fn criterion_3() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scores: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
    let labels: Vec<bool> = (0..2000).map(|i| i < 1000).collect();
    let curve = roc(&scores, &labels)?;
    let a = auc(&curve);
    let dev = curve
        .points
        .iter()
        .map(|p| (p.tpr - p.fpr).abs())
        .fold(0.0, f64::max);
    Ok(Outcome {
        pass: (0.45..=0.55).contains(&a) && dev <= 0.07,
        detail: format!("AUC {a:.4}, max |TPR - FPR| {dev:.4}"),
    })
}

fn criterion_4() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let levels = [0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 0.9, 1.0];
    let (mut worst_auc, mut tpr_mismatch, mut acc_mismatch) = (0.0f64, 0, 0);
    for t in 0..100 {
        let n = rng.gen_range(2..=50);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = if t % 2 == 0 {
            (0..n).map(|_| rng.gen_range(0..5) as f64).collect()
        } else {
            (0..n).map(|_| rng.gen::<f64>()).collect()
        };
        let curve = roc(&scores, &labels)?;
        worst_auc = worst_auc.max((auc(&curve) - pairwise_auc(&scores, &labels)).abs());
        let scan = threshold_scan(&scores, &labels);
        let mut all_levels = levels.to_vec();
        all_levels.push(rng.gen());
        for &l in &all_levels {
            let oracle = scan
                .iter()
                .filter(|p| p.0 <= l)
                .map(|p| p.1)
                .fold(0.0, f64::max);
            if tpr_at_fpr(&curve, l) != oracle {
                tpr_mismatch += 1;
            }
        }
        let oracle_acc = scan.iter().map(|p| p.2).max().unwrap() as f64 / n as f64;
        if best_accuracy(&scores, &labels)? != oracle_acc {
            acc_mismatch += 1;
        }
    }
    Ok(Outcome {
        pass: worst_auc <= 1e-9 && tpr_mismatch == 0 && acc_mismatch == 0,
        detail: format!(
            "100 tables: max |AUC - pairwise| {worst_auc:.1e}, tpr_at_fpr mismatches {tpr_mismatch}, best_accuracy mismatches {acc_mismatch}"
        ),
    })
}

fn criterion_5(cls: &Classification) -> Result<Outcome> {
    let seed = cls.config.u64("seed")?;
    let data = synth_classification(&ClassificationSpec::from_config(&cls.config, seed)?)?;
    let model = Checkpoint::load(&cls.model_path)?.into_mlp()?;
    let accuracy = |xs: &[(u64, mia_core::models::LabeledPoint)]| {
        xs.iter()
            .filter(|(_, p)| model.predict(&p.features) == p.label)
            .count() as f64
            / xs.len() as f64
    };
    let (train_acc, test_acc) = (accuracy(&data.train), accuracy(&data.test));
    let table = ScoreTable::from_csv(&std::fs::read_to_string(cls.attack_dir.join("scores.csv"))?)?;
    let loss = column(&table, "loss")?;
    let mope = column(&table, "mope")?;
    let n_members = loss.labels.iter().filter(|l| l.is_member()).count();
    let n_non = loss.labels.len() - n_members;
    let loss_auc = pairwise_auc(&loss.scores, &loss.member_mask());
    let mope_auc = pairwise_auc(&mope.scores, &mope.member_mask());
    let cfg_ok = cls.config.u64("mope.n")? == 40 && cls.config.f64("mope.sigma")? == 0.05;
    let regime = train_acc >= 0.90 && train_acc - test_acc >= 0.05;
    Ok(Outcome {
        pass: cfg_ok && regime && n_members == 3000 && n_non == 3000 && loss_auc > 0.6 && mope_auc > 0.55,
        detail: format!(
            "train acc {train_acc:.3}, test acc {test_acc:.3}; {n_members}+{n_non} points; LOSS AUC {loss_auc:.4}, MoPe AUC {mope_auc:.4} (reference values 0.783 / 0.635)"
        ),
    })
}

fn criterion_6(cls: &Classification) -> Result<Outcome> {
    let seed = cls.config.u64("seed")?;
    let data = synth_classification(&ClassificationSpec::from_config(&cls.config, seed)?)?;
    let model = Checkpoint::load(&cls.model_path)?.into_mlp()?;
    let theta = model.params().values().to_vec();
    let norm = |p: &mia_core::models::LabeledPoint| -> Result<f64> {
        let (_, g) = model.loss_and_grad_at(&theta, p)?;
        Ok(g.iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let train_norms: Vec<f64> = data
        .train
        .iter()
        .map(|(_, p)| norm(p))
        .collect::<Result<_>>()?;
    let test_norms: Vec<f64> = data
        .test
        .iter()
        .map(|(_, p)| norm(p))
        .collect::<Result<_>>()?;
    let (mt, ms) = (
        mean(train_norms.iter().copied()),
        mean(test_norms.iter().copied()),
    );
    let table = ScoreTable::from_csv(&std::fs::read_to_string(cls.attack_dir.join("scores.csv"))?)?;
    let grad = column(&table, "grad_params_l2")?;
    let grad_auc = pairwise_auc(&grad.scores, &grad.member_mask());
    Ok(Outcome {
        pass: mt < ms && grad_auc > 0.5,
        detail: format!(
            "mean gradient L2 norm train {mt:.4} < test {ms:.4}; grad_params_l2 AUC {grad_auc:.4}"
        ),
    })
}

fn planted_pair() -> (ScoreColumn, ScoreColumn) {
    // Each member carries a planted signal seen through two independent noisy channels.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1000;
    let labels: Vec<Membership> = (0..n)
        .map(|i| {
            if i < n / 2 {
                Membership::Member
            } else {
                Membership::Nonmember
            }
        })
        .collect();
    let mut channel = |name: &str| {
        let scores = labels
            .iter()
            .map(|l| if l.is_member() { 1.0 } else { 0.0 } + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        ScoreColumn {
            attack: name.into(),
            ids: (0..n as u64).collect(),
            labels: labels.clone(),
            scores,
        }
    };
    (channel("a"), channel("b"))
}

fn criterion_7(cls: &Classification) -> Result<Outcome> {
    let table = ScoreTable::from_csv(&std::fs::read_to_string(cls.attack_dir.join("scores.csv"))?)?;
    let loss = column(&table, "loss")?;
    let mope = column(&table, "mope")?;
    let col_auc = |c: &ScoreColumn| pairwise_auc(&c.scores, &c.member_mask());
    let d1 = (col_auc(&ensemble_scores(&loss, &mope, 1.0)?) - col_auc(&loss)).abs();
    let d0 = (col_auc(&ensemble_scores(&loss, &mope, 0.0)?) - col_auc(&mope)).abs();

    let (a, b) = planted_pair();
    let best_single = col_auc(&a).max(col_auc(&b));
    let (mut best_w, mut best_auc) = (0.0, 0.0);
    for k in 1..20 {
        let w = k as f64 / 20.0;
        let v = col_auc(&ensemble_scores(&a, &b, w)?);
        if v > best_auc {
            best_w = w;
            best_auc = v;
        }
    }
    Ok(Outcome {
        pass: d1 <= 1e-12 && d0 <= 1e-12 && best_auc > best_single,
        detail: format!(
            "|w=1 - LOSS| {d1:.1e}, |w=0 - MoPe| {d0:.1e}; planted pair: constituents {:.4} / {:.4}, w={best_w} gives {best_auc:.4}",
            col_auc(&a),
            col_auc(&b)
        ),
    })
}

fn cand(suffix: &[u32], score: f64) -> Candidate {
    Candidate {
        suffix: suffix.to_vec(),
        score: Some(score),
    }
}

fn hand_built() -> CandidateSet {
    let p = |truth: &[u32], candidates: Vec<Candidate>, selected: usize| PrefixCandidates {
        prefix: vec![0, 0],
        truth: truth.to_vec(),
        candidates,
        selected: Some(selected),
    };
    CandidateSet {
        prefixes: vec![
            // correct pick, score 5
            p(
                &[1, 2, 3],
                vec![cand(&[1, 2, 3], 5.0), cand(&[1, 2, 4], 1.0)],
                0,
            ),
            // wrong pick (2 of 3 tokens), truth present among candidates, score 4
            p(
                &[4, 5, 6],
                vec![cand(&[4, 5, 7], 4.0), cand(&[4, 5, 6], 3.0)],
                0,
            ),
            // wrong pick (0 of 3), truth absent, score 3
            p(
                &[7, 7, 7],
                vec![cand(&[1, 1, 1], 3.0), cand(&[2, 2, 2], 2.0)],
                0,
            ),
            // correct pick, score 2
            p(&[8, 9, 8], vec![cand(&[8, 9, 8], 2.0)], 0),
        ],
        fallbacks: 0,
    }
}

struct OracleMetrics {
    ema: f64,
    tla: f64,
    any: f64,
    recall: Vec<f64>,
}

fn oracle_metrics(set: &CandidateSet, max_k: usize) -> OracleMetrics {
    let m = set.prefixes.len() as f64;
    let selected: Vec<&Candidate> = set
        .prefixes
        .iter()
        .map(|p| &p.candidates[p.selected.unwrap()])
        .collect();
    let correct: Vec<bool> = set
        .prefixes
        .iter()
        .zip(&selected)
        .map(|(p, c)| c.suffix == p.truth)
        .collect();
    let tokens: usize = set.prefixes.iter().map(|p| p.truth.len()).sum();
    let token_hits: usize = set
        .prefixes
        .iter()
        .zip(&selected)
        .map(|(p, c)| {
            p.truth
                .iter()
                .zip(&c.suffix)
                .filter(|(a, b)| a == b)
                .count()
        })
        .sum();
    let any = set
        .prefixes
        .iter()
        .filter(|p| p.candidates.iter().any(|c| c.suffix == p.truth))
        .count();
    // Every prefix of the confidence-sorted predictions with at most k errors; keep the longest.
    let mut order: Vec<usize> = (0..set.prefixes.len()).collect();
    order.sort_by(|&a, &b| {
        selected[b]
            .score
            .unwrap()
            .total_cmp(&selected[a].score.unwrap())
            .then(a.cmp(&b))
    });
    let recall = (0..=max_k)
        .map(|k| {
            let mut best = 0;
            for len in 0..=order.len() {
                let errors = order[..len].iter().filter(|&&i| !correct[i]).count();
                if errors <= k {
                    best = best.max(order[..len].iter().filter(|&&i| correct[i]).count());
                }
            }
            best as f64 / m
        })
        .collect();
    OracleMetrics {
        ema: correct.iter().filter(|c| **c).count() as f64 / m,
        tla: token_hits as f64 / tokens as f64,
        any: any as f64 / m,
        recall,
    }
}

fn random_set(rng: &mut ChaCha8Rng) -> CandidateSet {
    let len = rng.gen_range(1..=4);
    let prefixes = (0..rng.gen_range(1..=8))
        .map(|_| {
            let truth: Vec<u32> = (0..len).map(|_| rng.gen_range(0..3)).collect();
            let candidates: Vec<Candidate> = (0..rng.gen_range(1..=5))
                .map(|_| {
                    let suffix: Vec<u32> = if rng.gen_bool(0.3) {
                        truth.clone()
                    } else {
                        (0..len).map(|_| rng.gen_range(0..3)).collect()
                    };
                    cand(&suffix, rng.gen_range(0..6) as f64)
                })
                .collect();
            let mut selected = 0;
            for (j, c) in candidates.iter().enumerate() {
                if c.score.unwrap() > candidates[selected].score.unwrap() {
                    selected = j;
                }
            }
            PrefixCandidates {
                prefix: vec![0],
                truth,
                candidates,
                selected: Some(selected),
            }
        })
        .collect();
    CandidateSet {
        prefixes,
        fallbacks: 0,
    }
}

fn metrics_agree(set: &CandidateSet, max_k: usize) -> Result<bool> {
    let o = oracle_metrics(set, max_k);
    let mut ok = exact_match_accuracy(set)? == o.ema
        && token_level_accuracy(set)? == o.tla
        && any_match_accuracy(set) == o.any;
    for (k, r) in o.recall.iter().enumerate() {
        ok &= recall_at_k_errors(set, k)? == *r;
    }
    Ok(ok)
}

fn criterion_8() -> Result<Outcome> {
    let root = tempfile::tempdir()?;
    let config = load("text.toml", &[])?;
    let (dir, _) = run(Stage::Extract, &config, root.path(), "extract")?;
    let rows = read_csv(&dir.join("extraction.csv"))?;
    let correct = rows
        .iter()
        .filter(|r| r.get("exact_match").map(String::as_str) == Some("true"))
        .count();
    let ema = correct as f64 / rows.len() as f64;

    let hand = hand_built();
    let hand_expected = OracleMetrics {
        ema: 0.5,
        tla: 8.0 / 12.0,
        any: 0.75,
        recall: vec![0.25, 0.25, 0.5],
    };
    let mut hand_ok = metrics_agree(&hand, 2)?;
    hand_ok &= exact_match_accuracy(&hand)? == hand_expected.ema
        && token_level_accuracy(&hand)? == hand_expected.tla
        && any_match_accuracy(&hand) == hand_expected.any;
    for (k, r) in hand_expected.recall.iter().enumerate() {
        hand_ok &= recall_at_k_errors(&hand, k)? == *r;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut oracle_mismatch, mut any_below_exact) = (0, 0);
    for _ in 0..100 {
        let set = random_set(&mut rng);
        if !metrics_agree(&set, 3)? {
            oracle_mismatch += 1;
        }
        let (em, am) = (exact_match(&set)?, any_match(&set));
        if am.count < em.count {
            any_below_exact += 1;
        }
    }
    Ok(Outcome {
        pass: rows.len() == 20 && ema == 1.0 && hand_ok && oracle_mismatch == 0 && any_below_exact == 0,
        detail: format!(
            "{} canaries, LOSS ranking: exact match {ema:.2}; hand-built set {}; 100 random sets: {oracle_mismatch} oracle mismatches, {any_below_exact} with any_match < exact_match",
            rows.len(),
            if hand_ok { "matches" } else { "MISMATCH" }
        ),
    })
}

fn mia_audit(args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_mia-audit"))
        .args(args)
        .output()?;
    ensure!(
        out.status.success(),
        "mia-audit {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

fn csv_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.extension().and_then(|x| x.to_str()) == Some("csv") {
            files.insert(
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p)?,
            );
        }
    }
    Ok(files)
}

fn criterion_9() -> Result<Outcome> {
    let root = tempfile::tempdir()?;
    let text = configs().join("text.toml");
    let cls = configs().join("classification.toml");
    let (text, cls) = (text.to_str().unwrap(), cls.to_str().unwrap());
    let small_text = [
        "--set",
        "corpus.n_train=40",
        "--set",
        "corpus.n_test=40",
        "--set",
        "corpus.n_canaries=5",
        "--set",
        "train.epochs=3",
        "--set",
        "mope.n=5",
        "--set",
        "detect.n=3",
        "--set",
        "sweep.hidden=[8,16]",
    ];
    let small_cls = [
        "--set",
        "data.n_train=200",
        "--set",
        "data.n_test=200",
        "--set",
        "train.epochs=3",
        "--set",
        "hesslab.n_examples=4",
        "--set",
        "mope.n=10",
    ];
    let r = root.path();
    let p = |run: usize, name: &str| {
        r.join(format!("{name}{run}"))
            .to_string_lossy()
            .into_owned()
    };
    let mut compared = 0;
    let mut differing = Vec::new();
    let mut runs: Vec<Vec<String>> = Vec::new();
    for run in 0..2 {
        let mut calls: Vec<Vec<String>> = Vec::new();
        let with = |cmd: &str, cfg: &str, out: String, extra: &[&str], small: &[&str]| {
            let mut v: Vec<String> = [cmd, "--config", cfg, "--seed", "7", "--out", &out]
                .iter()
                .map(|s| s.to_string())
                .collect();
            v.extend(small.iter().chain(extra).map(|s| s.to_string()));
            v
        };
        calls.push(with(
            "attack",
            text,
            p(run, "attack_text"),
            &[],
            &small_text,
        ));
        calls.push(with("attack", cls, p(run, "attack_cls"), &[], &small_cls));
        let scores = format!("{}/scores.csv", p(run, "attack_text"));
        calls.push(with(
            "eval",
            text,
            p(run, "eval"),
            &["--scores", &scores],
            &small_text,
        ));
        calls.push(with(
            "scatter",
            text,
            p(run, "scatter"),
            &["--scores", &scores],
            &small_text,
        ));
        calls.push(with("extract", text, p(run, "extract"), &[], &small_text));
        calls.push(with("order-study", text, p(run, "order"), &[], &small_text));
        calls.push(with("sweep", text, p(run, "sweep"), &[], &small_text));
        calls.push(with("hesslab", cls, p(run, "hesslab"), &[], &small_cls));
        calls.push(with("train", text, p(run, "train"), &[], &small_text));
        for c in &calls {
            let args: Vec<&str> = c.iter().map(String::as_str).collect();
            mia_audit(&args)?;
        }
        runs.push(calls.iter().map(|c| c[6].clone()).collect());
    }
    for (a, b) in runs[0].iter().zip(&runs[1]) {
        let (fa, fb) = (csv_files(Path::new(a))?, csv_files(Path::new(b))?);
        ensure!(!fa.is_empty(), "{a} wrote no CSV files");
        ensure!(
            fa.keys().eq(fb.keys()),
            "{a} and {b} wrote different file sets"
        );
        for (name, bytes) in &fa {
            compared += 1;
            if fb[name] != *bytes {
                differing.push(name.clone());
            }
        }
    }
    let scores_same = std::fs::read(format!("{}/scores.csv", runs[0][0]))?
        == std::fs::read(format!("{}/scores.csv", runs[1][0]))?;
    Ok(Outcome {
        pass: differing.is_empty() && scores_same,
        detail: format!(
            "9 subcommands run twice with --seed 7: {compared} CSV files compared, {} differ{}",
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(" ({})", differing.join(", "))
            }
        ),
    })
}

fn criterion_10() -> Result<Outcome> {
    let root = tempfile::tempdir()?;
    let config = load(
        "text.toml",
        &[
            ("corpus.n_train", 2000.into()),
            ("train.learning_rate", 0.02.into()),
        ],
    )?;
    let (dir, _) = run(Stage::OrderStudy, &config, root.path(), "order")?;
    let rows = read_csv(&dir.join("order_study.csv"))?;
    ensure!(rows.len() == 10, "expected 10 deciles, got {}", rows.len());
    let log = read_csv(&dir.join("training_log.csv"))?;
    let single_pass = log
        .iter()
        .all(|r| r.get("epoch").map(String::as_str) == Some("0"));
    let losses: Vec<f64> = rows
        .iter()
        .map(|r| field(r, "mean_loss"))
        .collect::<Result<_>>()?;
    let mopes: Vec<String> = rows
        .iter()
        .map(|r| field(r, "mean_mope").map(|v| format!("{v:.2e}")))
        .collect::<Result<_>>()?;
    let (first, last) = (losses[0], losses[9]);
    Ok(Outcome {
        pass: single_pass && last <= first,
        detail: format!(
            "single pass over {} steps: earliest decile LOSS {first:.4}, latest {last:.4}; MoPe by decile [{}]",
            log.len(),
            mopes.join(" ")
        ),
    })
}

fn main() {
    let mut failed = 0;
    let mut report = |n: u32, name: &str, started: Instant, r: Result<Outcome>| {
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match r {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {n:>2} {} {name}: {detail} [{secs:.1}s]",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    let t = Instant::now();
    let cls = classification_run();
    let shared = format!("{:.1}s", t.elapsed().as_secs_f64());
    println!("classification model trained and attacked in {shared}");

    let with_cls = |f: fn(&Classification) -> Result<Outcome>| match &cls {
        Ok(c) => f(c),
        Err(e) => Err(anyhow!("classification run failed: {e:#}")),
    };
    let t = Instant::now();
    report(
        1,
        "MoPe matches the Hessian trace",
        t,
        with_cls(criterion_1),
    );
    let t = Instant::now();
    report(2, "Hutchinson trace estimator", t, criterion_2());
    let t = Instant::now();
    report(3, "random-score baseline", t, criterion_3());
    let t = Instant::now();
    report(4, "AUC and threshold oracles", t, criterion_4());
    let t = Instant::now();
    report(
        5,
        "overfit MLP: LOSS and MoPe beat chance",
        t,
        with_cls(criterion_5),
    );
    let t = Instant::now();
    report(6, "gradient-norm attack", t, with_cls(criterion_6));
    let t = Instant::now();
    report(7, "ensemble reductions", t, with_cls(criterion_7));
    let t = Instant::now();
    report(8, "extraction pipeline", t, criterion_8());
    let t = Instant::now();
    report(9, "CLI determinism", t, criterion_9());
    let t = Instant::now();
    report(10, "training-order direction", t, criterion_10());

    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all 10 criteria passed");
}
