//! The nine pipeline stages behind `mia-audit`. Each reads a [`Config`],
//! writes its outputs into a fresh run directory and returns the manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mia_core::attacks::{
    ensemble_scores, run_attack_suite, AttackSpec, DetectConfig, GradConfig, GradTarget,
    Membership, MopeConfig, NormOrder, ScoreTable,
};
use mia_core::diffcore::Objective;
use mia_core::extraction::{
    generate_candidates, rank_candidates, read_benchmark, results_csv, summarize, write_benchmark,
    DecodingParams, RankingAttack,
};
use mia_core::hessianlab::mope_trace_experiment;
use mia_core::metrics::{evaluate, fmt_f64, EvalReport, DEFAULT_FPR_LEVELS};
use mia_core::models::{
    train, train_classifier, Activation, Checkpoint, LabeledPoint, LmConfig, LmModel, MlpConfig,
    MlpModel, TokenSequence, TrainConfig, TrainingLog,
};
use serde_json::json;

use crate::classification::{synth_classification, ClassificationData, ClassificationSpec};
use crate::config::Config;
use crate::corpus::{synth_text_corpus, CorpusSpec, TextCorpus};
use crate::rundir::{file_stem, RunDir, RunManifest};
use crate::studies::{
    model_size_sweep, order_study_csv, scatter_export, sweep_csv, training_order_study,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Train,
    Attack,
    Eval,
    Hesslab,
    Extract,
    OrderStudy,
    Sweep,
    Scatter,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Train => "train",
            Stage::Attack => "attack",
            Stage::Eval => "eval",
            Stage::Hesslab => "hesslab",
            Stage::Extract => "extract",
            Stage::OrderStudy => "order-study",
            Stage::Sweep => "sweep",
            Stage::Scatter => "scatter",
        }
    }
}

/// Runs `stage` into `out`. The config must already carry every override.
pub fn run_stage(stage: Stage, config: &Config, out: &Path, force: bool) -> Result<RunManifest> {
    let seed = config.u64("seed")?;
    let mut dir = RunDir::create(out, force)?;
    dir.write_snapshot(config)?;
    let mut ctx = StageOutput::default();
    match stage {
        Stage::Synth => synth(config, seed, &mut dir, &mut ctx),
        Stage::Train => train_stage(config, seed, &mut dir, &mut ctx),
        Stage::Attack => attack(config, seed, &mut dir, &mut ctx),
        Stage::Eval => eval(config, &mut dir, &mut ctx),
        Stage::Hesslab => hesslab(config, seed, &mut dir, &mut ctx),
        Stage::Extract => extract(config, seed, &mut dir, &mut ctx),
        Stage::OrderStudy => order_study(config, seed, &mut dir, &mut ctx),
        Stage::Sweep => sweep(config, seed, &mut dir, &mut ctx),
        Stage::Scatter => scatter(config, &mut dir, &mut ctx),
    }?;
    let manifest = RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        command: stage.name().to_string(),
        seed,
        config_hash: config.hash(),
        config: config.to_json(),
        data_hash: ctx.data_hash,
        reports: ctx.reports,
        failures: ctx.failures,
        details: serde_json::Value::Object(ctx.details),
        files: Vec::new(),
    };
    dir.finish(manifest, &ctx.report)
}

#[derive(Default)]
struct StageOutput {
    data_hash: Option<String>,
    reports: Vec<EvalReport>,
    failures: usize,
    details: serde_json::Map<String, serde_json::Value>,
    report: String,
}

impl StageOutput {
    fn detail(&mut self, key: &str, value: impl serde::Serialize) {
        self.details
            .insert(key.to_string(), serde_json::to_value(value).unwrap());
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.report.push_str(text.as_ref());
        self.report.push('\n');
    }
}

// ---- config readers ----

enum Task {
    Text,
    Classification,
}

fn task(c: &Config) -> Result<Task> {
    match c.str("task")? {
        "text" => Ok(Task::Text),
        "classification" => Ok(Task::Classification),
        other => bail!("unknown task `{other}`; expected `text` or `classification`"),
    }
}

fn opt_f64(c: &Config, key: &str, default: f64) -> Result<f64> {
    if c.contains(key) {
        c.f64(key)
    } else {
        Ok(default)
    }
}

fn train_config(c: &Config, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: c.f64("train.learning_rate")?,
        beta1: opt_f64(c, "train.beta1", d.beta1)?,
        beta2: opt_f64(c, "train.beta2", d.beta2)?,
        epsilon: opt_f64(c, "train.epsilon", d.epsilon)?,
        batch_size: c.usize("train.batch_size")?,
        epochs: c.usize("train.epochs")?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn lm_config(c: &Config, spec: &CorpusSpec) -> Result<LmConfig> {
    Ok(LmConfig {
        vocab_size: spec.vocab_size,
        context: c.usize("model.context")?,
        embed_dim: c.usize("model.embed_dim")?,
        hidden: c.usize("model.hidden")?,
        max_len: spec.sequence_length,
    })
}

fn mlp_config(c: &Config, spec: &ClassificationSpec) -> Result<MlpConfig> {
    let mut widths = vec![spec.dim];
    widths.extend(c.usize_list("model.hidden_widths")?);
    widths.push(spec.classes);
    let activation = if c.contains("model.activation") {
        match c.str("model.activation")? {
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            other => bail!("unknown activation `{other}`"),
        }
    } else {
        Activation::Tanh
    };
    Ok(MlpConfig { widths, activation })
}

fn mope_config(c: &Config, seed: u64) -> Result<MopeConfig> {
    Ok(MopeConfig {
        sigma: c.f64("mope.sigma")?,
        n_perturbations: c.u64("mope.n")?,
        seed,
        antithetic: if c.contains("mope.antithetic") {
            c.bool("mope.antithetic")?
        } else {
            false
        },
    })
}

fn detect_config(c: &Config, seed: u64) -> Result<DetectConfig> {
    let cfg = DetectConfig {
        n_perturbations: c.u64("detect.n")?,
        mask_fraction: c.f64("detect.mask_fraction")?,
        span: c.usize("detect.span")?,
        seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn grad_config(c: &Config) -> Result<GradConfig> {
    let norm = match c.str("grad.norm")? {
        "l1" => NormOrder::L1,
        "l2" => NormOrder::L2,
        "linf" => NormOrder::Linf,
        other => bail!("unknown grad.norm `{other}`; expected l1, l2 or linf"),
    };
    let target = match c.str("grad.target")? {
        "input" => GradTarget::Input,
        "params" => GradTarget::Params,
        other => bail!("unknown grad.target `{other}`; expected input or params"),
    };
    Ok(GradConfig { norm, target })
}

fn attack_specs(c: &Config, seed: u64) -> Result<Vec<AttackSpec>> {
    let names = c.str_list("attack.list")?;
    ensure!(!names.is_empty(), "attack.list is empty");
    names
        .iter()
        .map(|n| match n.as_str() {
            "loss" => Ok(AttackSpec::Loss),
            "mope" => Ok(AttackSpec::Mope(mope_config(c, seed)?)),
            "detectgpt" => Ok(AttackSpec::DetectGpt(detect_config(c, seed)?)),
            "grad" => Ok(AttackSpec::Grad(grad_config(c)?)),
            other => bail!("unknown attack `{other}`; expected loss, mope, detectgpt or grad"),
        })
        .collect()
}

fn fpr_levels(c: &Config) -> Result<Vec<f64>> {
    if c.contains("eval.fpr_levels") {
        let l = c.f64_list("eval.fpr_levels")?;
        ensure!(
            l.iter().all(|v| (0.0..=1.0).contains(v)),
            "eval.fpr_levels must lie in [0, 1]"
        );
        Ok(l)
    } else {
        Ok(DEFAULT_FPR_LEVELS.to_vec())
    }
}

fn decoding(c: &Config) -> Result<DecodingParams> {
    let top_k = c.usize("decoding.top_k")?;
    let d = DecodingParams {
        top_k: (top_k > 0).then_some(top_k),
        nucleus_mass: c.f64("decoding.nucleus_mass")?,
        typical_mass: c.f64("decoding.typical_mass")?,
        temperature: c.f64("decoding.temperature")?,
        repetition_penalty: c.f64("decoding.repetition_penalty")?,
    };
    d.validate()?;
    Ok(d)
}

fn take_prefix<T: Clone>(c: &Config, key: &str, xs: &[(u64, T)]) -> Result<Vec<(u64, T)>> {
    let n = if c.contains(key) {
        c.usize(key)?.min(xs.len())
    } else {
        xs.len()
    };
    Ok(xs[..n].to_vec())
}

// ---- data and models ----

fn text_corpus(c: &Config, seed: u64, ctx: &mut StageOutput) -> Result<TextCorpus> {
    let corpus =
        synth_text_corpus(&CorpusSpec::from_config(c, seed)?).context("building corpus")?;
    ctx.data_hash = Some(corpus.split_hash());
    Ok(corpus)
}

fn classification_data(c: &Config, seed: u64, ctx: &mut StageOutput) -> Result<ClassificationData> {
    let data = synth_classification(&ClassificationSpec::from_config(c, seed)?)
        .context("building data")?;
    ctx.data_hash = Some(data.split_hash());
    Ok(data)
}

fn mean_loss<M: Objective>(m: &M, xs: &[(u64, M::Example)]) -> Result<f64> {
    let mut s = 0.0;
    for (_, x) in xs {
        s += m.loss(x)?;
    }
    Ok(s / xs.len().max(1) as f64)
}

fn load_checkpoint(c: &Config) -> Result<Option<Checkpoint>> {
    if !c.contains("model.checkpoint") {
        return Ok(None);
    }
    let path = c.str("model.checkpoint")?;
    Ok(Some(
        Checkpoint::load(Path::new(path)).with_context(|| format!("loading checkpoint {path}"))?,
    ))
}

fn obtain_lm(
    c: &Config,
    seed: u64,
    corpus: &TextCorpus,
    ctx: &mut StageOutput,
) -> Result<(LmModel, Option<TrainingLog>)> {
    if let Some(ck) = load_checkpoint(c)? {
        let m = ck.into_lm()?;
        ensure!(
            m.config().vocab_size == corpus.spec.vocab_size,
            "checkpoint vocabulary {} does not match corpus.vocab_size {}",
            m.config().vocab_size,
            corpus.spec.vocab_size
        );
        ctx.detail("model_source", "checkpoint");
        return Ok((m, None));
    }
    let init = LmModel::init(lm_config(c, &corpus.spec)?, seed)?;
    let cfg = train_config(c, seed)?;
    let (m, log) =
        train(&init, &corpus.train_sequences(), &cfg, |_, _| false).context("training LM")?;
    ctx.detail("model_source", "trained");
    ctx.detail("train_config", &cfg);
    Ok((m, Some(log)))
}

fn obtain_mlp(
    c: &Config,
    seed: u64,
    data: &ClassificationData,
    ctx: &mut StageOutput,
) -> Result<(MlpModel, Option<TrainingLog>)> {
    if let Some(ck) = load_checkpoint(c)? {
        let m = ck.into_mlp()?;
        ensure!(
            m.config().widths.first() == Some(&data.spec.dim) && m.n_classes() == data.spec.classes,
            "checkpoint shape does not match data.dim / data.classes"
        );
        ctx.detail("model_source", "checkpoint");
        return Ok((m, None));
    }
    let init = MlpModel::init(mlp_config(c, &data.spec)?, seed)?;
    let cfg = train_config(c, seed)?;
    let target = if c.contains("train.target_accuracy") {
        Some(c.f64("train.target_accuracy")?)
    } else {
        None
    };
    let (m, log) =
        train_classifier(&init, &data.train_points(), &cfg, target).context("training MLP")?;
    ctx.detail("model_source", "trained");
    ctx.detail("train_config", &cfg);
    Ok((m, Some(log)))
}

fn mlp_accuracy(m: &MlpModel, xs: &[(u64, LabeledPoint)]) -> f64 {
    let pts: Vec<LabeledPoint> = xs.iter().map(|(_, p)| p.clone()).collect();
    m.accuracy(&pts)
}

fn training_log_csv(log: &TrainingLog) -> String {
    let mut out = String::from("step,epoch,mean_loss,batch\n");
    for s in &log.steps {
        let batch: Vec<String> = s.batch.iter().map(|i| i.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            s.step,
            s.epoch,
            fmt_f64(s.mean_loss),
            batch.join(" ")
        )
        .unwrap();
    }
    out
}

fn sequences_jsonl(xs: &[(u64, TokenSequence)]) -> String {
    xs.iter()
        .map(|(id, s)| json!({"id": id, "tokens": s}).to_string() + "\n")
        .collect()
}

fn points_csv(xs: &[(u64, LabeledPoint)], dim: usize) -> String {
    let mut out = String::from("id,label");
    for j in 0..dim {
        write!(out, ",x{j}").unwrap();
    }
    out.push('\n');
    for (id, p) in xs {
        write!(out, "{id},{}", p.label).unwrap();
        for f in &p.features {
            write!(out, ",{}", fmt_f64(*f)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Writes `roc_<attack>.csv` for every column and collects the reports.
fn evaluate_table(
    table: &ScoreTable,
    levels: &[f64],
    dir: &mut RunDir,
    ctx: &mut StageOutput,
) -> Result<()> {
    ctx.line(format!(
        "{:<28} {:>8} {}",
        "attack", "auc", "tpr@fpr / best_accuracy"
    ));
    for name in table.attacks() {
        let col = table.column(&name)?;
        let (report, curve) = evaluate(&name, &col.scores, &col.member_mask(), levels)
            .with_context(|| format!("evaluating `{name}`"))?;
        dir.write(&format!("roc_{}.csv", file_stem(&name)), curve.to_csv())?;
        let tprs: Vec<String> = report
            .tpr_at
            .iter()
            .map(|(k, v)| format!("{k}:{v:.4}"))
            .collect();
        ctx.line(format!(
            "{:<28} {:>8.4} {} / {:.4}",
            name,
            report.auc,
            tprs.join(" "),
            report.best_accuracy
        ));
        ctx.reports.push(report);
    }
    Ok(())
}

/// Every example id must carry one label across all attacks.
fn check_split_hygiene(table: &ScoreTable) -> Result<()> {
    let mut labels: HashMap<u64, Membership> = HashMap::new();
    for r in &table.records {
        if let Some(prev) = labels.insert(r.example_id, r.label) {
            ensure!(
                prev == r.label,
                "example {} appears as both member and nonmember",
                r.example_id
            );
        }
    }
    Ok(())
}

// ---- stages ----

fn synth(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    match task(c)? {
        Task::Text => {
            let corpus = text_corpus(c, seed, ctx)?;
            dir.write("train.jsonl", sequences_jsonl(&corpus.train))?;
            dir.write("test.jsonl", sequences_jsonl(&corpus.test))?;
            dir.write("benchmark.jsonl", write_benchmark(&corpus.benchmark))?;
            ctx.detail("corpus_spec_hash", corpus.spec.hash());
            ctx.detail("canary_ids", &corpus.canary_ids);
            ctx.line(format!(
                "text corpus: {} train ({} canaries), {} test",
                corpus.train.len(),
                corpus.canary_ids.len(),
                corpus.test.len()
            ));
        }
        Task::Classification => {
            let data = classification_data(c, seed, ctx)?;
            dir.write("train.csv", points_csv(&data.train, data.spec.dim))?;
            dir.write("test.csv", points_csv(&data.test, data.spec.dim))?;
            ctx.detail("data_spec_hash", data.spec.hash());
            ctx.line(format!(
                "classification data: {} train, {} test",
                data.train.len(),
                data.test.len()
            ));
        }
    }
    Ok(())
}

fn train_stage(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    ensure!(
        !c.contains("model.checkpoint"),
        "train builds a new model; remove model.checkpoint"
    );
    let (ck, log) = match task(c)? {
        Task::Text => {
            let corpus = text_corpus(c, seed, ctx)?;
            let (m, log) = obtain_lm(c, seed, &corpus, ctx)?;
            let (tr, te) = (mean_loss(&m, &corpus.train)?, mean_loss(&m, &corpus.test)?);
            ctx.detail("train_mean_loss", tr);
            ctx.detail("test_mean_loss", te);
            ctx.line(format!(
                "LM with {} parameters: train loss {tr:.4}, test loss {te:.4}",
                m.config().n_params()
            ));
            (
                Checkpoint::from_lm(&m, Some(train_config(c, seed)?)),
                log.unwrap(),
            )
        }
        Task::Classification => {
            let data = classification_data(c, seed, ctx)?;
            let (m, log) = obtain_mlp(c, seed, &data, ctx)?;
            let (tr, te) = (mlp_accuracy(&m, &data.train), mlp_accuracy(&m, &data.test));
            ctx.detail("train_accuracy", tr);
            ctx.detail("test_accuracy", te);
            ctx.line(format!(
                "MLP with {} parameters: train accuracy {tr:.4}, test accuracy {te:.4}",
                m.config().n_params()
            ));
            (
                Checkpoint::from_mlp(&m, Some(train_config(c, seed)?)),
                log.unwrap(),
            )
        }
    };
    ctx.detail("epochs_run", log.epochs_run);
    ctx.detail("stopped_early", log.stopped_early);
    ctx.line(format!(
        "{} epochs, {} steps",
        log.epochs_run,
        log.steps.len()
    ));
    dir.write("model.json", ck.to_json())?;
    dir.write("training_log.csv", training_log_csv(&log))?;
    Ok(())
}

fn attack(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let specs = attack_specs(c, seed)?;
    let levels = fpr_levels(c)?;
    let out = match task(c)? {
        Task::Text => {
            let corpus = text_corpus(c, seed, ctx)?;
            let (m, _) = obtain_lm(c, seed, &corpus, ctx)?;
            let members = take_prefix(c, "attack.n_members", &corpus.train)?;
            let nonmembers = take_prefix(c, "attack.n_nonmembers", &corpus.test)?;
            run_attack_suite(&m, &members, &nonmembers, &specs).context("scoring")?
        }
        Task::Classification => {
            let data = classification_data(c, seed, ctx)?;
            let (m, _) = obtain_mlp(c, seed, &data, ctx)?;
            ctx.detail("train_accuracy", mlp_accuracy(&m, &data.train));
            ctx.detail("test_accuracy", mlp_accuracy(&m, &data.test));
            let members = take_prefix(c, "attack.n_members", &data.train)?;
            let nonmembers = take_prefix(c, "attack.n_nonmembers", &data.test)?;
            run_attack_suite(&m, &members, &nonmembers, &specs).context("scoring")?
        }
    };
    let mut table = out.table;
    if c.contains("ensemble.weight") {
        let a = table.column(c.str("ensemble.a")?)?;
        let b = table.column(c.str("ensemble.b")?)?;
        let col = ensemble_scores(&a, &b, c.f64("ensemble.weight")?).context("ensemble")?;
        table.push_column(&col);
    }
    dir.write("scores.csv", table.to_csv())?;
    evaluate_table(&table, &levels, dir, ctx)?;

    let mut by_attack: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for f in &out.failures {
        by_attack
            .entry(f.attack.clone())
            .or_insert((0, f.message.clone()))
            .0 += 1;
    }
    for (a, (n, msg)) in &by_attack {
        ctx.line(format!("{a}: {n} examples failed ({msg})"));
    }
    ctx.failures = out.failures.len();
    ctx.detail(
        "failures_by_attack",
        by_attack
            .iter()
            .map(|(a, (n, m))| (a.clone(), json!({"count": n, "first_message": m})))
            .collect::<BTreeMap<_, _>>(),
    );
    ctx.detail("mope_excluded_draws", out.mope_excluded_draws);
    ctx.detail("mope_draws", out.mope_draw_log.len());
    Ok(())
}

fn eval(c: &Config, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let path = c.str("eval.scores")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading scores {path}"))?;
    let table = ScoreTable::from_csv(&text)?;
    check_split_hygiene(&table)?;
    let levels = fpr_levels(c)?;
    dir.write("scores.csv", table.to_csv())?;
    evaluate_table(&table, &levels, dir, ctx)
}

fn hesslab(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let mope = mope_config(c, seed)?;
    let n = c.usize("hesslab.n_examples")?;
    ensure!(n >= 2, "hesslab.n_examples must be at least 2");
    let h = opt_f64(
        c,
        "hesslab.step",
        mia_core::hessianlab::DEFAULT_SECOND_DIFF_STEP,
    )?;
    let pick = |train: usize, test: usize| {
        let m = (n / 2).min(train);
        (m, (n - m).min(test))
    };
    let report = match task(c)? {
        Task::Text => {
            let corpus = text_corpus(c, seed, ctx)?;
            let (m, _) = obtain_lm(c, seed, &corpus, ctx)?;
            let (a, b) = pick(corpus.train.len(), corpus.test.len());
            let ex: Vec<_> = corpus.train[..a]
                .iter()
                .map(|(i, x)| (*i, Membership::Member, x.clone()))
                .chain(
                    corpus.test[..b]
                        .iter()
                        .map(|(i, x)| (*i, Membership::Nonmember, x.clone())),
                )
                .collect();
            mope_trace_experiment(&m, &ex, &mope, h)?
        }
        Task::Classification => {
            let data = classification_data(c, seed, ctx)?;
            let (m, _) = obtain_mlp(c, seed, &data, ctx)?;
            let (a, b) = pick(data.train.len(), data.test.len());
            let ex: Vec<_> = data.train[..a]
                .iter()
                .map(|(i, x)| (*i, Membership::Member, x.clone()))
                .chain(
                    data.test[..b]
                        .iter()
                        .map(|(i, x)| (*i, Membership::Nonmember, x.clone())),
                )
                .collect();
            mope_trace_experiment(&m, &ex, &mope, h)?
        }
    };
    dir.write("traces.csv", report.to_csv())?;
    ctx.report.push_str(&report.summary());
    ctx.detail("correlation", report.correlation);
    ctx.detail("mean_exact_trace", report.mean_exact_trace);
    ctx.detail("mean_scaled_mope", report.mean_scaled_mope);
    ctx.detail("mean_relative_error", report.mean_relative_error);
    Ok(())
}

fn extract(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let Task::Text = task(c)? else {
        bail!("extract needs task = \"text\"")
    };
    let corpus = text_corpus(c, seed, ctx)?;
    let pairs = if c.contains("extract.benchmark") {
        let path = c.str("extract.benchmark")?;
        read_benchmark(
            &std::fs::read_to_string(path).with_context(|| format!("reading benchmark {path}"))?,
        )?
    } else {
        ensure!(
            !corpus.benchmark.is_empty(),
            "corpus has no canaries; set corpus.n_canaries or extract.benchmark"
        );
        corpus.benchmark.clone()
    };
    let attack = match c.str("extract.attack")? {
        "loss" => RankingAttack::Loss,
        "mope" => RankingAttack::Mope(mope_config(c, seed)?),
        other => bail!("unknown extract.attack `{other}`; expected loss or mope"),
    };
    let n = c.usize("extract.n_candidates")?;
    let k = c.usize("extract.k_errors")?;
    let decoding = decoding(c)?;
    let (m, _) = obtain_lm(c, seed, &corpus, ctx)?;
    let set =
        generate_candidates(&m, &pairs, n, &decoding, seed).context("generating candidates")?;
    let ranked = rank_candidates(set, &attack, &m).context("ranking candidates")?;
    let summary = summarize(&ranked, attack.name(), k)?;
    dir.write("benchmark.jsonl", write_benchmark(&pairs))?;
    dir.write("extraction.csv", results_csv(&ranked)?)?;
    let mut cands = String::from("prefix_index,candidate,score,correct,suffix\n");
    for (i, p) in ranked.prefixes.iter().enumerate() {
        for (j, cand) in p.candidates.iter().enumerate() {
            let toks: Vec<String> = cand.suffix.iter().map(|t| t.to_string()).collect();
            writeln!(
                cands,
                "{i},{j},{},{},{}",
                fmt_f64(cand.score.unwrap()),
                cand.suffix == p.truth,
                toks.join(" ")
            )
            .unwrap();
        }
    }
    dir.write("candidates.csv", cands)?;
    ctx.line(format!(
        "{} prefixes x {} candidates, ranked by {}",
        summary.n_prefixes, n, summary.attack
    ));
    ctx.line(format!(
        "exact match accuracy     {:.4}",
        summary.exact_match_accuracy
    ));
    ctx.line(format!(
        "token level accuracy     {:.4}",
        summary.token_level_accuracy
    ));
    ctx.line(format!(
        "any match accuracy       {:.4}",
        summary.any_match_accuracy
    ));
    ctx.line(format!(
        "recall at {k} errors      {:.4}",
        summary.recall_at_k_errors
    ));
    match summary.auc {
        Some(a) => ctx.line(format!("candidate AUC            {a:.4}")),
        None => ctx.line("candidate AUC            undefined (one class)"),
    }
    ctx.line(format!("argmax fallbacks         {}", summary.fallbacks));
    ctx.detail("extraction", &summary);
    Ok(())
}

fn order_study(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let Task::Text = task(c)? else {
        bail!("order-study needs task = \"text\"")
    };
    ensure!(
        !c.contains("model.checkpoint"),
        "order-study trains its own single-pass model; remove model.checkpoint"
    );
    let corpus = text_corpus(c, seed, ctx)?;
    let mope = mope_config(c, seed)?;
    let groups = if c.contains("order.groups") {
        c.usize("order.groups")?
    } else {
        10
    };
    let per_group = if c.contains("order.per_group") {
        Some(c.usize("order.per_group")?)
    } else {
        None
    };
    let cfg = TrainConfig {
        epochs: 1,
        ..train_config(c, seed)?
    };
    let data = corpus.train_sequences();
    let init = LmModel::init(lm_config(c, &corpus.spec)?, seed)?;
    let (m, log) = train(&init, &data, &cfg, |_, _| false).context("training LM")?;
    let stats = training_order_study(&m, &data, &log, groups, per_group, &mope)?;
    dir.write("order_study.csv", order_study_csv(&stats))?;
    dir.write("training_log.csv", training_log_csv(&log))?;
    ctx.line("group  first_position  size  mean_loss  mean_mope");
    for s in &stats {
        ctx.line(format!(
            "{:>5}  {:>14}  {:>4}  {:>9.4}  {:>9.6}",
            s.group, s.first_position, s.size, s.mean_loss, s.mean_mope
        ));
    }
    let (first, last) = (stats.first().unwrap(), stats.last().unwrap());
    let recent_lower = last.mean_loss <= first.mean_loss;
    ctx.line(format!(
        "latest group mean loss <= earliest: {recent_lower}"
    ));
    ctx.detail("groups", &stats);
    ctx.detail("latest_loss_not_above_earliest", recent_lower);
    Ok(())
}

fn sweep(c: &Config, seed: u64, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let Task::Text = task(c)? else {
        bail!("sweep needs task = \"text\"")
    };
    let corpus = text_corpus(c, seed, ctx)?;
    let base = lm_config(c, &corpus.spec)?;
    let sizes = c.usize_list("sweep.hidden")?;
    ensure!(!sizes.is_empty(), "sweep.hidden is empty");
    let specs = attack_specs(c, seed)?;
    let rows = model_size_sweep(
        &corpus,
        &base,
        &sizes,
        &train_config(c, seed)?,
        seed,
        &specs,
        &fpr_levels(c)?,
    );
    dir.write("sweep.csv", sweep_csv(&rows))?;
    for r in &rows {
        match &r.error {
            Some(e) => ctx.line(format!("hidden {:>4}: failed: {e}", r.hidden)),
            None => {
                let aucs: Vec<String> = r
                    .reports
                    .iter()
                    .map(|x| format!("{}={:.4}", x.attack, x.auc))
                    .collect();
                ctx.line(format!(
                    "hidden {:>4} ({} params): {}",
                    r.hidden,
                    r.n_params,
                    aucs.join(" ")
                ));
            }
        }
        ctx.failures += r.failures + r.error.is_some() as usize;
        ctx.reports.extend(r.reports.iter().map(|x| EvalReport {
            attack: format!("h{}/{}", r.hidden, x.attack),
            ..x.clone()
        }));
    }
    ctx.detail("rows", &rows);
    Ok(())
}

fn scatter(c: &Config, dir: &mut RunDir, ctx: &mut StageOutput) -> Result<()> {
    let path = c.str("scatter.scores")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading scores {path}"))?;
    let table = ScoreTable::from_csv(&text)?;
    check_split_hygiene(&table)?;
    let (a, b) = (c.str("scatter.a")?, c.str("scatter.b")?);
    let csv = scatter_export(&table.column(a)?, &table.column(b)?)?;
    ctx.line(format!(
        "{} points: log_modulus(z({a})) vs log_modulus(z({b}))",
        csv.lines().count() - 1
    ));
    dir.write("scatter.csv", csv)?;
    Ok(())
}
