use mia_core::attacks::{AttackSpec, MopeConfig};
use mia_core::diffcore::Objective;
use mia_core::models::{
    train, train_classifier, LmConfig, LmModel, MlpConfig, MlpModel, TrainConfig,
};
use mia_harness::classification::{synth_classification, ClassificationSpec};
use mia_harness::corpus::{synth_text_corpus, CorpusSpec};
use mia_harness::studies::{model_size_sweep, training_order_study};

fn corpus_spec(n_train: usize, n_canaries: usize) -> CorpusSpec {
    CorpusSpec {
        vocab_size: 16,
        sequence_length: 12,
        n_train,
        n_test: n_train,
        order: 1,
        sharpness: 1.5,
        n_canaries,
        canary_prefix: 6,
        seed: 11,
    }
}

fn lm_config() -> LmConfig {
    LmConfig {
        vocab_size: 16,
        context: 3,
        embed_dim: 8,
        hidden: 16,
        max_len: 64,
    }
}

fn mope() -> MopeConfig {
    MopeConfig {
        sigma: 0.01,
        n_perturbations: 4,
        seed: 2,
        ..Default::default()
    }
}

#[test]
fn one_group_is_the_global_mean() {
    let corpus = synth_text_corpus(&corpus_spec(60, 0)).unwrap();
    let data = corpus.train_sequences();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 5,
        learning_rate: 0.01,
        ..Default::default()
    };
    let (m, log) = train(
        &LmModel::init(lm_config(), 1).unwrap(),
        &data,
        &cfg,
        |_, _| false,
    )
    .unwrap();
    let stats = training_order_study(&m, &data, &log, 1, None, &mope()).unwrap();
    assert_eq!(stats.len(), 1);
    assert_eq!(stats[0].size, 60);
    let global = data.iter().map(|x| m.loss(x).unwrap()).sum::<f64>() / 60.0;
    assert!((stats[0].mean_loss - global).abs() < 1e-12);
}

#[test]
fn groups_follow_the_training_stream() {
    let corpus = synth_text_corpus(&corpus_spec(40, 0)).unwrap();
    let data = corpus.train_sequences();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 0.01,
        ..Default::default()
    };
    let (m, log) = train(
        &LmModel::init(lm_config(), 1).unwrap(),
        &data,
        &cfg,
        |_, _| false,
    )
    .unwrap();
    let stats = training_order_study(&m, &data, &log, 4, None, &mope()).unwrap();
    let stream: Vec<usize> = log.steps.iter().flat_map(|s| s.batch.clone()).collect();
    for (g, s) in stats.iter().enumerate() {
        assert_eq!((s.first_position, s.size), (10 * g, 10));
        let expect = stream[10 * g..10 * g + 10]
            .iter()
            .map(|&i| m.loss(&data[i]).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!((s.mean_loss - expect).abs() < 1e-12);
    }
    assert!(training_order_study(&m, &data, &log, 41, None, &mope()).is_err());
}

#[test]
fn constant_loss_model_gives_equal_groups() {
    let corpus = synth_text_corpus(&corpus_spec(50, 0)).unwrap();
    let data = corpus.train_sequences();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 5,
        ..Default::default()
    };
    let uniform = LmModel::uniform(lm_config()).unwrap();
    let (_, log) = train(&uniform, &data, &cfg, |_, _| false).unwrap();
    let per_example = uniform.loss(&data[0]).unwrap();
    let stats = training_order_study(&uniform, &data, &log, 5, None, &mope()).unwrap();
    for s in &stats {
        assert!(
            (s.mean_loss - per_example).abs() < 1e-12,
            "{} vs {per_example}",
            s.mean_loss
        );
    }
}

#[test]
fn sweep_rows_share_the_split() {
    let corpus = synth_text_corpus(&corpus_spec(30, 2)).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let attacks = [AttackSpec::Loss, AttackSpec::Mope(mope())];
    let one = model_size_sweep(&corpus, &lm_config(), &[8], &cfg, 0, &attacks, &[0.25]);
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].reports.len(), 2);
    let rows = model_size_sweep(
        &corpus,
        &lm_config(),
        &[4, 8, 12],
        &cfg,
        0,
        &attacks,
        &[0.25],
    );
    assert_eq!(rows.len(), 3);
    assert!(rows
        .iter()
        .all(|r| r.split_hash == corpus.split_hash() && r.error.is_none()));
    assert!(rows.windows(2).all(|w| w[0].n_params < w[1].n_params));
    assert_eq!(rows[1].reports, one[0].reports);
}

#[test]
fn untrained_model_sees_no_train_test_gap() {
    let corpus = synth_text_corpus(&corpus_spec(400, 0)).unwrap();
    let m = LmModel::init(lm_config(), 3).unwrap();
    let losses = |xs: &[(u64, mia_core::models::TokenSequence)]| -> Vec<f64> {
        xs.iter().map(|(_, s)| m.loss(s).unwrap()).collect()
    };
    let (a, b) = (losses(&corpus.train), losses(&corpus.test));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let mu = mean(v);
        v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64
    };
    let se = (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt();
    assert!(
        (mean(&a) - mean(&b)).abs() < 4.0 * se,
        "gap {} se {se}",
        mean(&a) - mean(&b)
    );
}

#[test]
fn well_separated_blobs_are_learned() {
    let spec = ClassificationSpec {
        dim: 8,
        classes: 4,
        n_train: 400,
        n_test: 400,
        separation: 6.0,
        label_noise: 0.0,
        seed: 5,
    };
    let data = synth_classification(&spec).unwrap();
    let init = MlpModel::init(MlpConfig::standard(8, 4), 0).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        ..Default::default()
    };
    let (m, _) = train_classifier(&init, &data.train_points(), &cfg, None).unwrap();
    assert!(m.accuracy(&data.test_points()) > 0.95);
}

#[test]
fn label_noise_flips_the_expected_fraction() {
    let spec = ClassificationSpec {
        dim: 2,
        classes: 5,
        n_train: 4000,
        n_test: 1000,
        separation: 1.0,
        label_noise: 0.5,
        seed: 9,
    };
    let data = synth_classification(&spec).unwrap();
    let changed = data
        .train
        .iter()
        .enumerate()
        .filter(|(i, (_, p))| p.label != i % 5)
        .count() as f64
        / 4000.0;
    // Redrawn uniformly, so a fifth of redraws land back on the true class.
    let expect = 0.5 * 0.8;
    assert!(
        (changed - expect).abs() < 4.0 * (expect * (1.0 - expect) / 4000.0f64).sqrt(),
        "{changed}"
    );
}
