use mia_core::attacks::{
    ensemble_scores, run_attack_suite, AttackSpec, DetectConfig, GradConfig, GradTarget,
    Membership, MopeConfig, NormOrder, ScoreTable,
};
use mia_core::diffcore::{Objective, Parametric};
use mia_core::metrics::{auc, roc};
use mia_core::models::{train, LmConfig, LmModel, TokenSequence, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn split(n: usize, offset: u64, seed: u64) -> Vec<(u64, TokenSequence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            (
                offset + i as u64,
                TokenSequence::new((0..10).map(|_| rng.gen_range(0..9)).collect()),
            )
        })
        .collect()
}

fn suite() -> Vec<AttackSpec> {
    vec![
        AttackSpec::Loss,
        AttackSpec::Mope(MopeConfig {
            sigma: 0.01,
            n_perturbations: 8,
            seed: 1,
            ..Default::default()
        }),
        AttackSpec::DetectGpt(DetectConfig {
            n_perturbations: 4,
            mask_fraction: 0.2,
            span: 2,
            seed: 2,
        }),
        AttackSpec::Grad(GradConfig {
            norm: NormOrder::L2,
            target: GradTarget::Params,
        }),
    ]
}

type Split = Vec<(u64, TokenSequence)>;

fn memorizer() -> (LmModel, Split, Split) {
    let (members, nonmembers) = (split(16, 0, 1), split(16, 100, 2));
    let cfg = LmConfig {
        vocab_size: 9,
        context: 3,
        embed_dim: 8,
        hidden: 32,
        max_len: 32,
    };
    let data: Vec<TokenSequence> = members.iter().map(|(_, s)| s.clone()).collect();
    let tc = TrainConfig {
        epochs: 60,
        learning_rate: 0.01,
        ..Default::default()
    };
    let (m, _) = train(&LmModel::init(cfg, 0).unwrap(), &data, &tc, |_, _| false).unwrap();
    (m, members, nonmembers)
}

#[test]
fn suite_scores_match_direct_computation() {
    let (m, members, nonmembers) = memorizer();
    let out = run_attack_suite(&m, &members, &nonmembers, &suite()).unwrap();
    assert!(out.failures.is_empty());
    let loss = out.table.column("loss").unwrap();
    let grad = out.table.column("grad_params_l2").unwrap();
    for (i, (id, x)) in members.iter().chain(&nonmembers).enumerate() {
        assert_eq!(loss.ids[i], *id);
        assert_eq!(loss.labels[i].is_member(), *id < 100);
        assert_eq!(loss.scores[i], -m.loss(x).unwrap());
        let (_, g) = m.loss_and_grad_at(m.params().values(), x).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((grad.scores[i] + norm).abs() <= 1e-12 * norm.max(1.0));
    }
    let loss_auc = auc(&roc(&loss.scores, &loss.member_mask()).unwrap());
    assert!(loss_auc > 0.9, "{loss_auc}");
}

#[test]
fn suite_is_reproducible_and_round_trips_through_csv() {
    let (m, members, nonmembers) = memorizer();
    let a = run_attack_suite(&m, &members, &nonmembers, &suite()).unwrap();
    let b = run_attack_suite(&m, &members, &nonmembers, &suite()).unwrap();
    let csv = a.table.to_csv();
    assert_eq!(csv, b.table.to_csv());
    assert_eq!(ScoreTable::from_csv(&csv).unwrap().to_csv(), csv);
    assert_eq!(a.table.attacks().len(), 4);
}

#[test]
fn overlapping_splits_are_refused() {
    let (m, members, _) = memorizer();
    assert!(run_attack_suite(&m, &members, &members[..2], &[AttackSpec::Loss]).is_err());
}

#[test]
fn ensemble_of_a_column_with_itself_keeps_its_order() {
    let (m, members, nonmembers) = memorizer();
    let t = run_attack_suite(&m, &members, &nonmembers, &[AttackSpec::Loss])
        .unwrap()
        .table;
    let loss = t.column("loss").unwrap();
    let e = ensemble_scores(&loss, &loss, 0.3).unwrap();
    let mut a: Vec<usize> = (0..loss.scores.len()).collect();
    let mut b = a.clone();
    a.sort_by(|&i, &j| loss.scores[i].total_cmp(&loss.scores[j]));
    b.sort_by(|&i, &j| e.scores[i].total_cmp(&e.scores[j]));
    assert_eq!(a, b);
    assert!(e.labels.iter().zip(&loss.labels).all(|(x, y)| x == y));
    assert_eq!(
        e.labels
            .iter()
            .filter(|l| **l == Membership::Member)
            .count(),
        16
    );
}
