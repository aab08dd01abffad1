use mia_core::attacks::{mope_batch, mope_score, MopeConfig};
use mia_core::diffcore::{Objective, ParamVector, Parametric};
use mia_core::hessianlab::{
    exact_hessian_trace, hessian_diagonal, hutchinson_samples, FdGradientProbe, ProbeKind,
};
use mia_core::models::{LabeledPoint, MlpConfig, MlpModel};
use mia_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `0.5 theta^T A theta + b . theta + x`, so the Hessian is `A` everywhere.
struct Quadratic {
    a: Vec<f64>,
    b: Vec<f64>,
    params: ParamVector,
}

impl Quadratic {
    fn random(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
            a[i * n + i] += 2.0;
        }
        let b = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let theta = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let params = ParamVector::zeros(&[("theta", &[n])])
            .unwrap()
            .with_values(theta)
            .unwrap();
        Self { a, b, params }
    }

    fn n(&self) -> usize {
        self.b.len()
    }

    fn trace(&self) -> f64 {
        (0..self.n()).map(|i| self.a[i * self.n() + i]).sum()
    }
}

impl Objective for Quadratic {
    type Example = f64;
    fn loss(&self, x: &f64) -> Result<f64> {
        self.loss_at(self.params.values(), x)
    }
}

impl Parametric for Quadratic {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn loss_at(&self, t: &[f64], x: &f64) -> Result<f64> {
        let n = self.n();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += t[i] * self.a[i * n + j] * t[j];
            }
        }
        Ok(0.5 * q + self.b.iter().zip(t).map(|(b, t)| b * t).sum::<f64>() + x)
    }

    fn loss_and_grad_at(&self, t: &[f64], x: &f64) -> Result<(f64, Vec<f64>)> {
        let n = self.n();
        let g = (0..n)
            .map(|i| (0..n).map(|j| self.a[i * n + j] * t[j]).sum::<f64>() + self.b[i])
            .collect();
        Ok((self.loss_at(t, x)?, g))
    }
}

#[test]
fn finite_difference_trace_of_a_quadratic() {
    let q = Quadratic::random(12, 1);
    let t = exact_hessian_trace(&q, &0.5, 1e-3).unwrap();
    assert!((t - q.trace()).abs() < 1e-6, "{t} vs {}", q.trace());
    let d = hessian_diagonal(&q, &0.5, 1e-3, 100).unwrap();
    for (i, v) in d.iter().enumerate() {
        assert!((v - q.a[i * 12 + i]).abs() < 1e-6);
    }
}

#[test]
fn antithetic_mope_is_half_sigma_squared_trace() {
    // Each +/- pair averages to exactly 0.5 eps^T A eps, whose mean is sigma^2 Tr(A) / 2.
    let q = Quadratic::random(10, 2);
    let sigma = 0.01;
    let cfg = MopeConfig {
        sigma,
        n_perturbations: 20_000,
        seed: 3,
        antithetic: true,
    };
    let s = mope_score(&q, &0.0, &cfg).unwrap();
    let scaled = s * 2.0 / (sigma * sigma);
    let frob: f64 = q.a.iter().map(|v| v * v).sum();
    let se = (2.0 * frob / 20_000.0).sqrt();
    assert!(
        (scaled - q.trace()).abs() < 5.0 * se,
        "{scaled} vs {} (se {se})",
        q.trace()
    );
}

#[test]
fn plain_mope_matches_its_own_draws() {
    let q = Quadratic::random(6, 4);
    let cfg = MopeConfig {
        sigma: 0.1,
        n_perturbations: 50,
        seed: 5,
        ..Default::default()
    };
    let batch = mope_batch(&q, &[0.0, 2.0], &cfg).unwrap();
    let (a, b) = (
        batch.outcomes[0].as_ref().unwrap(),
        batch.outcomes[1].as_ref().unwrap(),
    );
    // The shift in the example cancels in l(theta + eps) - l(theta), and the draws are shared.
    assert!((a.score - b.score).abs() < 1e-12);
    assert_eq!(a.used_draws, 50);
    assert_eq!(mope_score(&q, &0.0, &cfg).unwrap(), a.score);
}

#[test]
fn hutchinson_through_gradients_tracks_the_exact_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = MlpModel::init(MlpConfig::standard(5, 3), 2).unwrap();
    let x = LabeledPoint {
        features: (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        label: 1,
    };
    let exact = exact_hessian_trace(&model, &x, 1e-3).unwrap();
    let probe = FdGradientProbe {
        model: &model,
        example: &x,
        step: 1e-4,
    };
    let s = hutchinson_samples(&probe, 4_000, 7, ProbeKind::Rademacher).unwrap();
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - exact).abs() < 5.0 * se + 1e-4,
        "{mean} vs {exact} (se {se})"
    );
}
