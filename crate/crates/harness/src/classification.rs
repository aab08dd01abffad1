//! Gaussian-blob classification data.

use anyhow::{ensure, Result};
use mia_core::diffcore::rng::{fill_standard_normal, stream, unit_f64, Domain};
use mia_core::models::LabeledPoint;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSpec {
    pub dim: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Scale of the class means; larger means less overlap.
    pub separation: f64,
    /// Fraction of points whose label is replaced by a uniformly drawn class.
    pub label_noise: f64,
    pub seed: u64,
}

impl ClassificationSpec {
    pub fn from_config(c: &Config, seed: u64) -> Result<Self> {
        Ok(Self {
            dim: c.usize("data.dim")?,
            classes: c.usize("data.classes")?,
            n_train: c.usize("data.n_train")?,
            n_test: c.usize("data.n_test")?,
            separation: c.f64("data.separation")?,
            label_noise: c.f64("data.label_noise")?,
            seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.classes >= 2,
            "degenerate class count: need at least 2 classes, got {}",
            self.classes
        );
        ensure!(self.dim >= 1, "data.dim must be at least 1");
        ensure!(
            self.n_train >= 1 && self.n_test >= 1,
            "both splits need at least one point"
        );
        ensure!(
            self.separation >= 0.0 && self.separation.is_finite(),
            "data.separation must be >= 0"
        );
        ensure!(
            (0.0..=1.0).contains(&self.label_noise),
            "data.label_noise must lie in [0, 1]"
        );
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).unwrap()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationData {
    pub spec: ClassificationSpec,
    pub train: Vec<(u64, LabeledPoint)>,
    pub test: Vec<(u64, LabeledPoint)>,
}

impl ClassificationData {
    pub fn train_points(&self) -> Vec<LabeledPoint> {
        self.train.iter().map(|(_, p)| p.clone()).collect()
    }

    pub fn test_points(&self) -> Vec<LabeledPoint> {
        self.test.iter().map(|(_, p)| p.clone()).collect()
    }

    pub fn split_hash(&self) -> String {
        crate::corpus::split_hash(&self.train, &self.test)
    }
}

/// Point `i` of the combined stream belongs to class `i mod classes`, so each
/// split is balanced to within one point per class. Features are the class
/// mean plus unit Gaussian noise.
pub fn synth_classification(spec: &ClassificationSpec) -> Result<ClassificationData> {
    spec.validate()?;
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|c| {
            let mut rng = stream(spec.seed, Domain::Data, c as u64);
            let mut m = vec![0.0; spec.dim];
            fill_standard_normal(&mut rng, &mut m);
            m.iter_mut().for_each(|v| *v *= spec.separation);
            m
        })
        .collect();
    let point = |i: usize, class: usize| {
        let mut rng = stream(spec.seed, Domain::Sample, i as u64);
        let mut features = vec![0.0; spec.dim];
        fill_standard_normal(&mut rng, &mut features);
        for (f, m) in features.iter_mut().zip(&means[class]) {
            *f += m;
        }
        let label = if unit_f64(&mut rng) < spec.label_noise {
            (rng.next_u64() % spec.classes as u64) as usize
        } else {
            class
        };
        LabeledPoint { features, label }
    };
    let train = (0..spec.n_train)
        .map(|i| (i as u64, point(i, i % spec.classes)))
        .collect();
    let test = (0..spec.n_test)
        .map(|j| {
            let i = spec.n_train + j;
            (i as u64, point(i, j % spec.classes))
        })
        .collect();
    Ok(ClassificationData {
        spec: spec.clone(),
        train,
        test,
    })
}
