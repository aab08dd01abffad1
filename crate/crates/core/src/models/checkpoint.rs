//! Self-describing JSON checkpoints with integrity hashes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LmConfig, LmModel, MlpConfig, MlpModel, TrainConfig};
use crate::diffcore::{ParamVector, Parametric, Segment};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "mia-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Mlp(MlpConfig),
    Lm(LmConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub train_config: Option<TrainConfig>,
    /// SHA-256 of `train_config` (empty when absent).
    pub train_config_hash: String,
    pub layout: Vec<Segment>,
    pub values: Vec<f64>,
    /// SHA-256 over architecture, layout, config hash and the raw value bits.
    pub content_hash: String,
}

fn content_hash(arch: &Architecture, layout: &[Segment], cfg_hash: &str, values: &[f64]) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(arch).expect("architecture serializes"));
    h.update(serde_json::to_vec(layout).expect("layout serializes"));
    h.update(cfg_hash.as_bytes());
    for v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

impl Checkpoint {
    pub fn new(
        architecture: Architecture,
        params: &ParamVector,
        train_config: Option<TrainConfig>,
    ) -> Self {
        let train_config_hash = train_config
            .as_ref()
            .map(TrainConfig::hash)
            .unwrap_or_default();
        let layout = params.layout().to_vec();
        let values = params.values().to_vec();
        let content_hash = content_hash(&architecture, &layout, &train_config_hash, &values);
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture,
            train_config,
            train_config_hash,
            layout,
            values,
            content_hash,
        }
    }

    pub fn from_mlp(model: &MlpModel, cfg: Option<TrainConfig>) -> Self {
        Self::new(
            Architecture::Mlp(model.config().clone()),
            model.params(),
            cfg,
        )
    }

    pub fn from_lm(model: &LmModel, cfg: Option<TrainConfig>) -> Self {
        Self::new(
            Architecture::Lm(model.config().clone()),
            model.params(),
            cfg,
        )
    }

    /// Recomputes both hashes.
    pub fn verify(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                self.format
            )));
        }
        let cfg_hash = self
            .train_config
            .as_ref()
            .map(TrainConfig::hash)
            .unwrap_or_default();
        if cfg_hash != self.train_config_hash {
            return Err(Error::Checkpoint("training config hash mismatch".into()));
        }
        if content_hash(
            &self.architecture,
            &self.layout,
            &self.train_config_hash,
            &self.values,
        ) != self.content_hash
        {
            return Err(Error::Checkpoint("content hash mismatch".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ParamVector> {
        ParamVector::from_parts(self.layout.clone(), self.values.clone())
    }

    pub fn into_mlp(self) -> Result<MlpModel> {
        self.verify()?;
        match &self.architecture {
            Architecture::Mlp(cfg) => MlpModel::from_params(cfg.clone(), self.params()?),
            Architecture::Lm(_) => Err(Error::Checkpoint(
                "checkpoint holds an LM, not an MLP".into(),
            )),
        }
    }

    pub fn into_lm(self) -> Result<LmModel> {
        self.verify()?;
        match &self.architecture {
            Architecture::Lm(cfg) => LmModel::from_params(cfg.clone(), self.params()?),
            Architecture::Mlp(_) => Err(Error::Checkpoint(
                "checkpoint holds an MLP, not an LM".into(),
            )),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        ckpt.verify()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
