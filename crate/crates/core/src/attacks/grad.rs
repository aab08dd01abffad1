use serde::{Deserialize, Serialize};

use crate::diffcore::{grad_input, grad_params, GradientVector, InputDifferentiable, Parametric};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormOrder {
    L1,
    L2,
    Linf,
}

impl NormOrder {
    pub const ALL: [NormOrder; 3] = [NormOrder::L1, NormOrder::L2, NormOrder::Linf];

    pub fn name(self) -> &'static str {
        match self {
            NormOrder::L1 => "l1",
            NormOrder::L2 => "l2",
            NormOrder::Linf => "linf",
        }
    }

    pub fn of(self, g: &GradientVector) -> f64 {
        match self {
            NormOrder::L1 => g.l1(),
            NormOrder::L2 => g.l2(),
            NormOrder::Linf => g.linf(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradTarget {
    Input,
    Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GradConfig {
    pub norm: NormOrder,
    pub target: GradTarget,
}

impl GradConfig {
    pub fn name(&self) -> String {
        let t = match self.target {
            GradTarget::Input => "input",
            GradTarget::Params => "params",
        };
        format!("grad_{t}_{}", self.norm.name())
    }
}

/// `-||g||_p`: small gradients (near a minimum) score high.
pub fn grad_score<M>(model: &M, x: &M::Example, cfg: &GradConfig) -> Result<f64>
where
    M: Parametric + InputDifferentiable,
{
    let g = match cfg.target {
        GradTarget::Params => grad_params(model, x)?,
        GradTarget::Input => grad_input(model, x)?,
    };
    Ok(-cfg.norm.of(&g))
}
