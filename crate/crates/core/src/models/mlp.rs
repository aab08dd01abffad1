use serde::{Deserialize, Serialize};

use crate::diffcore::rng::{fill_standard_normal, stream, Domain};
use crate::diffcore::{
    log_sum_exp, Alignment, GradientVector, InputDifferentiable, Objective, ParamVector,
    Parametric, Reparameterize,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// One labelled feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// `input, hidden..., classes`
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpConfig {
    /// `input -> 20 -> 10 -> classes`.
    pub fn standard(input: usize, classes: usize) -> Self {
        Self {
            widths: vec![input, 20, 10, classes],
            activation: Activation::Tanh,
        }
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Fully connected classifier trained with cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    params: ParamVector,
}

struct Forward {
    /// Pre-activations per layer (last = logits).
    pre: Vec<Vec<f64>>,
    /// Layer inputs; `inputs[0]` is the feature vector.
    inputs: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Gaussian init with variance `1 / fan_in`, zero biases.
    pub fn init(config: MlpConfig, seed: u64) -> Result<Self> {
        if config.widths.len() < 2 || config.widths.contains(&0) {
            return Err(Error::invalid(
                "MLP needs at least input and output widths, all non-zero",
            ));
        }
        let mut shapes = Vec::new();
        for (l, w) in config.widths.windows(2).enumerate() {
            shapes.push((format!("layer{l}.weight"), vec![w[1], w[0]]));
            shapes.push((format!("layer{l}.bias"), vec![w[1]]));
        }
        let refs: Vec<(&str, &[usize])> = shapes
            .iter()
            .map(|(n, s)| (n.as_str(), s.as_slice()))
            .collect();
        let mut params = ParamVector::zeros(&refs)?;
        let mut rng = stream(seed, Domain::Init, 0);
        let layout = params.layout().to_vec();
        for (l, seg) in layout.iter().enumerate().filter(|(i, _)| i % 2 == 0) {
            let fan_in = config.widths[l / 2] as f64;
            let slot = &mut params.values_mut()[seg.range()];
            fill_standard_normal(&mut rng, slot);
            for v in slot.iter_mut() {
                *v /= fan_in.sqrt();
            }
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: MlpConfig, params: ParamVector) -> Result<Self> {
        if params.len() != config.n_params() {
            return Err(Error::LayoutMismatch(format!(
                "MLP {:?} needs {} parameters, got {}",
                config.widths,
                config.n_params(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        *self.config.widths.last().unwrap()
    }

    fn check(&self, x: &LabeledPoint) -> Result<()> {
        if x.features.len() != self.config.widths[0] {
            return Err(Error::invalid(format!(
                "expected {} features, got {}",
                self.config.widths[0],
                x.features.len()
            )));
        }
        if x.label >= self.n_classes() {
            return Err(Error::invalid(format!(
                "label {} out of {} classes",
                x.label,
                self.n_classes()
            )));
        }
        Ok(())
    }

    fn forward(&self, theta: &[f64], features: &[f64]) -> Forward {
        let widths = &self.config.widths;
        let n_layers = widths.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut inputs = Vec::with_capacity(n_layers);
        let mut a = features.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let w = &theta[off..off + n_in * n_out];
            let b = &theta[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let z: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                })
                .collect();
            let next = if l + 1 < n_layers {
                z.iter().map(|&v| self.config.activation.apply(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Forward { pre, inputs }
    }

    /// Class logits at the current parameters.
    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        self.forward(self.params.values(), features)
            .pre
            .pop()
            .unwrap()
    }

    pub fn predict(&self, features: &[f64]) -> usize {
        let logits = self.logits(features);
        let mut best = 0;
        for (i, v) in logits.iter().enumerate() {
            if *v > logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, data: &[LabeledPoint]) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = data
            .iter()
            .filter(|p| self.predict(&p.features) == p.label)
            .count();
        hits as f64 / data.len() as f64
    }

    fn cross_entropy(logits: &[f64], label: usize) -> f64 {
        log_sum_exp(logits) - logits[label]
    }

    /// Returns (loss, param grad, input grad).
    fn backward(&self, theta: &[f64], x: &LabeledPoint) -> (f64, Vec<f64>, Vec<f64>) {
        let fwd = self.forward(theta, &x.features);
        let widths = &self.config.widths;
        let n_layers = widths.len() - 1;
        let logits = &fwd.pre[n_layers - 1];
        let loss = Self::cross_entropy(logits, x.label);
        let lse = log_sum_exp(logits);
        let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
        delta[x.label] -= 1.0;

        let mut grad = vec![0.0; theta.len()];
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (widths[l], widths[l + 1]);
            let off = offsets[l];
            let a = &fwd.inputs[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] = d;
                    for (g, ai) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(a) {
                        *g = d * ai;
                    }
                }
            }
            let w = &theta[off..off + n_in * n_out];
            let mut back = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                for (bi, wi) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *bi += wi * d;
                }
            }
            if l > 0 {
                for (bi, z) in back.iter_mut().zip(&fwd.pre[l - 1]) {
                    *bi *= self.config.activation.derivative(*z);
                }
            }
            delta = back;
        }
        (loss, grad, delta)
    }
}

impl Objective for MlpModel {
    type Example = LabeledPoint;

    fn loss(&self, x: &LabeledPoint) -> Result<f64> {
        self.loss_at(self.params.values(), x)
    }
}

impl Parametric for MlpModel {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn loss_at(&self, theta: &[f64], x: &LabeledPoint) -> Result<f64> {
        self.check(x)?;
        let logits = self.forward(theta, &x.features).pre.pop().unwrap();
        Ok(Self::cross_entropy(&logits, x.label))
    }

    fn loss_and_grad_at(&self, theta: &[f64], x: &LabeledPoint) -> Result<(f64, Vec<f64>)> {
        self.check(x)?;
        let (loss, g, _) = self.backward(theta, x);
        Ok((loss, g))
    }
}

impl InputDifferentiable for MlpModel {
    fn input_gradient(&self, x: &LabeledPoint) -> Result<GradientVector> {
        self.check(x)?;
        let (_, _, gx) = self.backward(self.params.values(), x);
        Ok(GradientVector {
            alignment: Alignment::Input {
                rows: 1,
                cols: gx.len(),
            },
            values: gx,
        })
    }
}

impl Reparameterize for MlpModel {
    fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::from_params(self.config.clone(), params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{fd_gradient, grad_input, grad_params, grads_agree};

    fn point(seed: u64, dim: usize, classes: usize) -> LabeledPoint {
        let mut rng = stream(seed, Domain::Data, 0);
        let mut f = vec![0.0; dim];
        fill_standard_normal(&mut rng, &mut f);
        LabeledPoint {
            features: f,
            label: seed as usize % classes,
        }
    }

    #[test]
    fn parameter_count() {
        let cfg = MlpConfig::standard(16, 4);
        assert_eq!(cfg.n_params(), 16 * 20 + 20 + 20 * 10 + 10 + 10 * 4 + 4);
        let m = MlpModel::init(cfg.clone(), 0).unwrap();
        assert_eq!(m.params().len(), cfg.n_params());
    }

    #[test]
    fn backprop_matches_central_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let cfg = MlpConfig {
                widths: vec![5, 7, 4, 3],
                activation: act,
            };
            for s in 0..5 {
                let m = MlpModel::init(cfg.clone(), s).unwrap();
                let x = point(100 + s, 5, 3);
                let exact = grad_params(&m, &x).unwrap();
                let fd = fd_gradient(&m, &x, 1e-4).unwrap();
                assert!(
                    grads_agree(&exact.values, &fd.values, 1e-5, 1e-8),
                    "{act:?} seed {s}"
                );
            }
        }
    }

    #[test]
    fn input_gradient_matches_central_differences() {
        let m = MlpModel::init(MlpConfig::standard(6, 3), 4).unwrap();
        let x = point(9, 6, 3);
        let g = grad_input(&m, &x).unwrap();
        let h = 1e-4;
        for i in 0..6 {
            let mut up = x.clone();
            up.features[i] += h;
            let mut dn = x.clone();
            dn.features[i] -= h;
            let fd = (m.loss(&up).unwrap() - m.loss(&dn).unwrap()) / (2.0 * h);
            assert!((fd - g.values[i]).abs() <= 1e-5 * fd.abs().max(g.values[i].abs()) + 1e-8);
        }
    }

    #[test]
    fn zero_weights_give_zero_input_gradient() {
        let cfg = MlpConfig::standard(4, 3);
        let zeros = ParamVector::zeros(&[("all", &[cfg.n_params()])]).unwrap();
        let m = MlpModel::from_params(cfg, zeros).unwrap();
        let g = grad_input(&m, &point(1, 4, 3)).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = MlpModel::init(MlpConfig::standard(8, 2), 3).unwrap();
        let x = point(5, 8, 2);
        assert_eq!(m.logits(&x.features), m.logits(&x.features));
    }

    #[test]
    fn rejects_bad_examples() {
        let m = MlpModel::init(MlpConfig::standard(3, 2), 0).unwrap();
        assert!(m
            .loss(&LabeledPoint {
                features: vec![0.0; 4],
                label: 0
            })
            .is_err());
        assert!(m
            .loss(&LabeledPoint {
                features: vec![0.0; 3],
                label: 2
            })
            .is_err());
    }
}
