use serde::{Deserialize, Serialize};

use super::objective::{InputDifferentiable, Parametric};
use super::params::Segment;
use crate::{Error, Result};

/// Default central-difference step for unit-scale parameters.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

/// What a gradient is aligned with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Alignment {
    /// Same layout as the model's [`ParamVector`](super::ParamVector).
    Params(Vec<Segment>),
    /// Row-major `rows x cols` input matrix (positions x embedding dim for an
    /// LM, a single row of features for the MLP).
    Input { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub alignment: Alignment,
}

impl GradientVector {
    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn l2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn linf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Exact gradient of the loss with respect to every parameter.
pub fn grad_params<M: Parametric>(model: &M, x: &M::Example) -> Result<GradientVector> {
    let (loss, values) = model.loss_and_grad_at(model.params().values(), x)?;
    if !loss.is_finite() || values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(GradientVector {
        values,
        alignment: Alignment::Params(model.params().layout().to_vec()),
    })
}

/// Gradient with respect to the continuous input (embedding rows or features).
pub fn grad_input<M: InputDifferentiable>(model: &M, x: &M::Example) -> Result<GradientVector> {
    let g = model.input_gradient(x)?;
    if g.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    Ok(g)
}

/// Central-difference gradient `(l(theta + h e_i) - l(theta - h e_i)) / 2h`.
pub fn fd_gradient<M: Parametric>(model: &M, x: &M::Example, h: f64) -> Result<GradientVector> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut theta = model.params().values().to_vec();
    let mut values = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = model.loss_at(&theta, x)?;
        theta[i] = orig - h;
        let down = model.loss_at(&theta, x)?;
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        values.push((up - down) / (2.0 * h));
    }
    Ok(GradientVector {
        values,
        alignment: Alignment::Params(model.params().layout().to_vec()),
    })
}

/// Coordinate-wise agreement test used by gradient checks:
/// `|a - b| <= rel * max(|a|, |b|) + abs_floor`.
pub fn grads_agree(a: &[f64], b: &[f64], rel: f64, abs_floor: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= rel * x.abs().max(y.abs()) + abs_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::objective::Objective;
    use crate::diffcore::params::{ParamVector, Tensor};

    /// l(theta) = c * sum(theta^3) + slope . theta
    struct Poly {
        params: ParamVector,
        cubic: f64,
        slope: Vec<f64>,
    }

    impl Poly {
        fn new(theta: Vec<f64>, cubic: f64, slope: Vec<f64>) -> Self {
            let n = theta.len();
            Self {
                params: ParamVector::flatten(&[Tensor::new("t", vec![n], theta).unwrap()]).unwrap(),
                cubic,
                slope,
            }
        }
    }

    impl Objective for Poly {
        type Example = ();
        fn loss(&self, x: &()) -> Result<f64> {
            self.loss_at(self.params.values(), x)
        }
    }

    impl Parametric for Poly {
        fn params(&self) -> &ParamVector {
            &self.params
        }
        fn loss_at(&self, theta: &[f64], _: &()) -> Result<f64> {
            Ok(theta
                .iter()
                .zip(&self.slope)
                .map(|(t, s)| self.cubic * t * t * t + s * t)
                .sum())
        }
        fn loss_and_grad_at(&self, theta: &[f64], x: &()) -> Result<(f64, Vec<f64>)> {
            let g = theta
                .iter()
                .zip(&self.slope)
                .map(|(t, s)| 3.0 * self.cubic * t * t + s)
                .collect();
            Ok((self.loss_at(theta, x)?, g))
        }
    }

    #[test]
    fn cube_derivative_at_two() {
        let m = Poly::new(vec![2.0], 1.0, vec![0.0]);
        let g = fd_gradient(&m, &(), 1e-4).unwrap();
        assert!((g.values[0] - 12.0).abs() < 1e-6, "{}", g.values[0]);
    }

    #[test]
    fn linear_loss_has_constant_fd_slope() {
        let m = Poly::new(vec![0.3, -1.2, 5.0], 0.0, vec![1.5, -2.0, 0.25]);
        let g = fd_gradient(&m, &(), 1e-4).unwrap();
        for (a, b) in g.values.iter().zip(&[1.5, -2.0, 0.25]) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn non_positive_step_is_rejected() {
        let m = Poly::new(vec![1.0], 1.0, vec![0.0]);
        assert!(fd_gradient(&m, &(), 0.0).is_err());
        assert!(fd_gradient(&m, &(), -1e-3).is_err());
    }

    #[test]
    fn norms() {
        let g = GradientVector {
            values: vec![3.0, -4.0],
            alignment: Alignment::Input { rows: 1, cols: 2 },
        };
        assert_eq!(g.l1(), 7.0);
        assert_eq!(g.l2(), 5.0);
        assert_eq!(g.linf(), 4.0);
    }

    #[test]
    fn backprop_matches_fd_for_poly() {
        let m = Poly::new(vec![0.7, -0.4, 1.1], 0.5, vec![0.1, 0.2, -0.3]);
        let exact = grad_params(&m, &()).unwrap();
        let fd = fd_gradient(&m, &(), 1e-4).unwrap();
        assert!(grads_agree(&exact.values, &fd.values, 1e-5, 1e-8));
    }
}
