//! Minimal dense numeric core: parameter flattening, seeded Gaussian
//! perturbation and gradient evaluation (exact and finite-difference).

mod grad;
mod objective;
mod params;
pub mod rng;

pub use grad::{
    fd_gradient, grad_input, grad_params, grads_agree, Alignment, GradientVector, DEFAULT_FD_STEP,
};
pub use objective::{InputDifferentiable, Objective, Parametric, Reparameterize};
pub use params::{ParamVector, Segment, Tensor};
pub use rng::{gaussian_perturb, NoiseSpec};

/// `log(sum(exp(v)))`, stable for large magnitudes and `-inf` entries.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// In-place `log_softmax`.
pub fn log_softmax_in_place(v: &mut [f64]) {
    let lse = log_sum_exp(v);
    for x in v.iter_mut() {
        *x -= lse;
    }
}

/// Probabilities from logits.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v);
    v.iter().map(|x| (x - lse).exp()).collect()
}
