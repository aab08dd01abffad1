use super::grad::GradientVector;
use super::params::ParamVector;
use crate::Result;

/// Anything with a per-example loss.
pub trait Objective {
    type Example;

    fn loss(&self, x: &Self::Example) -> Result<f64>;
}

/// An objective whose loss depends on a flat parameter vector that can be
/// swapped out for evaluation at a different point.
pub trait Parametric: Objective {
    fn params(&self) -> &ParamVector;

    /// Loss at `theta`, which must have the same length as `params()`.
    /// May return non-finite values; callers decide how to treat them.
    fn loss_at(&self, theta: &[f64], x: &Self::Example) -> Result<f64>;

    /// Loss and exact gradient at `theta`.
    fn loss_and_grad_at(&self, theta: &[f64], x: &Self::Example) -> Result<(f64, Vec<f64>)>;
}

/// Gradient with respect to the continuous input representation.
pub trait InputDifferentiable: Objective {
    fn input_gradient(&self, x: &Self::Example) -> Result<GradientVector>;
}

/// Models that can be rebuilt around new parameters (needed by training).
pub trait Reparameterize: Parametric + Sized {
    fn with_params(&self, params: ParamVector) -> Result<Self>;
}
