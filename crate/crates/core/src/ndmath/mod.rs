//! Dense `f64` tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod tape;
mod tensor;

pub use adam::{AdamState, BETA1, BETA2, EPS};
pub use tape::{sigmoid, softplus, ElementwiseOp, Gradients, Tape, Var, HALF_LN_2PI};
pub(crate) use tape::matmul_into;
pub use tensor::ParamTensor;

/// Plain (non-differentiable) diagonal Gaussian log density of one sample.
pub fn gaussian_log_prob(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| {
            let z = (x - m) / s;
            -0.5 * z * z - s.ln() - HALF_LN_2PI
        })
        .sum()
}
