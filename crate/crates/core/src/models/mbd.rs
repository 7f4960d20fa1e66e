use crate::autodiff::kernels;
use crate::error::{LxlError, Result};
use crate::tensor::Tensor;

/// Appends minibatch-discrimination statistics to `features [N, A]`.
///
/// `projection [A, kernels·kernel_dim]` maps each row to `kernels` vectors; for each kernel the
/// appended value is `Σ_{j≠i} exp(−‖M_i − M_j‖₁)`. Output is `[N, A + kernels]`.
pub fn minibatch_discrimination(
    features: &Tensor<f32>,
    projection: &Tensor<f32>,
    kernels: usize,
    kernel_dim: usize,
) -> Result<Tensor<f32>> {
    let fs = features.shape();
    if fs.len() != 2 {
        return Err(LxlError::shape("minibatch_discrimination features", "[N, A]", fs));
    }
    if fs[0] < 2 {
        return Err(LxlError::Validation("minibatch discrimination needs a batch of at least 2".into()));
    }
    let expected = [fs[1], kernels * kernel_dim];
    if projection.shape() != expected {
        return Err(LxlError::shape("minibatch_discrimination projection", expected, projection.shape()));
    }
    if kernels == 0 || kernel_dim == 0 {
        return Err(LxlError::Validation("minibatch discrimination needs positive kernel sizes".into()));
    }
    Ok(kernels::minibatch_disc(features, projection, kernels, kernel_dim))
}
