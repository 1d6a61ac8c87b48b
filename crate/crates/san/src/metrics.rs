//! Compression/accuracy scoring: weight and activation counts, inverse
//! compression ratio, normalized reconstruction loss and their Euclidean
//! combination (the model-selection metric, lower is better).

use crate::error::{Result, SanError};
use crate::tensor::Tensor;

/// Per-example score triple plus the counts it was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct FlithosReport {
    pub n: usize,
    pub dim: usize,
    pub weights: usize,
    pub activations: usize,
    pub cr_inverse: f64,
    pub normalized_loss: f64,
    pub flithos: f64,
}

impl FlithosReport {
    pub fn new(
        n: usize,
        dim: usize,
        weights: usize,
        activations: usize,
        normalized_loss: f64,
    ) -> Result<Self> {
        let cr_inverse = inverse_compression_ratio(n, dim, weights, activations)?;
        Ok(FlithosReport {
            n,
            dim,
            weights,
            activations,
            cr_inverse,
            normalized_loss,
            flithos: flithos(cr_inverse, normalized_loss),
        })
    }

    pub const CSV_HEADER: &'static str = "n,dim,W,A,cr_inverse,normalized_loss,flithos";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.17e},{:.17e},{:.17e}",
            self.n,
            self.dim,
            self.weights,
            self.activations,
            self.cr_inverse,
            self.normalized_loss,
            self.flithos
        )
    }
}

/// Total number of samples across all kernels.
pub fn weight_count(kernels: &[Tensor]) -> usize {
    kernels.iter().map(|k| k.len()).sum()
}

/// Total number of strictly non-zero entries across all activation maps.
pub fn activation_count(maps: &[Tensor]) -> usize {
    maps.iter().map(|m| m.count_nonzero()).sum()
}

/// `(W + (dim + 1) A) / n`: every non-zero activation is charged its spatial
/// coordinates plus one amplitude.
pub fn inverse_compression_ratio(
    n: usize,
    dim: usize,
    weights: usize,
    activations: usize,
) -> Result<f64> {
    if n == 0 {
        return Err(SanError::InvalidArgument("n must be >= 1".into()));
    }
    Ok((weights as f64 + (dim as f64 + 1.0) * activations as f64) / n as f64)
}

/// Reconstruction loss normalized by the loss of the all-zero reconstruction.
pub fn normalized_loss(
    x_hat: &Tensor,
    x: &Tensor,
    loss: impl Fn(&Tensor, &Tensor) -> Result<f64>,
) -> Result<f64> {
    let zero = Tensor::zeros(x.shape());
    let base = loss(&zero, x)?;
    if base == 0.0 {
        return Err(SanError::DegenerateInput(
            "all-zero input has zero baseline loss".into(),
        ));
    }
    Ok(loss(x_hat, x)? / base)
}

/// Euclidean norm of the (verbosity, inaccuracy) pair.
pub fn flithos(cr_inverse: f64, normalized_loss: f64) -> f64 {
    cr_inverse.hypot(normalized_loss)
}

pub fn mean_flithos(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(SanError::InvalidArgument("empty list".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
