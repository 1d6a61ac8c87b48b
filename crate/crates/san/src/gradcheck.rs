//! Central finite-difference verification of the analytic kernel gradients.
//!
//! The check perturbs one kernel weight at a time and recomputes the full
//! loss, so it is independent of the reverse pass it validates. Coordinates
//! whose selection masks change under the +-h perturbation are excluded:
//! there the loss is not differentiable in that direction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::default_density;
use crate::error::Result;
use crate::model::{backward, forward, init_model, mae, SanModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub activation: String,
    pub rank: usize,
    pub instances: usize,
    pub coordinates: usize,
    pub stable_coordinates: usize,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn stable_fraction(&self) -> f64 {
        self.stable_coordinates as f64 / self.coordinates as f64
    }

    pub fn passed(&self, rel_tolerance: f64, min_stable_fraction: f64) -> bool {
        self.max_rel_error <= rel_tolerance && self.stable_fraction() >= min_stable_fraction
    }
}

const FD_STEP: f64 = 1e-6;
// Gradients this small sit below the cancellation noise of the central
// difference and are compared absolutely instead.
const FD_FLOOR: f64 = 1e-6;

fn masks_of(model: &SanModel, x: &Tensor) -> Result<Vec<Tensor>> {
    Ok(forward(model, x)?
        .activations
        .into_iter()
        .map(|a| a.mask)
        .collect())
}

fn loss_of(model: &SanModel, x: &Tensor) -> Result<f64> {
    mae(&forward(model, x)?.reconstruction, x)
}

/// Checks one activation kind on `instances` random inputs; 1D uses n = 32,
/// q = 2, m = 5 and 2D a 12x12 input with q = 2, m = 3.
pub fn gradcheck_activation(
    tag: &str,
    rank: usize,
    seed: u64,
    instances: usize,
) -> Result<GradCheckReport> {
    let (input_shape, extent): (Vec<usize>, usize) = match rank {
        1 => (vec![32], 5),
        _ => (vec![12, 12], 3),
    };
    let activation = default_density(tag, &input_shape, extent, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        activation: tag.to_string(),
        rank,
        instances,
        coordinates: 0,
        stable_coordinates: 0,
        max_rel_error: 0.0,
    };
    for instance in 0..instances {
        let model = init_model(
            2,
            extent,
            rank,
            activation.clone(),
            0.0,
            0.1,
            seed ^ (instance as u64).wrapping_mul(0x9e37_79b9),
        )?;
        let n: usize = input_shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = Tensor::from_vec(input_shape.clone(), data)?;
        let base_masks = masks_of(&model, &x)?;
        let trace = forward(&model, &x)?;
        let grads = backward(&model, &trace)?;
        for (kernel_idx, grad) in grads.iter().enumerate() {
            for coord in 0..grad.len() {
                report.coordinates += 1;
                let perturbed = |delta: f64| -> Result<(f64, Vec<Tensor>)> {
                    let mut m = model.clone();
                    m.kernels[kernel_idx].data_mut()[coord] += delta;
                    Ok((loss_of(&m, &x)?, masks_of(&m, &x)?))
                };
                let (loss_plus, masks_plus) = perturbed(FD_STEP)?;
                let (loss_minus, masks_minus) = perturbed(-FD_STEP)?;
                if masks_plus != base_masks || masks_minus != base_masks {
                    continue;
                }
                report.stable_coordinates += 1;
                let fd = (loss_plus - loss_minus) / (2.0 * FD_STEP);
                let analytic = grad.data()[coord];
                let denom = analytic.abs().max(fd.abs());
                let rel = if denom < FD_FLOOR {
                    0.0
                } else {
                    (analytic - fd).abs() / denom
                };
                report.max_rel_error = report.max_rel_error.max(rel);
            }
        }
    }
    Ok(report)
}
