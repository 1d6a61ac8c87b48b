//! Sparsely activated convolutional encoder/decoder with a joint
//! compression/accuracy score.
//!
//! The model convolves an input with a set of tied kernels, sparsifies each
//! similarity map with one of five activation functions, convolves the sparse
//! maps with the same kernels and sums the partial reconstructions. Models
//! are trained on reconstruction error and selected by the flithos metric,
//! the Euclidean norm of (inverse compression ratio, normalized loss).

pub mod activation;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod tensor;

pub use error::{Result, SanError};

#[cfg(test)]
pub(crate) fn test_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
