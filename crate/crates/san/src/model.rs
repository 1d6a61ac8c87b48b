//! The network itself: tied kernels, feed-forward pass, mean absolute error,
//! the hand-derived reverse pass and Adam updates.
//!
//! Encoding and decoding share the same kernels: the input is convolved with
//! each kernel, sparsified, convolved again with the same kernel, and the
//! per-kernel partial reconstructions are summed. The backward pass treats
//! the selection masks as constants and propagates the MAE subgradient
//! through both the decoder and the encoder convolution.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::{self, ActivationKind, ActivationResult};
use crate::error::{Result, SanError};
use crate::tensor::{conv_same, conv_same_adjoint_input, conv_same_adjoint_kernel, Tensor};

/// Tied-kernel encoder/decoder with one activation kind shared by all
/// kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct SanModel {
    pub kernels: Vec<Tensor>,
    pub activation: ActivationKind,
    /// Recorded for checkpoint round-trips.
    pub seed: u64,
}

/// Every intermediate of one feed-forward pass, retained for backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Tensor,
    pub similarities: Vec<Tensor>,
    pub activations: Vec<ActivationResult>,
    pub partials: Vec<Tensor>,
    pub reconstruction: Tensor,
}

/// Adam optimizer state, one moment pair per kernel.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moments: Vec<Tensor>,
    pub second_moments: Vec<Tensor>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Hyperparameters used by every experiment: lr 0.01, betas (0.9, 0.999),
    /// eps 1e-8, no weight decay.
    pub fn new(model: &SanModel) -> Self {
        AdamState {
            first_moments: model.kernels.iter().map(|k| Tensor::zeros(k.shape())).collect(),
            second_moments: model.kernels.iter().map(|k| Tensor::zeros(k.shape())).collect(),
            step: 0,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Kernels drawn i.i.d. from N(mu, sigma^2) with a seeded generator.
pub fn init_model(
    q: usize,
    kernel_extent: usize,
    rank: usize,
    activation: ActivationKind,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<SanModel> {
    if q < 1 || kernel_extent < 1 {
        return Err(SanError::InvalidArgument(
            "need q >= 1 and kernel extent >= 1".into(),
        ));
    }
    if rank != 1 && rank != 2 {
        return Err(SanError::UnsupportedRank(format!("rank {}", rank)));
    }
    let shape: Vec<usize> = vec![kernel_extent; rank];
    let samples: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mu, sigma)
        .map_err(|e| SanError::InvalidArgument(format!("bad normal parameters: {}", e)))?;
    let kernels = (0..q)
        .map(|_| {
            let data: Vec<f64> = (0..samples).map(|_| normal.sample(&mut rng)).collect();
            Tensor::from_vec(shape.clone(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SanModel {
        kernels,
        activation,
        seed,
    })
}

pub fn forward(model: &SanModel, x: &Tensor) -> Result<ForwardTrace> {
    let rank = model.kernels[0].rank();
    if x.rank() != rank {
        return Err(SanError::ShapeMismatch(format!(
            "input rank {} vs model rank {}",
            x.rank(),
            rank
        )));
    }
    let mut similarities = Vec::with_capacity(model.kernels.len());
    let mut activations = Vec::with_capacity(model.kernels.len());
    let mut partials = Vec::with_capacity(model.kernels.len());
    let mut reconstruction = Tensor::zeros(x.shape());
    for w in &model.kernels {
        let s = conv_same(x, w)?;
        let act = activation::apply(&model.activation, &s)?;
        let r = conv_same(&act.map, w)?;
        reconstruction = reconstruction.add(&r)?;
        similarities.push(s);
        activations.push(act);
        partials.push(r);
    }
    Ok(ForwardTrace {
        input: x.clone(),
        similarities,
        activations,
        partials,
        reconstruction,
    })
}

/// Reconstruction from stored activation maps and kernels alone, summed in
/// kernel order; bit-identical to `ForwardTrace::reconstruction`.
pub fn reconstruct(maps: &[Tensor], kernels: &[Tensor]) -> Result<Tensor> {
    if maps.len() != kernels.len() || maps.is_empty() {
        return Err(SanError::InvalidArgument(
            "need one activation map per kernel".into(),
        ));
    }
    let mut out = Tensor::zeros(maps[0].shape());
    for (map, w) in maps.iter().zip(kernels) {
        out = out.add(&conv_same(map, w)?)?;
    }
    Ok(out)
}

/// Mean absolute error.
pub fn mae(x_hat: &Tensor, x: &Tensor) -> Result<f64> {
    if x_hat.shape() != x.shape() {
        return Err(SanError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    let n = x.len() as f64;
    Ok(x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&a, &b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// MAE gradients w.r.t. every kernel, with the selection masks frozen.
///
/// With g = sign(x_hat - x)/n, each kernel receives a decoder term (the
/// adjoint of the second convolution at the stored activation map) plus an
/// encoder term (g pulled back through the decoder, gated by the mask, then
/// through the adjoint of the first convolution).
pub fn backward(model: &SanModel, trace: &ForwardTrace) -> Result<Vec<Tensor>> {
    if trace.activations.len() != model.kernels.len() {
        return Err(SanError::InvalidArgument(
            "trace does not match model kernel count".into(),
        ));
    }
    let n = trace.input.len() as f64;
    let g = trace
        .reconstruction
        .zip_map(&trace.input, |xh, x| sign(xh - x) / n)?;
    let mut grads = Vec::with_capacity(model.kernels.len());
    for (w, act) in model.kernels.iter().zip(&trace.activations) {
        if act.map.shape() != trace.input.shape() || w.rank() != trace.input.rank() {
            return Err(SanError::InvalidArgument("stale trace".into()));
        }
        let decoder = conv_same_adjoint_kernel(&g, &act.map, w.shape())?;
        let d_alpha = conv_same_adjoint_input(&g, w)?;
        let d_s = d_alpha.zip_map(&act.mask, |v, m| v * m)?;
        let encoder = conv_same_adjoint_kernel(&d_s, &trace.input, w.shape())?;
        grads.push(decoder.add(&encoder)?);
    }
    Ok(grads)
}

/// One Adam update with bias correction and no weight decay.
pub fn adam_step(model: &mut SanModel, state: &mut AdamState, gradients: &[Tensor]) -> Result<()> {
    if gradients.len() != model.kernels.len() {
        return Err(SanError::InvalidArgument(
            "one gradient per kernel required".into(),
        ));
    }
    for (g, w) in gradients.iter().zip(&model.kernels) {
        if g.shape() != w.shape() {
            return Err(SanError::ShapeMismatch(format!(
                "gradient {:?} vs kernel {:?}",
                g.shape(),
                w.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (i, g) in gradients.iter().enumerate() {
        let m = state.first_moments[i].zip_map(g, |m, g| state.beta1 * m + (1.0 - state.beta1) * g)?;
        let v = state.second_moments[i]
            .zip_map(g, |v, g| state.beta2 * v + (1.0 - state.beta2) * g * g)?;
        let update = m.zip_map(&v, |m, v| {
            state.learning_rate * (m / bc1) / ((v / bc2).sqrt() + state.epsilon)
        })?;
        model.kernels[i] = model.kernels[i].zip_map(&update, |w, u| w - u)?;
        state.first_moments[i] = m;
        state.second_moments[i] = v;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint format: flat text, header lines then one kernel per line with
// 17 significant digits so 64-bit values round-trip exactly.
// ---------------------------------------------------------------------------

impl SanModel {
    pub fn to_checkpoint_string(&self) -> String {
        let rank = self.kernels[0].rank();
        let mut out = String::new();
        writeln!(out, "rank {}", rank).unwrap();
        writeln!(out, "q {}", self.kernels.len()).unwrap();
        writeln!(out, "activation {}", self.activation.tag()).unwrap();
        let (density, border) = match &self.activation {
            ActivationKind::Identity | ActivationKind::Relu => (0, 0),
            ActivationKind::TopKAbsolutes { k } => (*k, 0),
            ActivationKind::ExtremaPoolIndices { m } => (*m, 0),
            ActivationKind::Extrema {
                med,
                border_tolerance,
            } => (*med, *border_tolerance),
        };
        writeln!(out, "extent {}", self.kernels[0].shape()[0]).unwrap();
        writeln!(out, "density {}", density).unwrap();
        writeln!(out, "border_tolerance {}", border).unwrap();
        writeln!(out, "seed {}", self.seed).unwrap();
        for k in &self.kernels {
            let row: Vec<String> = k.data().iter().map(|v| format!("{:.17e}", v)).collect();
            writeln!(out, "{}", row.join(" ")).unwrap();
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn from_checkpoint_string(text: &str) -> Result<SanModel> {
        let mut lines = text.lines().enumerate();
        let mut header = std::collections::HashMap::new();
        let mut kernel_lines = Vec::new();
        for (idx, line) in &mut lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let first = parts.next().unwrap();
            if ["rank", "q", "activation", "extent", "density", "border_tolerance", "seed"]
                .contains(&first)
            {
                let value = parts.next().ok_or_else(|| SanError::Parse {
                    line: idx + 1,
                    message: format!("missing value for {}", first),
                })?;
                header.insert(first.to_string(), value.to_string());
            } else {
                kernel_lines.push((idx + 1, line.to_string()));
            }
        }
        let get = |key: &str| -> Result<String> {
            header
                .get(key)
                .cloned()
                .ok_or_else(|| SanError::Format(format!("missing header line {:?}", key)))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|e| SanError::Format(format!("bad {} value: {}", key, e)))
        };
        let rank = parse_usize("rank")?;
        let q = parse_usize("q")?;
        let extent = parse_usize("extent")?;
        let density = parse_usize("density")?;
        let border = parse_usize("border_tolerance")?;
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|e| SanError::Format(format!("bad seed: {}", e)))?;
        let tag = get("activation")?;
        let activation = match tag.as_str() {
            "identity" => ActivationKind::Identity,
            "relu" => ActivationKind::Relu,
            "topk_absolutes" => ActivationKind::TopKAbsolutes { k: density },
            "extrema_pool_indices" => ActivationKind::ExtremaPoolIndices { m: density },
            "extrema" => ActivationKind::Extrema {
                med: density,
                border_tolerance: border,
            },
            other => return Err(SanError::Format(format!("unknown activation {:?}", other))),
        };
        if kernel_lines.len() != q {
            return Err(SanError::Format(format!(
                "expected {} kernel lines, got {}",
                q,
                kernel_lines.len()
            )));
        }
        let shape: Vec<usize> = vec![extent; rank];
        let mut kernels = Vec::with_capacity(q);
        for (line_no, line) in kernel_lines {
            let data: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| SanError::Parse {
                        line: line_no,
                        message: format!("bad kernel value {:?}: {}", tok, e),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            kernels.push(Tensor::from_vec(shape.clone(), data)?);
        }
        Ok(SanModel {
            kernels,
            activation,
            seed,
        })
    }

    pub fn load_checkpoint(path: &Path) -> Result<SanModel> {
        let text = std::fs::read_to_string(path)?;
        SanModel::from_checkpoint_string(&text)
    }
}
