//! Training with mean-flithos model selection, kernel-size sweeps and the
//! downstream linear-classifier evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::activation::default_density;
use crate::data::DatasetSplit;
use crate::error::{Result, SanError};
use crate::metrics::{activation_count, mean_flithos, weight_count, FlithosReport};
use crate::model::{adam_step, backward, forward, init_model, mae, AdamState, SanModel};
use crate::tensor::Tensor;

/// Everything a training run or sweep needs; parsed from `key = value`
/// config files.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub q: usize,
    pub kernel_extents: Vec<usize>,
    pub activations: Vec<String>,
    pub seed: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub border_tolerance: usize,
    pub mu: f64,
    pub sigma: f64,
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            q: 1,
            kernel_extents: vec![100],
            activations: vec!["extrema_pool_indices".into()],
            seed: 0,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            border_tolerance: 0,
            mu: 0.0,
            sigma: 0.1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 || self.q < 1 {
            return Err(SanError::InvalidArgument(
                "epochs, batch_size and q must be >= 1".into(),
            ));
        }
        if self.kernel_extents.is_empty() || self.activations.is_empty() {
            return Err(SanError::InvalidArgument(
                "sweep lists must be non-empty".into(),
            ));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut config = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SanError::Parse {
                line: idx + 1,
                message: format!("expected key = value, got {:?}", raw),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| SanError::Parse {
                line: idx + 1,
                message: format!("bad value for {}: {}", key, e),
            };
            match key {
                "epochs" => config.epochs = value.parse().map_err(|e| bad(&e))?,
                "batch_size" => config.batch_size = value.parse().map_err(|e| bad(&e))?,
                "q" => config.q = value.parse().map_err(|e| bad(&e))?,
                "kernel_extents" => {
                    config.kernel_extents = value
                        .split(',')
                        .map(|tok| tok.trim().parse().map_err(|e| bad(&e)))
                        .collect::<Result<Vec<usize>>>()?
                }
                "activations" => {
                    config.activations =
                        value.split(',').map(|tok| tok.trim().to_string()).collect()
                }
                "seed" => config.seed = value.parse().map_err(|e| bad(&e))?,
                "learning_rate" => config.learning_rate = value.parse().map_err(|e| bad(&e))?,
                "beta1" => config.beta1 = value.parse().map_err(|e| bad(&e))?,
                "beta2" => config.beta2 = value.parse().map_err(|e| bad(&e))?,
                "epsilon" => config.epsilon = value.parse().map_err(|e| bad(&e))?,
                "border_tolerance" => {
                    config.border_tolerance = value.parse().map_err(|e| bad(&e))?
                }
                "mu" => config.mu = value.parse().map_err(|e| bad(&e))?,
                "sigma" => config.sigma = value.parse().map_err(|e| bad(&e))?,
                "workers" => config.workers = value.parse().map_err(|e| bad(&e))?,
                other => {
                    return Err(SanError::Parse {
                        line: idx + 1,
                        message: format!("unknown key {:?}", other),
                    })
                }
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// One cell of a sweep results table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub activation: String,
    pub kernel_extent: usize,
    pub selected_epoch: usize,
    pub validation_phibar: f64,
    pub test_cr_inverse: f64,
    pub test_normalized_loss: f64,
    pub test_phibar: f64,
    pub accuracy_delta: Option<f64>,
}

/// Full result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Kernel snapshot after each epoch, index 0 = after epoch 1.
    pub checkpoints: Vec<SanModel>,
    pub validation_phibar: Vec<f64>,
    pub train_mae_initial: f64,
    pub train_mae_final: f64,
    pub selected_epoch: usize,
    pub selected: SanModel,
}

/// Per-example score reports for a set of examples under one model.
pub fn evaluate(model: &SanModel, examples: &[Tensor]) -> Result<Vec<FlithosReport>> {
    let weights = weight_count(&model.kernels);
    examples
        .iter()
        .map(|x| {
            let trace = forward(model, x)?;
            let maps: Vec<Tensor> = trace.activations.iter().map(|a| a.map.clone()).collect();
            let base = mae(&Tensor::zeros(x.shape()), x)?;
            if base == 0.0 {
                return Err(SanError::DegenerateInput("all-zero example".into()));
            }
            let loss = mae(&trace.reconstruction, x)? / base;
            FlithosReport::new(x.len(), x.rank(), weights, activation_count(&maps), loss)
        })
        .collect()
}

pub fn mean_phibar(model: &SanModel, examples: &[Tensor]) -> Result<f64> {
    let reports = evaluate(model, examples)?;
    mean_flithos(&reports.iter().map(|r| r.flithos).collect::<Vec<_>>())
}

fn mean_train_mae(model: &SanModel, examples: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for x in examples {
        let trace = forward(model, x)?;
        total += mae(&trace.reconstruction, x)?;
    }
    Ok(total / examples.len() as f64)
}

/// Index of the global minimum, earliest epoch on ties.
pub fn select_epoch(validation_phibar: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in validation_phibar.iter().enumerate() {
        if v < validation_phibar[best] {
            best = i;
        }
    }
    best
}

/// Trains one model for one (activation, kernel extent) pair and selects the
/// epoch with the lowest validation mean flithos.
pub fn train_san(
    config: &TrainConfig,
    split: &DatasetSplit,
    activation_tag: &str,
    kernel_extent: usize,
) -> Result<TrainOutcome> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(SanError::InvalidArgument(
            "split needs train and validation examples".into(),
        ));
    }
    let input_shape = split.train[0].shape().to_vec();
    let activation = default_density(
        activation_tag,
        &input_shape,
        kernel_extent,
        config.border_tolerance,
    )?;
    let mut model = init_model(
        config.q,
        kernel_extent,
        input_shape.len(),
        activation,
        config.mu,
        config.sigma,
        config.seed,
    )?;
    let mut state = AdamState::new(&model);
    state.learning_rate = config.learning_rate;
    state.beta1 = config.beta1;
    state.beta2 = config.beta2;
    state.epsilon = config.epsilon;

    let train_mae_initial = mean_train_mae(&model, &split.train)?;
    let mut checkpoints = Vec::with_capacity(config.epochs);
    let mut validation_phibar = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64 + 1));
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            // batch gradient = mean of per-example gradients
            let mut batch_grads: Option<Vec<Tensor>> = None;
            for &idx in batch {
                let trace = forward(&model, &split.train[idx])?;
                let grads = backward(&model, &trace)?;
                batch_grads = Some(match batch_grads {
                    None => grads,
                    Some(acc) => acc
                        .iter()
                        .zip(&grads)
                        .map(|(a, g)| a.add(g))
                        .collect::<Result<Vec<_>>>()?,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            let grads: Vec<Tensor> = batch_grads
                .unwrap()
                .iter()
                .map(|g| g.scale(scale))
                .collect();
            adam_step(&mut model, &mut state, &grads)?;
        }
        validation_phibar.push(mean_phibar(&model, &split.validation)?);
        checkpoints.push(model.clone());
    }
    let train_mae_final = mean_train_mae(&model, &split.train)?;
    let selected_epoch = select_epoch(&validation_phibar);
    Ok(TrainOutcome {
        selected: checkpoints[selected_epoch].clone(),
        checkpoints,
        validation_phibar,
        train_mae_initial,
        train_mae_final,
        selected_epoch,
    })
}

fn sweep_cell(
    config: &TrainConfig,
    split: &DatasetSplit,
    tag: &str,
    extent: usize,
) -> Result<SweepRecord> {
    let outcome = train_san(config, split, tag, extent)?;
    let reports = evaluate(&outcome.selected, &split.test)?;
    let crs: Vec<f64> = reports.iter().map(|r| r.cr_inverse).collect();
    let losses: Vec<f64> = reports.iter().map(|r| r.normalized_loss).collect();
    let phis: Vec<f64> = reports.iter().map(|r| r.flithos).collect();
    Ok(SweepRecord {
        activation: tag.to_string(),
        kernel_extent: extent,
        selected_epoch: outcome.selected_epoch,
        validation_phibar: outcome.validation_phibar[outcome.selected_epoch],
        test_cr_inverse: mean_flithos(&crs)?,
        test_normalized_loss: mean_flithos(&losses)?,
        test_phibar: mean_flithos(&phis)?,
        accuracy_delta: None,
    })
}

/// One record per (activation, kernel extent) pair, each trained
/// independently from the same seed. Cells run on up to `config.workers`
/// threads; the output order is fixed regardless.
pub fn sweep(config: &TrainConfig, split: &DatasetSplit) -> Result<Vec<SweepRecord>> {
    config.validate()?;
    let cells: Vec<(String, usize)> = config
        .activations
        .iter()
        .flat_map(|tag| {
            config
                .kernel_extents
                .iter()
                .map(move |&m| (tag.clone(), m))
        })
        .collect();
    if config.workers <= 1 || cells.len() <= 1 {
        return cells
            .iter()
            .map(|(tag, m)| sweep_cell(config, split, tag, *m))
            .collect();
    }
    let workers = config.workers.min(cells.len());
    let mut results: Vec<Option<Result<SweepRecord>>> = (0..cells.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks = results.chunks_mut(cells.len().div_ceil(workers));
        for (chunk_idx, chunk) in chunks.enumerate() {
            let cells = &cells;
            let start = chunk_idx * cells.len().div_ceil(workers);
            scope.spawn(move || {
                for (offset, slot) in chunk.iter_mut().enumerate() {
                    let (tag, m) = &cells[start + offset];
                    *slot = Some(sweep_cell(config, split, tag, *m));
                }
            });
        }
    });
    results.into_iter().map(|r| r.unwrap()).collect()
}

/// Single fully connected softmax layer.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    pub classes: usize,
    pub input_dim: usize,
    /// Row-major classes x input_dim.
    pub weights: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl LinearClassifier {
    pub fn scores(&self, x: &Tensor) -> Vec<f64> {
        let d = x.data();
        (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.input_dim..(c + 1) * self.input_dim];
                self.offsets[c] + row.iter().zip(d).map(|(&w, &v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &Tensor) -> usize {
        let scores = self.scores(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, inputs: &[Tensor], labels: &[usize]) -> f64 {
        let correct = inputs
            .iter()
            .zip(labels)
            .filter(|(x, &y)| self.predict(x) == y)
            .count();
        correct as f64 / inputs.len() as f64
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Softmax cross-entropy trained with Adam (same hyperparameters as the
/// autoencoder) over seeded shuffled mini-batches. Weights start at zero.
pub fn train_linear_classifier(
    inputs: &[Tensor],
    labels: &[usize],
    classes: usize,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<LinearClassifier> {
    if epochs < 1 || batch_size < 1 {
        return Err(SanError::InvalidArgument(
            "epochs and batch_size must be >= 1".into(),
        ));
    }
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(SanError::InvalidArgument(
            "need one label per input".into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(SanError::InvalidArgument(format!(
            "label {} out of range [0, {})",
            bad, classes
        )));
    }
    let input_dim = inputs[0].len();
    let dim = classes * input_dim;
    let mut clf = LinearClassifier {
        classes,
        input_dim,
        weights: vec![0.0; dim],
        offsets: vec![0.0; classes],
    };
    let (lr, b1, b2, eps): (f64, f64, f64, f64) = (0.01, 0.9, 0.999, 1e-8);
    let mut mw = vec![0.0; dim];
    let mut vw = vec![0.0; dim];
    let mut mb = vec![0.0; classes];
    let mut vb = vec![0.0; classes];
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64 + 1));
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let mut gw = vec![0.0; dim];
            let mut gb = vec![0.0; classes];
            for &idx in batch {
                let x = inputs[idx].data();
                let probs = softmax(&clf.scores(&inputs[idx]));
                for c in 0..classes {
                    let err = probs[c] - if c == labels[idx] { 1.0 } else { 0.0 };
                    gb[c] += err;
                    let row = &mut gw[c * input_dim..(c + 1) * input_dim];
                    for (g, &v) in row.iter_mut().zip(x) {
                        *g += err * v;
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let bc1 = 1.0 - b1.powf(step as f64);
            let bc2 = 1.0 - b2.powf(step as f64);
            let update = |param: &mut [f64], m: &mut [f64], v: &mut [f64], grad: &[f64]| {
                for i in 0..param.len() {
                    let g = grad[i] * scale;
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    param[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                }
            };
            update(&mut clf.weights, &mut mw, &mut vw, &gw);
            update(&mut clf.offsets, &mut mb, &mut vb, &gb);
        }
    }
    Ok(clf)
}

/// Reconstruction of every example under a frozen model.
pub fn reconstruct_all(model: &SanModel, examples: &[Tensor]) -> Result<Vec<Tensor>> {
    examples
        .iter()
        .map(|x| Ok(forward(model, x)?.reconstruction))
        .collect()
}

/// Trains one classifier on the raw inputs and one on the frozen model's
/// reconstructions; returns (reconstruction accuracy - raw accuracy) on the
/// test set, in percentage points.
pub fn accuracy_delta(
    split: &DatasetSplit,
    model: &SanModel,
    classes: usize,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<f64> {
    let train_labels = split
        .train_labels
        .as_ref()
        .ok_or_else(|| SanError::InvalidArgument("split has no train labels".into()))?;
    let test_labels = split
        .test_labels
        .as_ref()
        .ok_or_else(|| SanError::InvalidArgument("split has no test labels".into()))?;
    let raw = train_linear_classifier(
        &split.train,
        train_labels,
        classes,
        epochs,
        batch_size,
        seed,
    )?;
    let raw_acc = raw.accuracy(&split.test, test_labels);
    let recon_train = reconstruct_all(model, &split.train)?;
    let recon_test = reconstruct_all(model, &split.test)?;
    let recon = train_linear_classifier(
        &recon_train,
        train_labels,
        classes,
        epochs,
        batch_size,
        seed,
    )?;
    let recon_acc = recon.accuracy(&recon_test, test_labels);
    Ok((recon_acc - raw_acc) * 100.0)
}

/// Rounds half away from zero at two decimals, the convention the result
/// tables use.
pub fn format_2dp(v: f64) -> String {
    let rounded = (v.abs() * 100.0 + 0.5).floor() / 100.0 * v.signum();
    format!("{:.2}", rounded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Renders sweep records grouped per activation kind, two decimals per value.
pub fn emit_table(records: &[SweepRecord], format: TableFormat) -> Result<String> {
    if records.is_empty() {
        return Err(SanError::InvalidArgument("no records".into()));
    }
    let with_delta = records.iter().any(|r| r.accuracy_delta.is_some());
    let mut grouped: BTreeMap<&str, Vec<&SweepRecord>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.activation.as_str()).or_default().push(r);
    }
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            if with_delta {
                writeln!(out, "activation,m,cr_inverse,normalized_loss,phibar,accuracy_delta")
                    .unwrap();
            } else {
                writeln!(out, "activation,m,cr_inverse,normalized_loss,phibar").unwrap();
            }
            for (tag, rows) in &grouped {
                for r in rows {
                    write!(
                        out,
                        "{},{},{},{},{}",
                        tag,
                        r.kernel_extent,
                        format_2dp(r.test_cr_inverse),
                        format_2dp(r.test_normalized_loss),
                        format_2dp(r.test_phibar)
                    )
                    .unwrap();
                    if with_delta {
                        match r.accuracy_delta {
                            Some(d) => writeln!(out, ",{}", format_2dp(d)).unwrap(),
                            None => writeln!(out, ",").unwrap(),
                        }
                    } else {
                        writeln!(out).unwrap();
                    }
                }
            }
        }
        TableFormat::Markdown => {
            for (tag, rows) in &grouped {
                writeln!(out, "### {}", tag).unwrap();
                if with_delta {
                    writeln!(out, "| m | CR^-1 | L~ | phibar | A+-% |").unwrap();
                    writeln!(out, "|---|-------|----|--------|------|").unwrap();
                } else {
                    writeln!(out, "| m | CR^-1 | L~ | phibar |").unwrap();
                    writeln!(out, "|---|-------|----|--------|").unwrap();
                }
                for r in rows {
                    write!(
                        out,
                        "| {} | {} | {} | {} |",
                        r.kernel_extent,
                        format_2dp(r.test_cr_inverse),
                        format_2dp(r.test_normalized_loss),
                        format_2dp(r.test_phibar)
                    )
                    .unwrap();
                    match (with_delta, r.accuracy_delta) {
                        (true, Some(d)) => writeln!(out, " {} |", format_2dp(d)).unwrap(),
                        (true, None) => writeln!(out, " |").unwrap(),
                        (false, _) => writeln!(out).unwrap(),
                    }
                }
                writeln!(out).unwrap();
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::ActivationKind;
    use crate::data::{physionet_protocol_split, synth_pulse_train};
    use rand::Rng;

    fn pulse_split(seed: u64) -> DatasetSplit {
        let signal = synth_pulse_train(12_000, 100, 70, 0.5, 0.05, seed).unwrap();
        physionet_protocol_split(&signal, "synthetic").unwrap()
    }

    #[test]
    fn config_parses_and_rejects_unknown_keys() {
        let text = "epochs = 5\nbatch_size=2\nkernel_extents = 10, 20\nactivations = relu, extrema\nseed = 7\n# comment\nborder_tolerance = 3\n";
        let c = TrainConfig::parse(text).unwrap();
        assert_eq!(c.epochs, 5);
        assert_eq!(c.kernel_extents, vec![10, 20]);
        assert_eq!(c.activations, vec!["relu", "extrema"]);
        assert_eq!(c.seed, 7);
        assert_eq!(c.border_tolerance, 3);
        assert!(TrainConfig::parse("bogus_key = 1\n").is_err());
        assert!(TrainConfig::parse("epochs = x\n").is_err());
        assert!(TrainConfig::parse("epochs = 0\n").is_err());
    }

    #[test]
    fn selection_picks_global_minimum_earliest() {
        assert_eq!(select_epoch(&[0.9, 0.5, 0.3, 0.7]), 2);
        assert_eq!(select_epoch(&[0.4, 0.2, 0.2, 0.9]), 1);
        assert_eq!(select_epoch(&[0.1]), 0);
    }

    #[test]
    fn smoke_identity_extent_one() {
        let split = pulse_split(1);
        let config = TrainConfig {
            epochs: 1,
            kernel_extents: vec![1],
            activations: vec!["identity".into()],
            sigma: 0.0,
            ..TrainConfig::default()
        };
        let outcome = train_san(&config, &split, "identity", 1).unwrap();
        assert!(outcome.validation_phibar[0].is_finite());
    }

    #[test]
    fn selected_checkpoint_matches_lowest_validation_phibar() {
        let split = pulse_split(2);
        let config = TrainConfig {
            epochs: 4,
            kernel_extents: vec![100],
            ..TrainConfig::default()
        };
        let outcome = train_san(&config, &split, "extrema_pool_indices", 100).unwrap();
        let best = select_epoch(&outcome.validation_phibar);
        assert_eq!(outcome.selected_epoch, best);
        assert_eq!(outcome.selected, outcome.checkpoints[best]);
    }

    #[test]
    fn training_reduces_mae_on_pulse_train() {
        let mut wins = 0;
        for seed in 0..10 {
            let split = pulse_split(100 + seed);
            let config = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            let outcome = train_san(&config, &split, "extrema_pool_indices", 100).unwrap();
            if outcome.train_mae_final <= 0.5 * outcome.train_mae_initial {
                wins += 1;
            }
        }
        assert!(wins >= 9, "MAE halved for only {}/10 seeds", wins);
    }

    #[test]
    fn sweep_cardinality_and_determinism() {
        let split = pulse_split(3);
        let config = TrainConfig {
            epochs: 2,
            kernel_extents: vec![50, 100],
            activations: vec!["relu".into(), "extrema_pool_indices".into()],
            seed: 5,
            ..TrainConfig::default()
        };
        let a = sweep(&config, &split).unwrap();
        assert_eq!(a.len(), 4);
        let b = sweep(&config, &split).unwrap();
        assert_eq!(a, b);
        // parallel workers produce the identical records in the same order
        let parallel = TrainConfig {
            workers: 4,
            ..config
        };
        let c = sweep(&parallel, &split).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn identity_extent_one_cr_inverse() {
        let split = pulse_split(4);
        let config = TrainConfig {
            epochs: 1,
            kernel_extents: vec![1],
            activations: vec!["identity".into()],
            ..TrainConfig::default()
        };
        let records = sweep(&config, &split).unwrap();
        assert!((records[0].test_cr_inverse - 2.001).abs() < 1e-12);
    }

    #[test]
    fn classifier_separates_linear_clusters() {
        let mut rng = crate::test_rng(8);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..100 {
            let class = rng.gen_range(0..2usize);
            let center = if class == 0 { -2.0 } else { 2.0 };
            inputs.push(Tensor::from_slice_1d(&[
                center + rng.gen_range(-0.5..0.5),
                center + rng.gen_range(-0.5..0.5),
            ]));
            labels.push(class);
        }
        let clf = train_linear_classifier(&inputs, &labels, 2, 5, 8, 1).unwrap();
        assert_eq!(clf.accuracy(&inputs, &labels), 1.0);
    }

    #[test]
    fn classifier_chance_level_on_random_labels() {
        let mut rng = crate::test_rng(12);
        let make = |rng: &mut rand_chacha::ChaCha8Rng| {
            let data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor::from_slice_1d(&data)
        };
        let train: Vec<Tensor> = (0..400).map(|_| make(&mut rng)).collect();
        let train_labels: Vec<usize> = (0..400).map(|_| rng.gen_range(0..10)).collect();
        let held: Vec<Tensor> = (0..400).map(|_| make(&mut rng)).collect();
        let held_labels: Vec<usize> = (0..400).map(|_| rng.gen_range(0..10)).collect();
        let clf = train_linear_classifier(&train, &train_labels, 10, 5, 32, 2).unwrap();
        let acc = clf.accuracy(&held, &held_labels) * 100.0;
        assert!((5.0..=15.0).contains(&acc), "accuracy {}%", acc);
    }

    #[test]
    fn classifier_rejects_bad_arguments() {
        let x = vec![Tensor::from_slice_1d(&[1.0])];
        assert!(train_linear_classifier(&x, &[0], 2, 0, 1, 1).is_err());
        assert!(train_linear_classifier(&x, &[5], 2, 1, 1, 1).is_err());
        assert!(train_linear_classifier(&x, &[0, 1], 2, 1, 1, 1).is_err());
    }

    fn labeled_split(rng: &mut impl Rng) -> DatasetSplit {
        let make = |rng: &mut dyn FnMut() -> f64, class: usize| {
            let center = class as f64 * 2.0 - 1.0;
            Tensor::from_slice_1d(&[center + rng(), center + rng(), center + rng(), center + rng()])
        };
        let mut gen = {
            let mut vals: Vec<f64> = (0..4000).map(|_| rng.gen_range(-0.4..0.4)).collect();
            vals.reverse();
            move || vals.pop().unwrap()
        };
        let mut train = Vec::new();
        let mut train_labels = Vec::new();
        let mut test = Vec::new();
        let mut test_labels = Vec::new();
        for i in 0..120 {
            let class = i % 2;
            let x = make(&mut gen, class);
            if i < 80 {
                train.push(x);
                train_labels.push(class);
            } else {
                test.push(x);
                test_labels.push(class);
            }
        }
        DatasetSplit {
            train,
            validation: Vec::new(),
            test,
            train_labels: Some(train_labels),
            validation_labels: None,
            test_labels: Some(test_labels),
            source: "clusters".into(),
            preprocessing: "none".into(),
        }
    }

    #[test]
    fn identity_model_gives_exactly_zero_delta() {
        let mut rng = crate::test_rng(30);
        let split = labeled_split(&mut rng);
        let model = SanModel {
            kernels: vec![Tensor::from_slice_1d(&[1.0])],
            activation: ActivationKind::Identity,
            seed: 0,
        };
        let delta = accuracy_delta(&split, &model, 2, 5, 8, 3).unwrap();
        assert_eq!(delta, 0.0);
    }

    #[test]
    fn zero_model_delta_bounded_by_chance() {
        let mut rng = crate::test_rng(31);
        let split = labeled_split(&mut rng);
        let model = SanModel {
            kernels: vec![Tensor::from_slice_1d(&[0.0])],
            activation: ActivationKind::Identity,
            seed: 0,
        };
        let raw = train_linear_classifier(
            &split.train,
            split.train_labels.as_ref().unwrap(),
            2,
            5,
            8,
            3,
        )
        .unwrap();
        let raw_acc = raw.accuracy(&split.test, split.test_labels.as_ref().unwrap()) * 100.0;
        let delta = accuracy_delta(&split, &model, 2, 5, 8, 3).unwrap();
        assert!(delta <= -(raw_acc - 50.0) + 1e-9, "delta {} raw {}", delta, raw_acc);
    }

    #[test]
    fn frozen_model_untouched_by_classifier_training() {
        let mut rng = crate::test_rng(32);
        let split = labeled_split(&mut rng);
        let model = init_model(1, 3, 1, ActivationKind::Relu, 0.0, 0.1, 6).unwrap();
        let before = model.clone();
        accuracy_delta(&split, &model, 2, 3, 8, 3).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn table_formatting_and_round_trip() {
        let record = SweepRecord {
            activation: "extrema".into(),
            kernel_extent: 72,
            selected_epoch: 3,
            validation_phibar: 0.31,
            test_cr_inverse: 0.1049,
            test_normalized_loss: 0.3257,
            test_phibar: 0.342,
            accuracy_delta: None,
        };
        let csv = emit_table(std::slice::from_ref(&record), TableFormat::Csv).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "activation,m,cr_inverse,normalized_loss,phibar");
        let row = lines.next().unwrap();
        assert_eq!(row, "extrema,72,0.10,0.33,0.34");
        // re-parse preserves the 2-decimal values
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.33);
        let md = emit_table(&[record], TableFormat::Markdown).unwrap();
        assert!(md.contains("| 72 | 0.10 | 0.33 | 0.34 |"));
        assert!(emit_table(&[], TableFormat::Csv).is_err());
    }

    #[test]
    fn format_2dp_rounds_half_away() {
        assert_eq!(format_2dp(0.3257), "0.33");
        assert_eq!(format_2dp(0.125), "0.13");
        assert_eq!(format_2dp(-0.125), "-0.13");
        assert_eq!(format_2dp(2.001), "2.00");
    }
}
