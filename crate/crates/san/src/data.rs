//! Local-file ingestion, preprocessing, splitting and synthetic signal
//! generation.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SanError};
use crate::tensor::Tensor;

/// Train/validation/test partition of a data source.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Tensor>,
    pub validation: Vec<Tensor>,
    pub test: Vec<Tensor>,
    pub train_labels: Option<Vec<usize>>,
    pub validation_labels: Option<Vec<usize>>,
    pub test_labels: Option<Vec<usize>>,
    pub source: String,
    pub preprocessing: String,
}

impl DatasetSplit {
    pub fn unlabeled(
        train: Vec<Tensor>,
        validation: Vec<Tensor>,
        test: Vec<Tensor>,
        source: &str,
        preprocessing: &str,
    ) -> Self {
        DatasetSplit {
            train,
            validation,
            test,
            train_labels: None,
            validation_labels: None,
            test_labels: None,
            source: source.into(),
            preprocessing: preprocessing.into(),
        }
    }
}

/// One numeric value per line (or one comma-separated row).
pub fn load_signal_csv(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path)?;
    parse_signal_csv(&text)
}

pub fn parse_signal_csv(text: &str) -> Result<Tensor> {
    let mut values = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        for token in line.split(',') {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            let v: f64 = token.parse().map_err(|e| SanError::Parse {
                line: idx + 1,
                message: format!("{:?}: {}", token, e),
            })?;
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(SanError::DegenerateInput("empty signal file".into()));
    }
    Ok(Tensor::from_slice_1d(&values))
}

pub fn signal_to_csv(signal: &Tensor) -> String {
    let mut out = String::new();
    for v in signal.data() {
        out.push_str(&format!("{:.17e}\n", v));
    }
    out
}

/// Splits the first 12000 samples into 12 consecutive 1000-sample segments
/// (6 train, 2 validation, 4 test), each standardized by its own mean and
/// standard deviation.
pub fn physionet_protocol_split(signal: &Tensor, source: &str) -> Result<DatasetSplit> {
    const SEGMENT: usize = 1000;
    const SEGMENTS: usize = 12;
    if signal.rank() != 1 || signal.len() < SEGMENT * SEGMENTS {
        return Err(SanError::InvalidArgument(format!(
            "need a 1D signal with at least {} samples, got {}",
            SEGMENT * SEGMENTS,
            signal.len()
        )));
    }
    let mut segments = Vec::with_capacity(SEGMENTS);
    for s in 0..SEGMENTS {
        let chunk = &signal.data()[s * SEGMENT..(s + 1) * SEGMENT];
        let mean: f64 = chunk.iter().sum::<f64>() / SEGMENT as f64;
        let var: f64 = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / SEGMENT as f64;
        if var == 0.0 {
            return Err(SanError::DegenerateInput(format!(
                "segment {} has zero variance",
                s
            )));
        }
        let std = var.sqrt();
        let standardized: Vec<f64> = chunk.iter().map(|v| (v - mean) / std).collect();
        segments.push(Tensor::from_slice_1d(&standardized));
    }
    let test = segments.split_off(8);
    let validation = segments.split_off(6);
    Ok(DatasetSplit::unlabeled(
        segments,
        validation,
        test,
        source,
        "per-segment standardization",
    ))
}

/// Rescales to [0, 1] with one global min/max across all examples.
pub fn minmax_normalize(examples: &[Tensor]) -> Result<Vec<Tensor>> {
    if examples.is_empty() {
        return Err(SanError::InvalidArgument("no examples".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for ex in examples {
        for &v in ex.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi <= lo {
        return Err(SanError::DegenerateInput(
            "global max equals global min".into(),
        ));
    }
    let range = hi - lo;
    Ok(examples.iter().map(|ex| ex.map(|v| (v - lo) / range)).collect())
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| SanError::Format("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Reads an IDX image/label file pair; pixel bytes are scaled to [0, 1].
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<Vec<(Tensor, usize)>> {
    let images = std::fs::read(images_path)?;
    let labels = std::fs::read(labels_path)?;
    decode_idx_pair(&images, &labels)
}

pub fn decode_idx_pair(images: &[u8], labels: &[u8]) -> Result<Vec<(Tensor, usize)>> {
    let magic = read_be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(SanError::Format(format!(
            "bad image magic {:#010x}, expected {:#010x}",
            magic, IDX_IMAGES_MAGIC
        )));
    }
    let count = read_be_u32(images, 4)? as usize;
    let rows = read_be_u32(images, 8)? as usize;
    let cols = read_be_u32(images, 12)? as usize;
    let pixels = images
        .get(16..)
        .ok_or_else(|| SanError::Format("truncated IDX image header".into()))?;
    if pixels.len() != count * rows * cols {
        return Err(SanError::Format(format!(
            "image payload is {} bytes, expected {}",
            pixels.len(),
            count * rows * cols
        )));
    }
    let lmagic = read_be_u32(labels, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(SanError::Format(format!(
            "bad label magic {:#010x}, expected {:#010x}",
            lmagic, IDX_LABELS_MAGIC
        )));
    }
    let lcount = read_be_u32(labels, 4)? as usize;
    let label_bytes = labels
        .get(8..)
        .ok_or_else(|| SanError::Format("truncated IDX label header".into()))?;
    if label_bytes.len() != lcount {
        return Err(SanError::Format(format!(
            "label payload is {} bytes, expected {}",
            label_bytes.len(),
            lcount
        )));
    }
    if lcount != count {
        return Err(SanError::InvalidArgument(format!(
            "{} images but {} labels",
            count, lcount
        )));
    }
    let mut out = Vec::with_capacity(count);
    for (image, &label) in pixels.chunks_exact(rows * cols).zip(label_bytes) {
        let data: Vec<f64> = image.iter().map(|&b| b as f64 / 255.0).collect();
        out.push((Tensor::from_vec(vec![rows, cols], data)?, label as usize));
    }
    Ok(out)
}

/// Deterministic 1D signal of Gaussian-shaped pulses every `period` samples
/// with per-pulse amplitude jitter and additive noise.
pub fn synth_pulse_train(
    n: usize,
    period: usize,
    pulse_width: usize,
    amplitude_jitter: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Tensor> {
    if pulse_width < 1 || period <= pulse_width {
        return Err(SanError::InvalidArgument(format!(
            "need period > pulse_width >= 1, got period {} width {}",
            period, pulse_width
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = pulse_template(pulse_width);
    let mut signal = vec![0.0; n];
    let mut start = 0;
    while start + pulse_width <= n {
        let amplitude = 1.0 + amplitude_jitter * symmetric_unit(&mut rng);
        for (t, &v) in template.data().iter().enumerate() {
            signal[start + t] += amplitude * v;
        }
        start += period;
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| SanError::InvalidArgument(format!("bad noise sigma: {}", e)))?;
        for v in &mut signal {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(Tensor::from_slice_1d(&signal))
}

fn symmetric_unit(rng: &mut impl rand::Rng) -> f64 {
    rng.gen_range(-1.0..1.0)
}

/// The unit-amplitude pulse shape used by `synth_pulse_train`.
pub fn pulse_template(pulse_width: usize) -> Tensor {
    let center = (pulse_width as f64 - 1.0) / 2.0;
    let sigma = pulse_width as f64 / 6.0;
    let data: Vec<f64> = (0..pulse_width)
        .map(|t| {
            let z = (t as f64 - center) / sigma;
            (-0.5 * z * z).exp()
        })
        .collect();
    Tensor::from_slice_1d(&data)
}
