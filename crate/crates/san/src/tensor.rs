//! Dense 1D/2D f64 arrays with same-padding cross-correlation and its adjoints.
//!
//! This is the whole numerical substrate: the encoder, decoder and every
//! gradient in the crate are built from `conv_same` and its two adjoints.
//! The forward primitive is cross-correlation (no kernel flip); same padding
//! uses left pad `(m-1)/2` and right pad `m/2` per axis, so even kernel
//! sizes are well-defined.

use crate::error::{Result, SanError};

/// Dense row-major array of rank 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(SanError::UnsupportedRank(format!(
                "rank must be 1 or 2, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(SanError::InvalidArgument("zero extent".into()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SanError::ShapeMismatch(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_slice_1d(values: &[f64]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of samples.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Extents as (rows, cols); rank 1 is treated as a single row.
    fn extents_2d(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1]),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(SanError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(SanError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Number of strictly non-zero entries.
    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }
}

fn check_same_rank(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(SanError::ShapeMismatch(format!(
            "rank {} vs rank {}",
            a.rank(),
            b.rank()
        )));
    }
    Ok(())
}

fn check_kernel_fits(x: &Tensor, kernel_shape: &[usize]) -> Result<()> {
    if x.rank() != kernel_shape.len() {
        return Err(SanError::ShapeMismatch(format!(
            "input rank {} vs kernel rank {}",
            x.rank(),
            kernel_shape.len()
        )));
    }
    for (xe, ke) in x.shape().iter().zip(kernel_shape) {
        if ke > xe {
            return Err(SanError::InvalidArgument(format!(
                "kernel extent {} exceeds input extent {}",
                ke, xe
            )));
        }
    }
    Ok(())
}

/// Same-padding cross-correlation: `out[t] = sum_j x[t + j - p] w[j]` with
/// zero out-of-range reads and left pad `p = (m-1)/2` per axis.
pub fn conv_same(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    check_same_rank(x, w)?;
    check_kernel_fits(x, w.shape())?;
    let (h, wid) = x.extents_2d();
    let (kh, kw) = w.extents_2d();
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(x.shape());
    for a in 0..h {
        for b in 0..wid {
            let mut acc = 0.0;
            for i in 0..kh {
                let ra = a as isize + i as isize - ph as isize;
                if ra < 0 || ra >= h as isize {
                    continue;
                }
                for j in 0..kw {
                    let rb = b as isize + j as isize - pw as isize;
                    if rb < 0 || rb >= wid as isize {
                        continue;
                    }
                    acc += x.data[ra as usize * wid + rb as usize] * w.data[i * kw + j];
                }
            }
            out.data[a * wid + b] = acc;
        }
    }
    Ok(out)
}

/// Adjoint of `conv_same` w.r.t. the input: returns d<g, conv_same(x, w)>/dx.
pub fn conv_same_adjoint_input(g: &Tensor, w: &Tensor) -> Result<Tensor> {
    check_same_rank(g, w)?;
    check_kernel_fits(g, w.shape())?;
    let (h, wid) = g.extents_2d();
    let (kh, kw) = w.extents_2d();
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(g.shape());
    // out[u] = sum_j g[u - j + p] w[j]
    for u in 0..h {
        for v in 0..wid {
            let mut acc = 0.0;
            for i in 0..kh {
                let ra = u as isize - i as isize + ph as isize;
                if ra < 0 || ra >= h as isize {
                    continue;
                }
                for j in 0..kw {
                    let rb = v as isize - j as isize + pw as isize;
                    if rb < 0 || rb >= wid as isize {
                        continue;
                    }
                    acc += g.data[ra as usize * wid + rb as usize] * w.data[i * kw + j];
                }
            }
            out.data[u * wid + v] = acc;
        }
    }
    Ok(out)
}

/// Adjoint of `conv_same` w.r.t. the kernel: returns d<g, conv_same(x, w)>/dw
/// with shape `kernel_shape`.
pub fn conv_same_adjoint_kernel(g: &Tensor, x: &Tensor, kernel_shape: &[usize]) -> Result<Tensor> {
    check_same_rank(g, x)?;
    if g.shape() != x.shape() {
        return Err(SanError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            g.shape(),
            x.shape()
        )));
    }
    check_kernel_fits(x, kernel_shape)?;
    let (h, wid) = x.extents_2d();
    let (kh, kw) = match kernel_shape.len() {
        1 => (1, kernel_shape[0]),
        _ => (kernel_shape[0], kernel_shape[1]),
    };
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = Tensor::zeros(kernel_shape);
    for i in 0..kh {
        for j in 0..kw {
            let mut acc = 0.0;
            for a in 0..h {
                let ra = a as isize + i as isize - ph as isize;
                if ra < 0 || ra >= h as isize {
                    continue;
                }
                for b in 0..wid {
                    let rb = b as isize + j as isize - pw as isize;
                    if rb < 0 || rb >= wid as isize {
                        continue;
                    }
                    acc += g.data[a * wid + b] * x.data[ra as usize * wid + rb as usize];
                }
            }
            out.data[i * kw + j] = acc;
        }
    }
    Ok(out)
}
