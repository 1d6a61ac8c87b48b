//! The five activation functions that turn a similarity map into a sparse
//! activation map.
//!
//! Each function also returns a binary selection mask. The mask is the frozen
//! index set the backward pass routes gradients through, so `map == s * mask`
//! holds elementwise for every kind.

use crate::error::{Result, SanError};
use crate::tensor::Tensor;

/// Activation function choice plus its sparsity parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationKind {
    Identity,
    Relu,
    /// Keep the `k` coordinates with the largest absolute value.
    TopKAbsolutes { k: usize },
    /// Keep the per-cell absolute maximum on a grid of `m`-sized cells.
    ExtremaPoolIndices { m: usize },
    /// Keep extrema separated by at least `med - border_tolerance` samples.
    Extrema { med: usize, border_tolerance: usize },
}

impl ActivationKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ActivationKind::Identity => "identity",
            ActivationKind::Relu => "relu",
            ActivationKind::TopKAbsolutes { .. } => "topk_absolutes",
            ActivationKind::ExtremaPoolIndices { .. } => "extrema_pool_indices",
            ActivationKind::Extrema { .. } => "extrema",
        }
    }
}

/// Sparse map plus the binary mask of retained coordinates.
#[derive(Debug, Clone)]
pub struct ActivationResult {
    pub map: Tensor,
    pub mask: Tensor,
}

impl ActivationResult {
    fn from_mask(s: &Tensor, mask: Tensor) -> Self {
        let map = s.zip_map(&mask, |v, m| v * m).expect("mask shape matches");
        ActivationResult { map, mask }
    }
}

pub fn apply(kind: &ActivationKind, s: &Tensor) -> Result<ActivationResult> {
    match kind {
        ActivationKind::Identity => Ok(apply_identity(s)),
        ActivationKind::Relu => Ok(apply_relu(s)),
        ActivationKind::TopKAbsolutes { k } => apply_topk_absolutes(s, *k),
        ActivationKind::ExtremaPoolIndices { m } => apply_extrema_pool_indices(s, *m),
        ActivationKind::Extrema {
            med,
            border_tolerance,
        } => apply_extrema(s, *med, *border_tolerance),
    }
}

pub fn apply_identity(s: &Tensor) -> ActivationResult {
    let mask = s.map(|_| 1.0);
    ActivationResult::from_mask(s, mask)
}

/// Mask is 1 only where s is strictly positive, so exact zeros carry no
/// gradient.
pub fn apply_relu(s: &Tensor) -> ActivationResult {
    let mask = s.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    ActivationResult::from_mask(s, mask)
}

/// Keeps exactly `k` coordinates, those with the largest |s|; ties break
/// toward the lowest linear index.
pub fn apply_topk_absolutes(s: &Tensor, k: usize) -> Result<ActivationResult> {
    let n = s.len();
    if k < 1 || k > n {
        return Err(SanError::InvalidArgument(format!(
            "k = {} out of range [1, {}]",
            k, n
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        s.data()[b]
            .abs()
            .partial_cmp(&s.data()[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut mask = Tensor::zeros(s.shape());
    for &idx in order.iter().take(k) {
        mask.data_mut()[idx] = 1.0;
    }
    Ok(ActivationResult::from_mask(s, mask))
}

/// Tiles the input with non-overlapping cells of extent `m` per axis (the
/// last cells may be smaller) and keeps the absolute maximum of each cell.
pub fn apply_extrema_pool_indices(s: &Tensor, m: usize) -> Result<ActivationResult> {
    if m < 1 || s.shape().iter().any(|&e| m > e) {
        return Err(SanError::InvalidArgument(format!(
            "pool extent {} out of range for shape {:?}",
            m,
            s.shape()
        )));
    }
    let (rows, cols) = match s.shape() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        _ => unreachable!(),
    };
    let cell_m = if s.rank() == 1 { (1, m) } else { (m, m) };
    let mut mask = Tensor::zeros(s.shape());
    let mut r0 = 0;
    while r0 < rows {
        let r1 = (r0 + cell_m.0).min(rows);
        let mut c0 = 0;
        while c0 < cols {
            let c1 = (c0 + cell_m.1).min(cols);
            let mut best = r0 * cols + c0;
            for r in r0..r1 {
                for c in c0..c1 {
                    let idx = r * cols + c;
                    if s.data()[idx].abs() > s.data()[best].abs() {
                        best = idx;
                    }
                }
            }
            mask.data_mut()[best] = 1.0;
            c0 = c1;
        }
        r0 = r1;
    }
    Ok(ActivationResult::from_mask(s, mask))
}

/// 1D extrema detection with a minimum extrema distance.
///
/// Candidates are the sign changes of the padded first difference; they are
/// visited in descending |s| and a candidate is dropped when a stronger
/// retained one lies strictly within `med - border_tolerance` samples.
pub fn apply_extrema(s: &Tensor, med: usize, border_tolerance: usize) -> Result<ActivationResult> {
    if s.rank() != 1 {
        return Err(SanError::UnsupportedRank(
            "extrema activation is defined for 1D input only".into(),
        ));
    }
    let n = s.len();
    if med < 1 || med >= n {
        return Err(SanError::InvalidArgument(format!(
            "med = {} out of range [1, {})",
            med, n
        )));
    }
    if border_tolerance >= med {
        return Err(SanError::InvalidArgument(format!(
            "border tolerance {} must be < med {}",
            border_tolerance, med
        )));
    }
    let d = s.data();
    // Padded first differences: diff[t] = s[t] - s[t-1], with a zero sample
    // on either side.
    let prev_diff = |t: usize| if t == 0 { 0.0 } else { d[t] - d[t - 1] };
    let next_diff = |t: usize| if t + 1 == n { 0.0 } else { d[t + 1] - d[t] };
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&t| {
            let p = prev_diff(t);
            let q = next_diff(t);
            let peak = p >= 0.0 && q < 0.0;
            let valley = p < 0.0 && q >= 0.0;
            peak || valley
        })
        .collect();
    candidates.sort_by(|&a, &b| {
        d[b].abs()
            .partial_cmp(&d[a].abs())
            .unwrap()
            .then(a.cmp(&b))
    });
    let radius = med - border_tolerance;
    let mut retained: Vec<usize> = Vec::new();
    let mut mask = Tensor::zeros(s.shape());
    for &c in &candidates {
        let blocked = retained
            .iter()
            .any(|&r| (c as isize - r as isize).unsigned_abs() < radius);
        if !blocked {
            retained.push(c);
            mask.data_mut()[c] = 1.0;
        }
    }
    Ok(ActivationResult::from_mask(s, mask))
}

/// Derives the sparsity parameter each kind uses from the kernel size `m`,
/// matching densities across kinds: top-k gets `k = prod(floor(L/m))` over
/// axes, pooling uses the cell extent `m` and extrema the distance `med = m`.
pub fn default_density(
    tag: &str,
    input_shape: &[usize],
    m: usize,
    border_tolerance: usize,
) -> Result<ActivationKind> {
    if m < 1 {
        return Err(SanError::InvalidArgument("m must be >= 1".into()));
    }
    match tag {
        "identity" => Ok(ActivationKind::Identity),
        "relu" => Ok(ActivationKind::Relu),
        "topk_absolutes" => {
            let mut k = 1usize;
            for &ext in input_shape {
                let per_axis = ext / m;
                if per_axis == 0 {
                    return Err(SanError::InvalidArgument(format!(
                        "floor({}/{}) = 0 gives k = 0",
                        ext, m
                    )));
                }
                k *= per_axis;
            }
            Ok(ActivationKind::TopKAbsolutes { k })
        }
        "extrema_pool_indices" => Ok(ActivationKind::ExtremaPoolIndices { m }),
        "extrema" => Ok(ActivationKind::Extrema {
            med: m,
            border_tolerance,
        }),
        other => Err(SanError::InvalidArgument(format!(
            "unknown activation tag {:?}",
            other
        ))),
    }
}

/// All five tags, in the order the result tables use.
pub const ALL_TAGS: [&str; 5] = [
    "identity",
    "relu",
    "topk_absolutes",
    "extrema_pool_indices",
    "extrema",
];

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn t1(values: &[f64]) -> Tensor {
        Tensor::from_slice_1d(values)
    }

    #[test]
    fn identity_passes_through() {
        let r = apply_identity(&t1(&[1.0, -2.0, 0.0]));
        assert_eq!(r.map.data(), &[1.0, -2.0, 0.0]);
        assert_eq!(r.mask.data(), &[1.0, 1.0, 1.0]);
        let z = apply_identity(&Tensor::zeros(&[4]));
        assert_eq!(z.mask.data(), &[1.0; 4]);
        let s2 = Tensor::from_vec(vec![2, 2], vec![1.0, -1.0, 0.5, 0.0]).unwrap();
        assert_eq!(apply_identity(&s2).map, s2);
    }

    #[test]
    fn relu_zeroes_negatives() {
        let r = apply_relu(&t1(&[1.0, -2.0, 3.0]));
        assert_eq!(r.map.data(), &[1.0, 0.0, 3.0]);
        assert_eq!(r.mask.data(), &[1.0, 0.0, 1.0]);
        let neg = apply_relu(&t1(&[-1.0, -0.5]));
        assert_eq!(neg.map.count_nonzero(), 0);
        assert_eq!(neg.mask.count_nonzero(), 0);
        // strict inequality at zero
        let z = apply_relu(&t1(&[0.0, 2.0]));
        assert_eq!(z.mask.data(), &[0.0, 1.0]);
    }

    #[test]
    fn topk_keeps_largest_absolutes() {
        let r = apply_topk_absolutes(&t1(&[0.5, -0.2, 0.7, 0.1]), 2).unwrap();
        assert_eq!(r.map.data(), &[0.5, 0.0, 0.7, 0.0]);
        let all = apply_topk_absolutes(&t1(&[1.0, 2.0]), 2).unwrap();
        assert_eq!(all.map.data(), &[1.0, 2.0]);
        assert!(apply_topk_absolutes(&t1(&[1.0]), 0).is_err());
        assert!(apply_topk_absolutes(&t1(&[1.0]), 2).is_err());
    }

    #[test]
    fn topk_matches_full_sort_oracle() {
        let mut rng = crate::test_rng(99);
        for _ in 0..200 {
            let s: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = apply_topk_absolutes(&t1(&s), 7).unwrap();
            let mut order: Vec<usize> = (0..64).collect();
            order.sort_by(|&a, &b| s[b].abs().partial_cmp(&s[a].abs()).unwrap().then(a.cmp(&b)));
            let expected: std::collections::BTreeSet<usize> =
                order.into_iter().take(7).collect();
            let got: std::collections::BTreeSet<usize> = (0..64)
                .filter(|&i| r.mask.data()[i] == 1.0)
                .collect();
            assert_eq!(got, expected);
            assert_eq!(r.mask.count_nonzero(), 7);
        }
    }

    #[test]
    fn extrema_pool_keeps_per_cell_max() {
        let r = apply_extrema_pool_indices(&t1(&[1.0, 2.0, 3.0, 4.0]), 2).unwrap();
        assert_eq!(r.map.data(), &[0.0, 2.0, 0.0, 4.0]);
        let id = apply_extrema_pool_indices(&t1(&[1.0, -2.0, 3.0]), 1).unwrap();
        assert_eq!(id.map.data(), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn extrema_pool_2d_single_nonzero() {
        let mut data = vec![0.0; 16];
        data[4 + 2] = 5.0;
        let s = Tensor::from_vec(vec![4, 4], data).unwrap();
        let r = apply_extrema_pool_indices(&s, 2).unwrap();
        // one retained coordinate per 2x2 cell, four cells total
        assert_eq!(r.mask.count_nonzero(), 4);
        assert_eq!(r.map.data()[4 + 2], 5.0);
        assert_eq!(r.map.count_nonzero(), 1);
        // the tie-broken zero picks in the other cells sit at each cell's
        // lowest linear index
        assert_eq!(r.mask.data()[0], 1.0);
        assert_eq!(r.mask.data()[2 * 4], 1.0);
        assert_eq!(r.mask.data()[2 * 4 + 2], 1.0);
    }

    #[test]
    fn extrema_distance_rules() {
        let r = apply_extrema(&t1(&[0.0, 1.0, 0.0, 2.0, 0.0]), 1, 0).unwrap();
        assert_eq!(r.map.data(), &[0.0, 1.0, 0.0, 2.0, 0.0]);
        let r = apply_extrema(&t1(&[0.0, 3.0, 0.0, 2.0, 0.0]), 3, 0).unwrap();
        assert_eq!(r.map.data(), &[0.0, 3.0, 0.0, 0.0, 0.0]);
        let mono = apply_extrema(&t1(&[1.0, 2.0, 3.0, 4.0]), 2, 0).unwrap();
        assert_eq!(mono.map.count_nonzero(), 0);
    }

    #[test]
    fn extrema_rejects_bad_input() {
        let s2 = Tensor::from_vec(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(apply_extrema(&s2, 1, 0).is_err());
        assert!(apply_extrema(&t1(&[1.0, 2.0]), 0, 0).is_err());
        assert!(apply_extrema(&t1(&[1.0, 2.0]), 2, 0).is_err());
        assert!(apply_extrema(&t1(&[1.0, 2.0, 3.0]), 2, 2).is_err());
    }

    #[test]
    fn default_density_formulas() {
        match default_density("topk_absolutes", &[1000], 10, 0).unwrap() {
            ActivationKind::TopKAbsolutes { k } => assert_eq!(k, 100),
            other => panic!("unexpected {:?}", other),
        }
        match default_density("topk_absolutes", &[28, 28], 3, 0).unwrap() {
            ActivationKind::TopKAbsolutes { k } => assert_eq!(k, 81),
            other => panic!("unexpected {:?}", other),
        }
        match default_density("topk_absolutes", &[12], 12, 0).unwrap() {
            ActivationKind::TopKAbsolutes { k } => assert_eq!(k, 1),
            other => panic!("unexpected {:?}", other),
        }
        assert!(default_density("topk_absolutes", &[5], 10, 0).is_err());
        match default_density("extrema", &[100], 7, 3).unwrap() {
            ActivationKind::Extrema {
                med,
                border_tolerance,
            } => {
                assert_eq!(med, 7);
                assert_eq!(border_tolerance, 3);
            }
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn masking_identity_holds_for_all_kinds() {
        let mut rng = crate::test_rng(5);
        let s: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = t1(&s);
        let kinds = [
            ActivationKind::Identity,
            ActivationKind::Relu,
            ActivationKind::TopKAbsolutes { k: 5 },
            ActivationKind::ExtremaPoolIndices { m: 8 },
            ActivationKind::Extrema {
                med: 8,
                border_tolerance: 2,
            },
        ];
        for kind in &kinds {
            let r = apply(kind, &s).unwrap();
            for i in 0..s.len() {
                assert_eq!(r.map.data()[i], s.data()[i] * r.mask.data()[i]);
            }
        }
    }

    /// Low-pass filtered noise: random walk smoothed by a box filter.
    fn smooth_signal(rng: &mut impl Rng, n: usize) -> Tensor {
        let noise: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = t1(&noise);
        let w = t1(&[1.0; 9]);
        crate::tensor::conv_same(&x, &w).unwrap()
    }

    #[test]
    fn sparse_kinds_have_comparable_density() {
        let mut rng = crate::test_rng(21);
        let m = 16;
        for _ in 0..20 {
            let s = smooth_signal(&mut rng, 256);
            let k = match default_density("topk_absolutes", s.shape(), m, 0).unwrap() {
                ActivationKind::TopKAbsolutes { k } => k,
                _ => unreachable!(),
            };
            let topk = apply_topk_absolutes(&s, k).unwrap().mask.count_nonzero();
            let pool = apply_extrema_pool_indices(&s, m)
                .unwrap()
                .mask
                .count_nonzero();
            let extrema = apply_extrema(&s, m, 0).unwrap().mask.count_nonzero();
            for (a, b) in [(topk, pool), (topk, extrema), (pool, extrema)] {
                let (lo, hi) = (a.min(b) as f64, a.max(b) as f64);
                assert!(hi <= 2.0 * lo, "counts differ by >2x: {:?}", (topk, pool, extrema));
            }
        }
    }
}
