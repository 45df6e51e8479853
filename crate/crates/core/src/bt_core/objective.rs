//! Batch standardisation, cross-correlation and the redundancy-reduction loss,
//! with the analytic gradient back to the raw embeddings.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Column-standardised embeddings plus the statistics that were removed.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub values: Array2<f64>,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub eps: f64,
}

impl EmbeddingBatch {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    fn degenerate(&self, col: usize) -> bool {
        self.std[col] < self.eps
    }

    /// Pulls a gradient with respect to the standardised values back to the
    /// raw values (population statistics; degenerate columns get zero).
    pub fn backward(&self, grad: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(grad.raw_dim());
        for (j, (g, mut o)) in grad.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))).enumerate() {
            if self.degenerate(j) {
                continue;
            }
            let a = self.values.column(j);
            let mean_g = g.mean().unwrap();
            let mean_ga = (&g * &a).mean().unwrap();
            let inv = 1.0 / self.std[j];
            o.assign(&((&g - mean_g - &(&a * mean_ga)) * inv));
        }
        out
    }
}

/// `(x - mean) / max(std, eps)` column-wise with population statistics;
/// columns whose std falls below `eps` become zeros.
pub fn standardize(raw: &Array2<f64>, eps: f64) -> Result<EmbeddingBatch> {
    let n = raw.nrows();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = raw.mean_axis(Axis(0)).unwrap();
    let std = raw.std_axis(Axis(0), 0.0);
    let mut values = raw - &mean;
    for (j, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
        if std[j] < eps {
            col.fill(0.0);
        } else {
            col /= std[j].max(eps);
        }
    }
    Ok(EmbeddingBatch { values, mean, std, eps })
}

/// `D × D` cross-correlation between two standardised batches.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation(pub Array2<f64>);

impl CrossCorrelation {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }
}

/// `C = aᵀ b / N`.
pub fn cross_correlation(a: &EmbeddingBatch, b: &EmbeddingBatch) -> Result<CrossCorrelation> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::DimensionMismatch(format!(
            "embedding batches {:?} and {:?}",
            a.values.dim(),
            b.values.dim()
        )));
    }
    let n = a.n() as f64;
    Ok(CrossCorrelation(a.values.t().dot(&b.values) / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub invariance: f64,
    pub redundancy: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.invariance.is_finite() && self.redundancy.is_finite()
    }
}

/// `Σ_i (1 - C_ii)² + λ Σ_{i≠j} C_ij²`.
pub fn bt_loss(c: &CrossCorrelation, lambda: f64) -> Result<LossTerms> {
    let (rows, cols) = c.0.dim();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    let mut invariance = 0.0;
    let mut redundancy = 0.0;
    for ((i, j), &v) in c.0.indexed_iter() {
        if i == j {
            invariance += (1.0 - v) * (1.0 - v);
        } else {
            redundancy += v * v;
        }
    }
    Ok(LossTerms { total: invariance + lambda * redundancy, invariance, redundancy })
}

/// `∂L/∂C`.
pub fn bt_loss_grad(c: &CrossCorrelation, lambda: f64) -> Array2<f64> {
    let mut g = c.0.mapv(|v| 2.0 * lambda * v);
    for i in 0..c.dim() {
        g[[i, i]] = -2.0 * (1.0 - c.0[[i, i]]);
    }
    g
}

/// Loss, correlation matrix and gradients with respect to both raw
/// (pre-standardisation) embedding batches.
pub struct BtForward {
    pub terms: LossTerms,
    pub correlation: CrossCorrelation,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

pub fn bt_forward_backward(za: &Array2<f64>, zb: &Array2<f64>, lambda: f64, eps: f64) -> Result<BtForward> {
    let a = standardize(za, eps)?;
    let b = standardize(zb, eps)?;
    let c = cross_correlation(&a, &b)?;
    let terms = bt_loss(&c, lambda)?;
    let g = bt_loss_grad(&c, lambda);
    let n = a.n() as f64;
    let ga = b.values.dot(&g.t()) / n;
    let gb = a.values.dot(&g) / n;
    Ok(BtForward { terms, correlation: c, grad_a: a.backward(&ga), grad_b: b.backward(&gb) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_has_zero_loss() {
        let c = CrossCorrelation(Array2::eye(5));
        assert_eq!(bt_loss(&c, 0.0051).unwrap().total, 0.0);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        let c = CrossCorrelation(array![[0.5, 0.2], [0.2, 0.5]]);
        let l = bt_loss(&c, 0.0051).unwrap();
        assert!((l.invariance - 0.5).abs() < 1e-15);
        assert!((l.redundancy - 0.08).abs() < 1e-15);
        assert!((l.total - 0.500408).abs() < 1e-9);
    }

    #[test]
    fn zero_matrix_loss_is_dimension() {
        let l = bt_loss(&CrossCorrelation(Array2::zeros((7, 7))), 0.3).unwrap();
        assert_eq!((l.total, l.invariance, l.redundancy), (7.0, 7.0, 0.0));
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(bt_loss(&CrossCorrelation(Array2::zeros((2, 3))), 0.1), Err(Error::NonSquare { .. })));
    }

    #[test]
    fn standardize_edge_cases() {
        let raw = array![[3.0, -1.0], [3.0, 1.0]];
        let s = standardize(&raw, DEFAULT_EPS).unwrap();
        assert_eq!(s.values.column(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(s.values.column(1).to_vec(), vec![-1.0, 1.0]);
        assert!(standardize(&array![[1.0, 2.0]], DEFAULT_EPS).is_err());
    }

    #[test]
    fn standardize_is_idempotent() {
        let raw = array![[0.3, 5.0, -2.0], [1.7, 1.0, 0.5], [2.2, -3.0, 0.1], [0.1, 0.0, 4.0]];
        let once = standardize(&raw, DEFAULT_EPS).unwrap();
        let twice = standardize(&once.values, DEFAULT_EPS).unwrap();
        for (a, b) in once.values.iter().zip(twice.values.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        for m in once.values.mean_axis(Axis(0)).unwrap() {
            assert!(m.abs() <= 1e-6);
        }
        for s in once.values.std_axis(Axis(0), 0.0) {
            assert!((s - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn mismatched_batches_rejected() {
        let a = standardize(&array![[1.0, 2.0], [2.0, 1.0]], DEFAULT_EPS).unwrap();
        let b = standardize(&array![[1.0], [2.0]], DEFAULT_EPS).unwrap();
        assert!(cross_correlation(&a, &b).is_err());
    }

    #[test]
    fn negated_batch_has_minus_one_diagonal() {
        let raw = array![[0.3, 5.0], [1.7, 1.0], [2.2, -3.0]];
        let a = standardize(&raw, DEFAULT_EPS).unwrap();
        let b = standardize(&(-&raw), DEFAULT_EPS).unwrap();
        let c = cross_correlation(&a, &b).unwrap();
        for i in 0..2 {
            assert!((c.0[[i, i]] + 1.0).abs() < 1e-12);
        }
    }

    fn random_matrix(rng: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        use rand::Rng;
        Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (lambda, h) = (0.0051, 1e-4);
        let loss = |a: &Array2<f64>, b: &Array2<f64>| bt_forward_backward(a, b, lambda, DEFAULT_EPS).unwrap().terms.total;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let za = random_matrix(&mut rng, 8, 4);
            let zb = random_matrix(&mut rng, 8, 4);
            let fwd = bt_forward_backward(&za, &zb, lambda, DEFAULT_EPS).unwrap();
            for (which, analytic) in [(0, &fwd.grad_a), (1, &fwd.grad_b)] {
                for idx in [(0usize, 0usize), (3, 1), (5, 2), (7, 3), (2, 0), (6, 3)] {
                    let bump = |delta: f64| {
                        let (mut a, mut b) = (za.clone(), zb.clone());
                        if which == 0 { a[idx] += delta } else { b[idx] += delta }
                        loss(&a, &b)
                    };
                    let numeric = (bump(h) - bump(-h)) / (2.0 * h);
                    let g = analytic[idx];
                    worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-3));
                }
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn cross_correlation_matches_double_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(2..=16);
            let d = rng.random_range(1..=8);
            let za = random_matrix(&mut rng, n, d);
            let zb = random_matrix(&mut rng, n, d);
            let c = cross_correlation(&standardize(&za, DEFAULT_EPS).unwrap(), &standardize(&zb, DEFAULT_EPS).unwrap()).unwrap();
            let col_stats = |z: &Array2<f64>, j: usize| {
                let m = (0..n).map(|b| z[[b, j]]).sum::<f64>() / n as f64;
                let v = (0..n).map(|b| (z[[b, j]] - m).powi(2)).sum::<f64>() / n as f64;
                (m, v.sqrt())
            };
            for i in 0..d {
                let (ma, sa) = col_stats(&za, i);
                for j in 0..d {
                    let (mb, sb) = col_stats(&zb, j);
                    let mut acc = 0.0;
                    for b in 0..n {
                        acc += (za[[b, i]] - ma) / sa * ((zb[[b, j]] - mb) / sb);
                    }
                    assert!((c.0[[i, j]] - acc / n as f64).abs() <= 1e-10);
                }
            }
            let a = standardize(&za, DEFAULT_EPS).unwrap();
            let self_c = cross_correlation(&a, &a).unwrap();
            for i in 0..d {
                assert!((self_c.0[[i, i]] - 1.0).abs() <= 1e-5);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn batch() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
            (2usize..10, 1usize..6).prop_flat_map(|(n, d)| {
                let cells = prop::collection::vec(-5.0f64..5.0, n * d);
                (cells.clone(), cells).prop_map(move |(a, b)| {
                    (Array2::from_shape_vec((n, d), a).unwrap(), Array2::from_shape_vec((n, d), b).unwrap())
                })
            })
        }

        proptest! {
            #[test]
            fn loss_is_non_negative_and_correlations_bounded((za, zb) in batch(), lambda in 0.0001f64..1.0) {
                let f = bt_forward_backward(&za, &zb, lambda, DEFAULT_EPS).unwrap();
                prop_assert!(f.terms.total >= 0.0);
                prop_assert!(f.correlation.0.iter().all(|v| v.abs() <= 1.0 + 1e-9));
                prop_assert!((f.terms.total - f.terms.invariance - lambda * f.terms.redundancy).abs() <= 1e-9 * (1.0 + f.terms.total));
            }

            #[test]
            fn self_correlation_is_symmetric((za, _) in batch()) {
                let a = standardize(&za, DEFAULT_EPS).unwrap();
                let c = cross_correlation(&a, &a).unwrap();
                for i in 0..c.dim() {
                    for j in 0..c.dim() {
                        prop_assert!((c.0[[i, j]] - c.0[[j, i]]).abs() <= 1e-12);
                    }
                }
            }

            #[test]
            fn loss_ignores_batch_order((za, zb) in batch(), shift in 0usize..10) {
                let n = za.nrows();
                let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
                let pa = za.select(Axis(0), &perm);
                let pb = zb.select(Axis(0), &perm);
                let l1 = bt_forward_backward(&za, &zb, 0.0051, DEFAULT_EPS).unwrap().terms.total;
                let l2 = bt_forward_backward(&pa, &pb, 0.0051, DEFAULT_EPS).unwrap().terms.total;
                prop_assert!((l1 - l2).abs() <= 1e-9 * (1.0 + l1));
            }

            #[test]
            fn identity_correlation_has_zero_loss(d in 1usize..40, lambda in 0.0f64..1.0) {
                prop_assert_eq!(bt_loss(&CrossCorrelation(Array2::eye(d)), lambda).unwrap().total, 0.0);
            }
        }
    }
}
