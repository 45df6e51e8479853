use ndarray::{Array1, Array2, Axis};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

pub fn softmax(v: &Array1<f64>) -> Array1<f64> {
    let mx = v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = v.mapv(|x| (x - mx).exp());
    let z = e.sum();
    e / z
}

/// Mean cross-entropy against soft targets (rows summing to one) and its
/// gradient with respect to the logits.
pub fn soft_cross_entropy(logits: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(logits.dim(), targets.dim());
    let n = logits.nrows().max(1) as f64;
    let p = softmax_rows(logits);
    let loss = -(targets * &p.mapv(|v| v.max(1e-300).ln())).sum() / n;
    let grad = (&p - targets) / n;
    (loss, grad)
}

/// Mean cross-entropy against integer class labels.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let targets = one_hot(labels, logits.ncols());
    soft_cross_entropy(logits, &targets)
}

pub fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut t = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l]] = 1.0;
    }
    t
}

pub fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .axis_iter(Axis(0))
        .map(|r| {
            r.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
                .0
        })
        .collect()
}
