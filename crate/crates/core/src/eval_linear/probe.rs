use super::metrics::{compute_metrics, MetricsRecord};
use crate::dataset::balanced_indices;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use ndarray::{Array1, Array2, Axis};
use pathbt_nn::loss::{one_hot, soft_cross_entropy, softmax_rows};
use pathbt_nn::optim::cosine;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub repeats: usize,
    /// Z-score features with training-split statistics before the head.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.3,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 256,
            train_per_class: 3500,
            test_per_class: 300,
            repeats: 2,
            standardize: true,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("probe lr must be > 0, got {}", self.lr)));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidConfig("per-class counts must be >= 1".into()));
        }
        if self.batch_size == 0 || self.repeats == 0 {
            return Err(Error::InvalidConfig("batch_size and repeats must be >= 1".into()));
        }
        Ok(())
    }
}

/// Single linear layer over (optionally standardized) encoder features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub feature_mean: Array1<f64>,
    pub feature_std: Array1<f64>,
}

impl LinearHead {
    fn prepare(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.feature_mean) / &self.feature_std
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        self.prepare(x).dot(&self.weight.t()) + &self.bias
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Array2<f64> {
        softmax_rows(&self.logits(x))
    }

    pub fn n_classes(&self) -> usize {
        self.weight.nrows()
    }
}

fn feature_stats(x: &Array2<f64>, standardize: bool) -> (Array1<f64>, Array1<f64>) {
    let d = x.ncols();
    if !standardize || x.nrows() == 0 {
        return (Array1::zeros(d), Array1::ones(d));
    }
    let mean = x.mean_axis(Axis(0)).unwrap();
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-8 { s } else { 1.0 });
    (mean, std)
}

/// Minibatch SGD with momentum and a cosine schedule on soft targets.
pub fn fit_head(x: &Array2<f64>, targets: &Array2<f64>, cfg: &ProbeConfig, seed: u64) -> LinearHead {
    let (n, d) = x.dim();
    let k = targets.ncols();
    let (feature_mean, feature_std) = feature_stats(x, cfg.standardize);
    let xs = (x - &feature_mean) / &feature_std;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d.max(1) as f64).sqrt();
    let mut w = Array2::from_shape_fn((k, d), |_| rng.random_range(-bound..bound));
    let mut b = Array1::<f64>::zeros(k);
    let mut vw = Array2::<f64>::zeros((k, d));
    let mut vb = Array1::<f64>::zeros(k);
    let bs = cfg.batch_size.min(n.max(1));
    let steps_per_epoch = n.div_ceil(bs);
    let total = cfg.epochs * steps_per_epoch;
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            let xb = xs.select(Axis(0), chunk);
            let tb = targets.select(Axis(0), chunk);
            let logits = xb.dot(&w.t()) + &b;
            let (_, g) = soft_cross_entropy(&logits, &tb);
            let mut gw = g.t().dot(&xb);
            if cfg.weight_decay > 0.0 {
                gw.scaled_add(cfg.weight_decay, &w);
            }
            let gb = g.sum_axis(Axis(0));
            let lr = cosine(step, total, cfg.lr);
            vw = &vw * cfg.momentum + &gw;
            vb = &vb * cfg.momentum + &gb;
            w.scaled_add(-lr, &vw);
            b.scaled_add(-lr, &vb);
            step += 1;
        }
    }
    LinearHead { weight: w, bias: b, feature_mean, feature_std }
}

pub struct ProbeOutcome {
    pub head: LinearHead,
    pub metrics: MetricsRecord,
    pub test_scores: Array2<f64>,
    pub test_labels: Vec<usize>,
}

/// Mean and spread of probe metrics over repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub top1_mean: f64,
    pub top1_std: f64,
    pub auc: f64,
    pub auc_std: f64,
    pub f1: Option<f64>,
    pub per_class: BTreeMap<String, super::metrics::ClassStats>,
    pub runs: Vec<MetricsRecord>,
}

fn check_classes(labels: &[usize], n_classes: usize) -> Result<()> {
    let mut seen = vec![false; n_classes];
    for &l in labels {
        if l >= n_classes {
            return Err(Error::DimensionMismatch(format!("label {l} >= {n_classes} classes")));
        }
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::SingleClass("probe labels".into()));
    }
    Ok(())
}

/// Trains a linear head on a balanced split of frozen embeddings and scores
/// it on the held-out part.
pub fn train_probe(embeddings: &Array2<f64>, labels: &[usize], class_names: &[String], cfg: &ProbeConfig) -> Result<ProbeOutcome> {
    cfg.validate()?;
    let (train, test) = split_for_probe(labels, class_names, cfg)?;
    probe_on_split(embeddings, labels, class_names, &train, &test, cfg, cfg.seed)
}

pub fn split_for_probe(labels: &[usize], class_names: &[String], cfg: &ProbeConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    check_classes(labels, class_names.len())?;
    balanced_indices(labels, class_names, cfg.train_per_class, cfg.test_per_class, cfg.seed)
}

pub fn probe_on_split(
    embeddings: &Array2<f64>,
    labels: &[usize],
    class_names: &[String],
    train: &[usize],
    test: &[usize],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeOutcome> {
    if embeddings.nrows() != labels.len() {
        return Err(Error::DimensionMismatch(format!("{} embeddings vs {} labels", embeddings.nrows(), labels.len())));
    }
    let k = class_names.len();
    check_classes(labels, k)?;
    let xtr = embeddings.select(Axis(0), train);
    let ytr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
    let head = fit_head(&xtr, &one_hot(&ytr, k), cfg, seed);
    score_head(head, embeddings, labels, class_names, test)
}

pub(crate) fn score_head(
    head: LinearHead,
    embeddings: &Array2<f64>,
    labels: &[usize],
    class_names: &[String],
    test: &[usize],
) -> Result<ProbeOutcome> {
    let xte = embeddings.select(Axis(0), test);
    let test_labels: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let test_scores = head.predict_proba(&xte);
    let metrics = compute_metrics(&test_scores, &test_labels, class_names)?;
    Ok(ProbeOutcome { head, metrics, test_scores, test_labels })
}

pub fn summarize(runs: Vec<MetricsRecord>) -> ProbeSummary {
    let n = runs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&MetricsRecord) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let std = |f: &dyn Fn(&MetricsRecord) -> f64, m: f64| (runs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n).sqrt();
    let top1_mean = mean(&|r| r.top1_acc);
    let auc = mean(&|r| r.auc);
    let f1 = runs.iter().all(|r| r.f1_macro.is_some()).then(|| mean(&|r| r.f1_macro.unwrap()));
    let mut per_class = BTreeMap::new();
    if let Some(first) = runs.first() {
        for name in first.per_class.keys() {
            let p = runs.iter().map(|r| r.per_class[name].precision).sum::<f64>() / n;
            let rc = runs.iter().map(|r| r.per_class[name].recall).sum::<f64>() / n;
            per_class.insert(name.clone(), super::metrics::ClassStats { precision: p, recall: rc });
        }
    }
    ProbeSummary {
        top1_mean,
        top1_std: std(&|r| r.top1_acc, top1_mean),
        auc,
        auc_std: std(&|r| r.auc, auc),
        f1,
        per_class,
        runs,
    }
}

/// Runs the probe `cfg.repeats` times on one split, varying only the head
/// seed. Returns the summary and the first repeat's outcome.
pub fn train_probe_repeated(
    embeddings: &Array2<f64>,
    labels: &[usize],
    class_names: &[String],
    cfg: &ProbeConfig,
) -> Result<(ProbeSummary, ProbeOutcome)> {
    cfg.validate()?;
    let (train, test) = split_for_probe(labels, class_names, cfg)?;
    let mut first = None;
    let mut runs = Vec::new();
    for r in 0..cfg.repeats {
        let out = probe_on_split(embeddings, labels, class_names, &train, &test, cfg, derive_seed(cfg.seed, &[r as u64]))?;
        runs.push(out.metrics.clone());
        first.get_or_insert(out);
    }
    Ok((summarize(runs), first.expect("repeats >= 1")))
}
