use super::bags::AttentionBag;
use super::model::{MILConfig, MilModel};
use crate::error::{Error, Result};
use crate::eval_linear::{compute_metrics, MetricsRecord};
use ndarray::{Array1, Array2};
use pathbt_nn::optim::{collect_params, Adam};
use pathbt_nn::Layer;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out loss and AUC, logged for monitoring only.
    pub val_loss: f64,
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidePrediction {
    pub slide_id: String,
    pub label: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

pub struct MilOutcome {
    pub model: MilModel,
    pub history: Vec<MilEpoch>,
    pub metrics: MetricsRecord,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub predictions: Vec<SlidePrediction>,
}

/// Stratified slide-level split with at least one train and one test bag per
/// class.
pub fn slide_split(labels: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            return Err(Error::DegenerateSplit(format!("class {c} has {} bag(s); need at least 2", idx.len())));
        }
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Class probabilities and attention for one bag.
pub fn predict_slide(model: &mut MilModel, bag: &AttentionBag) -> (Array1<f64>, Array1<f64>) {
    model.predict(&bag.instances)
}

fn evaluate(model: &mut MilModel, bags: &[AttentionBag], idx: &[usize]) -> (f64, Array2<f64>, Vec<usize>) {
    let mut scores = Array2::zeros((idx.len(), model.n_classes));
    let mut loss = 0.0;
    let mut labels = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        let (s, _) = predict_slide(model, &bags[i]);
        loss -= s[bags[i].label].max(1e-300).ln();
        scores.row_mut(row).assign(&s);
        labels.push(bags[i].label);
    }
    (loss / idx.len().max(1) as f64, scores, labels)
}

pub fn train_mil(bags: &[AttentionBag], class_names: &[String], cfg: &MILConfig) -> Result<MilOutcome> {
    cfg.validate()?;
    let k = class_names.len();
    if k < 2 {
        return Err(Error::SingleClass(format!("{k} class(es)")));
    }
    let in_dim = bags.first().map(|b| b.instances.ncols()).ok_or(Error::DegenerateSplit("no bags".into()))?;
    if let Some(b) = bags.iter().find(|b| b.is_empty() || b.instances.ncols() != in_dim) {
        return Err(Error::DimensionMismatch(format!("bag {} has shape {:?}", b.slide_id, b.instances.dim())));
    }
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let (mut train, test) = slide_split(&labels, k, cfg.test_fraction, cfg.seed)?;
    let mut model = MilModel::new(in_dim, k, cfg);
    let mut opt = Adam::new(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d696c);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &train {
            model.zero_grad();
            total += model.train_step(&bags[i].instances, bags[i].label, cfg.instance_loss_weight, cfg.instance_k);
            opt.step(&mut collect_params(&mut model), cfg.lr)?;
        }
        let (val_loss, scores, y) = evaluate(&mut model, bags, &test);
        let val_auc = compute_metrics(&scores, &y, class_names)?.auc;
        let rec = MilEpoch { epoch: epoch + 1, train_loss: total / train.len() as f64, val_loss, val_auc };
        log::info!("mil epoch {} train {:.4} val {:.4} auc {:.4}", rec.epoch, rec.train_loss, rec.val_loss, rec.val_auc);
        history.push(rec);
    }
    train.sort_unstable();
    let (_, scores, y) = evaluate(&mut model, bags, &test);
    let metrics = compute_metrics(&scores, &y, class_names)?;
    let predictions = test
        .iter()
        .zip(scores.rows())
        .map(|(&i, s)| SlidePrediction {
            slide_id: bags[i].slide_id.clone(),
            label: bags[i].label,
            predicted: pathbt_nn::loss::argmax_rows(&s.to_owned().insert_axis(ndarray::Axis(0)))[0],
            scores: s.to_vec(),
        })
        .collect();
    Ok(MilOutcome { model, history, metrics, train, test, predictions })
}
