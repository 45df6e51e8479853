//! Fully supervised baseline: encoder plus linear classifier trained end to end.

use crate::augment::{eval_transform, kernels, IMAGENET_MEAN, IMAGENET_STD};
use crate::bt_core::pretrain::stack_images;
use crate::bt_core::{encoder_registry, Encoder, EncoderSpec};
use crate::dataset::{stratified_split, TileSet};
use crate::error::{Error, Result};
use crate::eval_linear::{compute_metrics, MetricsRecord};
use crate::seeds::derive_seed;
use image::RgbImage;
use ndarray::{Array2, Array3};
use pathbt_nn::checkpoint::{read_params, write_params};
use pathbt_nn::loss::{cross_entropy, softmax_rows};
use pathbt_nn::optim::{collect_params, Adam};
use pathbt_nn::{Layer, Linear, Mode, Param, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub input_size: u32,
    pub seed: u64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-4, weight_decay: 1e-5, batch_size: 32, val_fraction: 0.2, input_size: 224, seed: 0 }
    }
}

/// Encoder followed by a linear classifier.
pub struct SupervisedModel {
    pub encoder: Encoder,
    pub head: Linear,
}

impl Layer for SupervisedModel {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let h = self.encoder.forward(x, mode);
        self.head.forward(&h, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.head.backward(grad);
        self.encoder.backward(&g)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encoder.visit_params(f);
        self.head.visit_params(f);
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.encoder.visit_params_ref(f);
        self.head.visit_params_ref(f);
    }
    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.head.clear_cache();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisedEpoch {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_acc: f64,
}

pub struct SupervisedOutcome {
    /// Weights from `best_epoch`.
    pub model: SupervisedModel,
    pub history: Vec<SupervisedEpoch>,
    pub best_epoch: usize,
    pub metrics: MetricsRecord,
}

/// Flips (p 0.5 each), colour inversion (p 0.5) and a rotation in [0°, 90°] (p 0.5).
pub fn supervised_augment<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R) -> RgbImage {
    let mut out = img.clone();
    if rng.random_bool(0.5) {
        out = kernels::hflip(&out);
    }
    if rng.random_bool(0.5) {
        out = kernels::vflip(&out);
    }
    if rng.random_bool(0.5) {
        out = kernels::solarize(&out, 0);
    }
    if rng.random_bool(0.5) {
        let angle = rng.random_range(0.0..=90.0);
        out = kernels::affine_with(&out, angle, 0.0, 0.0);
    }
    out
}

fn eval_batch(data: &TileSet, idx: &[usize], size: u32) -> Tensor {
    let views: Vec<Array3<f64>> = idx.par_iter().map(|&i| eval_transform(&data.images[i], size, IMAGENET_MEAN, IMAGENET_STD)).collect();
    stack_images(&views)
}

/// Class scores for `idx`, evaluated in batches.
pub fn predict_scores(model: &mut SupervisedModel, data: &TileSet, idx: &[usize], size: u32, batch: usize) -> Array2<f64> {
    let k = model.head.out_dim();
    let mut out = Array2::zeros((idx.len(), k));
    for (b, chunk) in idx.chunks(batch.max(1)).enumerate() {
        let logits: Array2<f64> = model.forward(&eval_batch(data, chunk, size), Mode::Eval).into_dimensionality().unwrap();
        let start = b * batch.max(1);
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&softmax_rows(&logits));
    }
    out
}

fn accuracy(scores: &Array2<f64>, labels: &[usize]) -> f64 {
    let pred = pathbt_nn::loss::argmax_rows(scores);
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    100.0 * hits as f64 / labels.len().max(1) as f64
}

/// Trains encoder and classifier with Adam (constant learning rate) and keeps
/// the weights of the epoch with the highest validation accuracy.
pub fn supervised_train(data: &TileSet, spec: &EncoderSpec, cfg: &SupervisedConfig) -> Result<SupervisedOutcome> {
    if data.class_names.is_empty() || data.labels.len() != data.len() {
        return Err(Error::Unlabeled(format!("{} images, {} labels, {} classes", data.len(), data.labels.len(), data.class_names.len())));
    }
    if let Some(&bad) = data.labels.iter().find(|&&l| l >= data.n_classes()) {
        return Err(Error::Unlabeled(format!("label {bad} outside {} classes", data.n_classes())));
    }
    if data.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::SingleClass(data.class_names.join(",")));
    }
    let (mut train, val) = stratified_split(&data.labels, data.n_classes(), cfg.val_fraction, cfg.seed);
    if train.is_empty() || val.is_empty() {
        return Err(Error::TooFewSamples { needed: 2, got: data.len() });
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[11]));
    let encoder = encoder_registry(spec, cfg.input_size as usize, derive_seed(cfg.seed, &[3]))?;
    let head = Linear::new("classifier", encoder.feature_dim(), data.n_classes(), true, &mut init_rng);
    let mut model = SupervisedModel { encoder, head };
    let val_labels: Vec<usize> = val.iter().map(|&i| data.labels[i]).collect();
    let bs = cfg.batch_size.max(1);

    let mut history = vec![SupervisedEpoch {
        epoch: 0,
        train_loss: None,
        val_acc: accuracy(&predict_scores(&mut model, data, &val, cfg.input_size, bs), &val_labels),
    }];
    let mut best = (0, history[0].val_acc, snapshot(&model)?);
    let mut opt = Adam::new(cfg.weight_decay);
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));

    for epoch in 1..=cfg.epochs {
        train.shuffle(&mut shuffle);
        let (mut sum, mut n) = (0.0, 0);
        for chunk in train.chunks(bs) {
            let views: Vec<Array3<f64>> = chunk
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, i as u64]));
                    let img = supervised_augment(&data.images[i], &mut rng);
                    eval_transform(&img, cfg.input_size, IMAGENET_MEAN, IMAGENET_STD)
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let logits: Array2<f64> = model.forward(&stack_images(&views), Mode::Train).into_dimensionality().unwrap();
            let (loss, grad) = cross_entropy(&logits, &labels);
            model.zero_grad();
            model.backward(&grad.into_dyn());
            opt.step(&mut collect_params(&mut model), cfg.lr)?;
            sum += loss;
            n += 1;
        }
        let val_acc = accuracy(&predict_scores(&mut model, data, &val, cfg.input_size, bs), &val_labels);
        log::info!("supervised epoch {epoch} loss {:.4} val acc {val_acc:.2}", sum / n as f64);
        history.push(SupervisedEpoch { epoch, train_loss: Some(sum / n as f64), val_acc });
        if val_acc > best.1 {
            best = (epoch, val_acc, snapshot(&model)?);
        }
    }
    read_params(&mut model, best.2.as_slice())?;
    let scores = predict_scores(&mut model, data, &val, cfg.input_size, bs);
    let metrics = compute_metrics(&scores, &val_labels, &data.class_names)?;
    Ok(SupervisedOutcome { model, history, best_epoch: best.0, metrics })
}

fn snapshot(model: &SupervisedModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_params(model, &mut buf)?;
    Ok(buf)
}
