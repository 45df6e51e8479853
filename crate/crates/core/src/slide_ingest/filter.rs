use super::manifest::TileRecord;
use crate::augment::{eval_transform, IMAGENET_MEAN, IMAGENET_STD};
use crate::bt_core::pretrain::stack_images;
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use image::RgbImage;
use ndarray::{Array2, Array3};
use pathbt_nn::loss::{cross_entropy, softmax_rows};
use pathbt_nn::optim::{collect_params, Adam};
use pathbt_nn::{Conv2d, Flatten, Layer, Linear, MaxPool2d, Mode, Relu, Sequential, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const WIDTHS: [usize; 3] = [16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub input_size: u32,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { input_size: 96, epochs: 4, lr: 1e-3, batch_size: 32, test_fraction: 0.2, seed: 0 }
    }
}

fn prepare(images: &[&RgbImage], size: u32) -> Tensor {
    let views: Vec<Array3<f64>> = images.par_iter().map(|img| eval_transform(img, size, IMAGENET_MEAN, IMAGENET_STD)).collect();
    stack_images(&views)
}

/// Tissue-versus-artifact CNN: three conv/ReLU/max-pool stages and one
/// fully connected layer onto two classes.
pub struct ArtifactFilterModel {
    net: Sequential,
    pub input_size: u32,
    /// Output index of the tissue class.
    pub tissue_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub parameter_count: usize,
    pub train_loss: Vec<f64>,
    pub test_accuracy: f64,
    pub n_test: usize,
}

impl ArtifactFilterModel {
    pub fn new(input_size: u32, tissue_class: usize, seed: u64) -> Result<Self> {
        if input_size % 8 != 0 || input_size == 0 {
            return Err(Error::InvalidConfig(format!("filter input size must be a positive multiple of 8, got {input_size}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Sequential::new();
        let mut in_ch = 3;
        for (i, &w) in WIDTHS.iter().enumerate() {
            net.push(Conv2d::new(&format!("conv{i}"), in_ch, w, 3, 1, 1, true, &mut rng));
            net.push(Relu::new());
            net.push(MaxPool2d::new(2, 2, 0));
            in_ch = w;
        }
        let side = (input_size / 8) as usize;
        net.push(Flatten::new());
        net.push(Linear::new("fc", in_ch * side * side, 2, true, &mut rng));
        Ok(Self { net, input_size, tissue_class })
    }

    pub fn parameter_count(&self) -> usize {
        self.net.param_count()
    }

    fn prepare(&self, images: &[&RgbImage]) -> Tensor {
        prepare(images, self.input_size)
    }

    /// Probability of the tissue class for each image.
    pub fn tissue_scores(&mut self, images: &[&RgbImage]) -> Vec<f64> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let logits: Array2<f64> = self.net.forward(&self.prepare(chunk), Mode::Eval).into_dimensionality().unwrap();
            out.extend(softmax_rows(&logits).column(self.tissue_class).iter().copied());
        }
        out
    }
}

impl Layer for ArtifactFilterModel {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.net.forward(x, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        self.net.backward(grad)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut pathbt_nn::Param)) {
        self.net.visit_params(f)
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&pathbt_nn::Param)) {
        self.net.visit_params_ref(f)
    }
    fn clear_cache(&mut self) {
        self.net.clear_cache()
    }
}

/// Trains on a two-class set whose class names include `tissue`; the other
/// class is treated as artifact. A stratified share is held out for the
/// accuracy report.
pub fn train_artifact_filter(data: &TileSet, cfg: &FilterConfig) -> Result<(ArtifactFilterModel, FilterReport)> {
    let counts = data.class_counts();
    if data.n_classes() != 2 || counts.iter().any(|&c| c == 0) {
        return Err(Error::SingleClass(format!("artifact filter needs tissue and artifact tiles, got counts {counts:?}")));
    }
    let tissue_class = data.class_names.iter().position(|n| n == "tissue").unwrap_or(0);
    let mut model = ArtifactFilterModel::new(cfg.input_size, tissue_class, cfg.seed)?;
    log::info!("artifact filter parameter count: {}", model.parameter_count());
    let (mut train, test) = data.stratified_split(cfg.test_fraction, cfg.seed);
    let mut opt = Adam::new(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut train_loss = Vec::new();
    for _ in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let (mut sum, mut n) = (0.0, 0);
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            let imgs: Vec<&RgbImage> = chunk.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let x = model.prepare(&imgs);
            let logits: Array2<f64> = model.forward(&x, Mode::Train).into_dimensionality().unwrap();
            let (loss, grad) = cross_entropy(&logits, &labels);
            model.zero_grad();
            model.backward(&grad.into_dyn());
            opt.step(&mut collect_params(&mut model), cfg.lr)?;
            sum += loss;
            n += 1;
        }
        train_loss.push(sum / n.max(1) as f64);
    }
    let imgs: Vec<&RgbImage> = test.iter().map(|&i| &data.images[i]).collect();
    let scores = model.tissue_scores(&imgs);
    let correct = test
        .iter()
        .zip(&scores)
        .filter(|(&i, &s)| (s >= 0.5) == (data.labels[i] == tissue_class))
        .count();
    let report = FilterReport {
        parameter_count: model.parameter_count(),
        train_loss,
        test_accuracy: correct as f64 / test.len().max(1) as f64,
        n_test: test.len(),
    };
    Ok((model, report))
}

/// A tile record with its pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub record: TileRecord,
    pub image: RgbImage,
}

pub const TISSUE_CUTOFF: f64 = 0.5;

/// Scores every tile and keeps those with tissue score ≥ 0.5. Returns the
/// kept tiles (scores recorded) and the score of every input in order.
pub fn filter_tiles(model: &mut ArtifactFilterModel, tiles: Vec<Tile>) -> (Vec<Tile>, Vec<f64>) {
    let imgs: Vec<&RgbImage> = tiles.iter().map(|t| &t.image).collect();
    let scores = model.tissue_scores(&imgs);
    let kept = tiles
        .into_iter()
        .zip(&scores)
        .filter(|(_, &s)| s >= TISSUE_CUTOFF)
        .map(|(mut t, &s)| {
            t.record.tissue_score = s;
            t
        })
        .collect();
    (kept, scores)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_shape() {
        let mut m = ArtifactFilterModel::new(96, 0, 1).unwrap();
        assert_eq!(m.parameter_count(), 448 + 4640 + 18496 + (64 * 12 * 12 + 1) * 2);
        let img = RgbImage::new(40, 40);
        let s = m.tissue_scores(&[&img, &img]);
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(ArtifactFilterModel::new(90, 0, 1).is_err());
        let (kept, scores) = filter_tiles(&mut m, Vec::new());
        assert!(kept.is_empty() && scores.is_empty());
    }

    #[test]
    fn single_class_rejected() {
        let mut d = TileSet::new(vec!["tissue".into(), "artifact".into()]);
        d.push("a", RgbImage::new(8, 8), 0);
        assert!(matches!(train_artifact_filter(&d, &FilterConfig::default()), Err(Error::SingleClass(_))));
    }
}
