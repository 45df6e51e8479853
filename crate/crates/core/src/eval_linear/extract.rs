use crate::augment::eval_transform;
use crate::bt_core::pretrain::stack_images;
use crate::bt_core::Encoder;
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use pathbt_nn::{Layer, Mode};
use rayon::prelude::*;

/// Preprocessing used at evaluation time: resize and normalize only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalPreprocess {
    pub size: u32,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub batch_size: usize,
}

impl EvalPreprocess {
    pub fn new(size: u32, norm: ([f64; 3], [f64; 3])) -> Self {
        Self { size, mean: norm.0, std: norm.1, batch_size: 128 }
    }
}

pub fn preprocess(data: &TileSet, idx: &[usize], pre: &EvalPreprocess) -> Vec<Array3<f64>> {
    idx.par_iter().map(|&i| eval_transform(&data.images[i], pre.size, pre.mean, pre.std)).collect()
}

/// Encodes already-normalized CHW tensors in inference mode.
pub fn embed_tensors(encoder: &mut Encoder, views: &[Array3<f64>], batch_size: usize) -> Result<Array2<f64>> {
    let f = encoder.feature_dim();
    let mut out = Array2::zeros((views.len(), f));
    for (b, chunk) in views.chunks(batch_size.max(1)).enumerate() {
        let y = encoder.forward(&stack_images(chunk), Mode::Eval);
        if y.ndim() != 2 || y.shape()[1] != f {
            return Err(Error::DimensionMismatch(format!("encoder produced {:?}, declared feature_dim {f}", y.shape())));
        }
        let y: Array2<f64> = y.into_dimensionality().expect("checked rank");
        let start = b * batch_size.max(1);
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..]).assign(&y);
    }
    Ok(out)
}

/// Frozen-encoder features for every tile, in dataset order, with labels.
pub fn extract_embeddings(encoder: &mut Encoder, data: &TileSet, pre: &EvalPreprocess) -> Result<(Array2<f64>, Vec<usize>)> {
    let all: Vec<usize> = (0..data.len()).collect();
    let mut emb = Array2::zeros((0, encoder.feature_dim()));
    for chunk in all.chunks(pre.batch_size.max(1) * 8) {
        let views = preprocess(data, chunk, pre);
        let part = embed_tensors(encoder, &views, pre.batch_size)?;
        emb.append(ndarray::Axis(0), part.view()).expect("matching widths");
    }
    Ok((emb, data.labels.clone()))
}
