use super::config::BTConfig;
use super::encoder::{encoder_registry, Encoder, EncoderSpec};
use super::objective::{bt_forward_backward, LossTerms};
use super::projector::Projector;
use crate::augment::{apply_policy, AugmentationPolicy};
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use ndarray::{Array2, Array3, Array4, Axis};
use pathbt_nn::optim::{warmup_cosine, Lars};
use pathbt_nn::{Layer, Mode, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-epoch loss summary (means over steps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub invariance: f64,
    pub redundancy: f64,
}

pub struct PretrainOutcome {
    pub encoder: Encoder,
    pub projector: Projector,
    pub history: Vec<EpochRecord>,
}

/// Augments `indices` of `data` with one branch; sample `i` draws from a
/// stream keyed by (seed, epoch, index, branch) so batches are reproducible
/// regardless of worker count.
pub fn augment_batch(
    data: &TileSet,
    indices: &[usize],
    branch: &[crate::augment::TransformSpec],
    seed: u64,
    epoch: usize,
    branch_id: u64,
) -> Result<Tensor> {
    let views: Vec<Array3<f64>> = indices
        .par_iter()
        .map(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[epoch as u64, i as u64, branch_id]));
            apply_policy(&data.images[i], branch, &mut rng)
        })
        .collect::<Result<_>>()?;
    Ok(stack_images(&views))
}

pub fn stack_images(views: &[Array3<f64>]) -> Tensor {
    let refs: Vec<_> = views.iter().map(|v| v.view()).collect();
    ndarray::stack(Axis(0), &refs).map(Array4::into_dyn).expect("views share a shape")
}

fn to_matrix(t: Tensor) -> Array2<f64> {
    t.into_dimensionality().expect("2-D embeddings")
}

/// Encoder and projector viewed as one network so a single optimizer owns
/// all parameters.
struct Trainer<'a> {
    encoder: Encoder,
    projector: Projector,
    policy: &'a AugmentationPolicy,
    cfg: &'a BTConfig,
}

impl Trainer<'_> {
    fn views(&self, data: &TileSet, idx: &[usize], epoch: usize) -> Result<(Tensor, Tensor)> {
        let a = augment_batch(data, idx, &self.policy.branch_a, self.cfg.seed, epoch, 0)?;
        let b = augment_batch(data, idx, &self.policy.branch_b, self.cfg.seed, epoch, 1)?;
        Ok((a, b))
    }

    fn embed(&mut self, x: &Tensor, mode: Mode) -> Array2<f64> {
        to_matrix(self.forward(x, mode))
    }

    fn train_step(&mut self, xa: &Tensor, xb: &Tensor) -> Result<LossTerms> {
        let za = self.embed(xa, Mode::Train);
        let zb = self.embed(xb, Mode::Train);
        let out = bt_forward_backward(&za, &zb, self.cfg.lambda, self.cfg.eps)?;
        if out.terms.is_finite() {
            // reverse order of the forwards: view B's activations are on top
            self.backward(&out.grad_b.into_dyn());
            self.backward(&out.grad_a.into_dyn());
        } else {
            self.clear_cache();
        }
        Ok(out.terms)
    }

    fn val_loss(&mut self, data: &TileSet, val: &[usize], epoch: usize) -> Result<Option<f64>> {
        if val.len() < 2 {
            return Ok(None);
        }
        let bs = self.cfg.batch_size.min(val.len());
        let mut total = 0.0;
        let mut n = 0;
        for chunk in val.chunks(bs).filter(|c| c.len() >= 2) {
            let (xa, xb) = self.views(data, chunk, epoch + 1_000_000)?;
            let za = self.embed(&xa, Mode::Eval);
            let zb = self.embed(&xb, Mode::Eval);
            total += bt_forward_backward(&za, &zb, self.cfg.lambda, self.cfg.eps)?.terms.total;
            n += 1;
        }
        Ok((n > 0).then(|| total / n as f64))
    }
}

impl Layer for Trainer<'_> {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let h = self.encoder.forward(x, mode);
        self.projector.forward(&h, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.projector.backward(grad);
        self.encoder.backward(&g)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut pathbt_nn::Param)) {
        self.encoder.visit_params(f);
        self.projector.visit_params(f);
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&pathbt_nn::Param)) {
        self.encoder.visit_params_ref(f);
        self.projector.visit_params_ref(f);
    }
    fn clear_cache(&mut self) {
        self.encoder.clear_cache();
        self.projector.clear_cache();
    }
}

/// Barlow Twins pretraining. `on_epoch` sees each epoch's record and the
/// current networks (for checkpoints and progress logs).
pub fn pretrain_with(
    data: &TileSet,
    policy: &AugmentationPolicy,
    encoder: Encoder,
    cfg: &BTConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord, &Encoder, &Projector) -> Result<()>,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    policy.validate()?;
    if data.is_empty() {
        return Err(Error::TooFewSamples { needed: cfg.batch_size, got: 0 });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[u64::MAX])));
    let n_val = ((data.len() as f64) * cfg.val_fraction).floor() as usize;
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    if cfg.batch_size > train.len() {
        return Err(Error::TooFewSamples { needed: cfg.batch_size, got: train.len() });
    }

    let mut proj_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[7]));
    let projector = Projector::new(encoder.feature_dim(), &cfg.projector_dims, &mut proj_rng);
    let mut t = Trainer { encoder, projector, policy, cfg };
    let mut opt = Lars::new(cfg.momentum, cfg.weight_decay, cfg.lars_eta);

    let steps_per_epoch = train.len() / cfg.batch_size;
    let total_steps = steps_per_epoch * cfg.epochs;
    let warmup = steps_per_epoch * cfg.warmup_epochs;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));

    for epoch in 0..cfg.epochs {
        train.shuffle(&mut shuffle_rng);
        let mut sum = LossTerms { total: 0.0, invariance: 0.0, redundancy: 0.0 };
        for step in 0..steps_per_epoch {
            let idx = &train[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let (xa, xb) = t.views(data, idx, epoch)?;
            t.zero_grad();
            let terms = t.train_step(&xa, &xb)?;
            if !terms.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    total: terms.total,
                    invariance: terms.invariance,
                    redundancy: terms.redundancy,
                });
            }
            let global = epoch * steps_per_epoch + step;
            let lr_w = warmup_cosine(global, total_steps, warmup, cfg.lr_weights);
            let lr_b = warmup_cosine(global, total_steps, warmup, cfg.lr_biases);
            opt.step(&mut t, lr_w, lr_b)?;
            sum.total += terms.total;
            sum.invariance += terms.invariance;
            sum.redundancy += terms.redundancy;
        }
        let k = steps_per_epoch as f64;
        let record = EpochRecord {
            epoch: epoch + 1,
            train_loss: sum.total / k,
            val_loss: t.val_loss(data, val, epoch)?,
            invariance: sum.invariance / k,
            redundancy: sum.redundancy / k,
        };
        log::info!("epoch {} train {:.4} val {:?}", record.epoch, record.train_loss, record.val_loss);
        on_epoch(&record, &t.encoder, &t.projector)?;
        history.push(record);
    }
    Ok(PretrainOutcome { encoder: t.encoder, projector: t.projector, history })
}

pub fn pretrain(data: &TileSet, policy: &AugmentationPolicy, spec: &EncoderSpec, cfg: &BTConfig) -> Result<PretrainOutcome> {
    let encoder = encoder_registry(spec, policy.out_size() as usize, derive_seed(cfg.seed, &[3]))?;
    pretrain_with(data, policy, encoder, cfg, &mut |_, _, _| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::pathbt_policy;
    use crate::bt_core::encoder::small_conv_net;
    use pathbt_nn::init;

    fn loss_at(t: &mut Trainer<'_>, xa: &Tensor, xb: &Tensor) -> f64 {
        let za = t.embed(xa, Mode::Train);
        let zb = t.embed(xb, Mode::Train);
        t.clear_cache();
        bt_forward_backward(&za, &zb, t.cfg.lambda, t.cfg.eps).unwrap().terms.total
    }

    fn bump(t: &mut Trainer<'_>, param: usize, i: usize, delta: f64) {
        let mut k = 0;
        t.visit_params(&mut |p| {
            if k == param {
                p.value.as_slice_mut().unwrap()[i] += delta;
            }
            k += 1;
        });
    }

    #[test]
    fn encoder_and_projector_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = small_conv_net(&[4, 6], &[2, 1], &mut rng);
        let spec = EncoderSpec::small_conv();
        let encoder = Encoder::from_parts(EncoderSpec { feature_dim: 6, ..spec }, net);
        let projector = Projector::new(6, &[8, 5], &mut rng);
        let policy = pathbt_policy(8);
        let cfg = BTConfig { lambda: 0.05, ..BTConfig::default() };
        let mut t = Trainer { encoder, projector, policy: &policy, cfg: &cfg };
        let xa = init::normal(&[6, 3, 8, 8], 1.0, &mut rng);
        let xb = init::normal(&[6, 3, 8, 8], 1.0, &mut rng);

        t.zero_grad();
        t.train_step(&xa, &xb).unwrap();
        let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
        t.visit_params_ref(&mut |p| analytic.push((p.name.clone(), p.grad.iter().copied().collect())));

        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (pi, (name, grad)) in analytic.iter().enumerate() {
            let stride = (grad.len() / 5).max(1);
            for i in (0..grad.len()).step_by(stride) {
                bump(&mut t, pi, i, h);
                let fp = loss_at(&mut t, &xa, &xb);
                bump(&mut t, pi, i, -2.0 * h);
                let fm = loss_at(&mut t, &xa, &xb);
                bump(&mut t, pi, i, h);
                let fd = (fp - fm) / (2.0 * h);
                let err = (fd - grad[i]).abs() / (fd.abs() + grad[i].abs()).max(1e-3);
                assert!(err < 1e-4, "{name}[{i}]: fd {fd} analytic {}", grad[i]);
                worst = worst.max(err);
            }
        }
        assert!(worst.is_finite());
    }
}
