//! Desk-scale pretrain-then-probe pipeline shared by the sweeps.

use crate::augment::{pathbt_policy, AugmentationPolicy, IMAGENET_MEAN, IMAGENET_STD};
use crate::bt_core::{encoder_registry, pretrain_with, BTConfig, Encoder, EncoderSpec, EpochRecord};
use crate::dataset::TileSet;
use crate::error::Result;
use crate::eval_linear::{extract_embeddings, train_probe_repeated, EvalPreprocess, ProbeConfig, ProbeSummary};
use crate::seeds::derive_seed;
use serde::{Deserialize, Serialize};

pub const DESK_OUT_SIZE: u32 = 32;

/// Everything a desk-scale cell needs besides data and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeskConfig {
    pub out_size: u32,
    pub encoder: EncoderSpec,
    pub bt: BTConfig,
    pub probe: ProbeConfig,
}

impl Default for DeskConfig {
    fn default() -> Self {
        Self {
            out_size: DESK_OUT_SIZE,
            encoder: EncoderSpec::small_conv(),
            bt: BTConfig {
                batch_size: 32,
                projector_dims: vec![256; 3],
                epochs: 30,
                warmup_epochs: 1,
                lars_eta: 0.05,
                ..BTConfig::default()
            },
            probe: ProbeConfig { epochs: 100, repeats: 2, ..ProbeConfig::default() },
        }
    }
}

impl DeskConfig {
    pub fn policy(&self) -> AugmentationPolicy {
        pathbt_policy(self.out_size)
    }

    /// Probe config whose per-class split fits `data` (70/30 of the
    /// smallest class when the configured counts do not fit).
    pub fn probe_for(&self, data: &TileSet) -> ProbeConfig {
        let min = data.class_counts().into_iter().min().unwrap_or(0);
        let mut cfg = self.probe.clone();
        if cfg.train_per_class + cfg.test_per_class > min {
            cfg.train_per_class = min * 7 / 10;
            cfg.test_per_class = min - cfg.train_per_class;
        }
        cfg
    }
}

pub fn eval_preprocess(out_size: u32) -> EvalPreprocess {
    EvalPreprocess::new(out_size, (IMAGENET_MEAN, IMAGENET_STD))
}

/// Frozen-encoder probe on `data`.
pub fn probe_encoder(encoder: &mut Encoder, data: &TileSet, cfg: &DeskConfig) -> Result<ProbeSummary> {
    let (emb, labels) = extract_embeddings(encoder, data, &eval_preprocess(cfg.out_size))?;
    let (summary, _) = train_probe_repeated(&emb, &labels, &data.class_names, &cfg.probe_for(data))?;
    Ok(summary)
}

/// Probe on a freshly initialised (untrained) encoder.
pub fn random_baseline(data: &TileSet, cfg: &DeskConfig) -> Result<ProbeSummary> {
    let mut enc = encoder_registry(&cfg.encoder, cfg.out_size as usize, derive_seed(cfg.bt.seed, &[3]))?;
    probe_encoder(&mut enc, data, cfg)
}

pub struct SslCell {
    pub encoder: Encoder,
    pub history: Vec<EpochRecord>,
    pub probe: ProbeSummary,
}

/// Pretrains `encoder` (fresh if `None`) with `policy` then probes it.
pub fn ssl_cell(data: &TileSet, policy: &AugmentationPolicy, encoder: Option<Encoder>, cfg: &DeskConfig) -> Result<SslCell> {
    let encoder = match encoder {
        Some(e) => e,
        None => encoder_registry(&cfg.encoder, cfg.out_size as usize, derive_seed(cfg.bt.seed, &[3]))?,
    };
    let out = pretrain_with(data, policy, encoder, &cfg.bt, &mut |_, _, _| Ok(()))?;
    let mut encoder = out.encoder;
    let probe = probe_encoder(&mut encoder, data, cfg)?;
    Ok(SslCell { encoder, history: out.history, probe })
}

/// Population variance of the per-epoch training loss.
pub fn loss_variance(history: &[EpochRecord]) -> f64 {
    let n = history.len();
    if n < 2 {
        return 0.0;
    }
    let mean = history.iter().map(|r| r.train_loss).sum::<f64>() / n as f64;
    history.iter().map(|r| (r.train_loss - mean).powi(2)).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(l: f64) -> EpochRecord {
        EpochRecord { epoch: 0, train_loss: l, val_loss: None, invariance: 0.0, redundancy: 0.0 }
    }

    #[test]
    fn variance_of_constant_history_is_zero() {
        assert_eq!(loss_variance(&[rec(3.0), rec(3.0), rec(3.0)]), 0.0);
        assert_eq!(loss_variance(&[rec(1.0)]), 0.0);
        assert!((loss_variance(&[rec(1.0), rec(3.0)]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probe_split_fits_small_sets() {
        let mut data = TileSet::new(vec!["a".into(), "b".into()]);
        for i in 0..20 {
            data.push(format!("t{i}"), image::RgbImage::new(4, 4), i % 2);
        }
        let p = DeskConfig::default().probe_for(&data);
        assert_eq!((p.train_per_class, p.test_per_class), (7, 3));
    }
}
