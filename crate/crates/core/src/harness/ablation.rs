//! One-axis hyperparameter and augmentation sweeps.

use super::desk::{loss_variance, ssl_cell, DeskConfig};
use crate::augment::{AugmentationPolicy, Transform, TransformSpec};
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use crate::plot::{Canvas, PALETTE};
use crate::seeds::derive_seed;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    BatchSize,
    Lambda,
    ProjectorDim,
    /// Value: comma-separated transform names to drop from both branches, or `all`.
    TransformToggle,
    /// Value: `LO_A/LO_B`, the lower crop-scale bound of each branch.
    CropAsymmetry,
    PosterizeBits,
    RotationAngle,
}

const AXES: [(AblationAxis, &str); 7] = [
    (AblationAxis::BatchSize, "batch_size"),
    (AblationAxis::Lambda, "lambda"),
    (AblationAxis::ProjectorDim, "projector_dim"),
    (AblationAxis::TransformToggle, "transform_toggle"),
    (AblationAxis::CropAsymmetry, "crop_asymmetry"),
    (AblationAxis::PosterizeBits, "posterize_bits"),
    (AblationAxis::RotationAngle, "rotation_angle"),
];

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(AXES.iter().find(|(a, _)| a == self).map(|(_, n)| *n).unwrap_or("?"))
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        AXES.iter().find(|(_, n)| *n == s).map(|(a, _)| *a).ok_or_else(|| Error::InvalidConfig(format!("unknown ablation axis `{s}`")))
    }
}

fn parse<T: FromStr>(axis: AblationAxis, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad {axis} value `{v}`")))
}

fn each_branch(policy: &mut AugmentationPolicy, mut f: impl FnMut(&mut Vec<TransformSpec>, bool)) {
    f(&mut policy.branch_a, true);
    f(&mut policy.branch_b, false);
}

/// Base config and policy with one axis set to `value`.
pub fn apply_axis(axis: AblationAxis, value: &str, base: &DeskConfig, policy: &AugmentationPolicy) -> Result<(DeskConfig, AugmentationPolicy)> {
    let mut cfg = base.clone();
    let mut pol = policy.clone();
    match axis {
        AblationAxis::BatchSize => cfg.bt.batch_size = parse(axis, value)?,
        AblationAxis::Lambda => cfg.bt.lambda = parse(axis, value)?,
        AblationAxis::ProjectorDim => {
            let d: usize = parse(axis, value)?;
            cfg.bt.projector_dims = vec![d; cfg.bt.projector_dims.len().max(1)];
        }
        AblationAxis::TransformToggle => {
            let drop: Vec<&str> = value.split(',').map(str::trim).collect();
            let all = drop.contains(&"all");
            each_branch(&mut pol, |b, _| {
                b.retain(|s| {
                    let name = s.transform.name();
                    let structural = matches!(s.transform, Transform::Normalize { .. });
                    structural || !(all || drop.contains(&name))
                });
                // the crop stays as a plain resize so the branch remains well formed
                if all || drop.contains(&"crop_resize") {
                    let at = b.len().saturating_sub(1);
                    b.insert(at, TransformSpec::always(Transform::CropResize { out_size: cfg.out_size, scale_range: [1.0, 1.0] }));
                }
            });
        }
        AblationAxis::CropAsymmetry => {
            let (a, b) = value.split_once('/').ok_or_else(|| Error::InvalidConfig(format!("crop_asymmetry expects LO_A/LO_B, got `{value}`")))?;
            let (lo_a, lo_b): (f64, f64) = (parse(axis, a)?, parse(axis, b)?);
            each_branch(&mut pol, |br, first| {
                for s in br.iter_mut() {
                    if let Transform::CropResize { scale_range, .. } = &mut s.transform {
                        scale_range[0] = if first { lo_a } else { lo_b };
                    }
                }
            });
        }
        AblationAxis::PosterizeBits => {
            let bits: i64 = parse(axis, value)?;
            each_branch(&mut pol, |br, _| {
                for s in br.iter_mut() {
                    if let Transform::Posterize { bits: b } = &mut s.transform {
                        *b = bits;
                    }
                }
            });
        }
        AblationAxis::RotationAngle => {
            let deg: f64 = parse(axis, value)?;
            each_branch(&mut pol, |br, _| {
                for s in br.iter_mut() {
                    if let Transform::Rotate { max_degrees } = &mut s.transform {
                        *max_degrees = deg;
                    }
                }
            });
        }
    }
    cfg.bt.validate()?;
    pol.validate()?;
    if pol.is_degenerate() {
        return Err(Error::InvalidPolicy(format!(
            "{axis}={value} leaves both branches without any distortion; the two views would be identical and the loss can collapse"
        )));
    }
    Ok((cfg, pol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: String,
    pub top1_mean: f64,
    pub top1_std: f64,
    pub auc_mean: f64,
    pub loss_variance: f64,
    pub final_loss: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: AblationAxis,
    pub cells: Vec<AblationCell>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt())
}

/// One pretrain + probe per value and seed. Every value is validated before
/// any training starts.
pub fn ablation(axis: AblationAxis, values: &[String], base: &DeskConfig, policy: &AugmentationPolicy, data: &TileSet, n_seeds: usize) -> Result<AblationReport> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one value".into()));
    }
    let resolved = values.iter().map(|v| apply_axis(axis, v, base, policy)).collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(values.len());
    for (value, (cfg, pol)) in values.iter().zip(resolved) {
        let (mut accs, mut aucs, mut vars, mut finals, mut seeds) = (vec![], vec![], vec![], vec![], vec![]);
        for s in 0..n_seeds.max(1) {
            let mut c = cfg.clone();
            c.bt.seed = derive_seed(base.bt.seed, &[s as u64]);
            c.probe.seed = c.bt.seed;
            log::info!("ablation {axis}={value} seed {}", c.bt.seed);
            let cell = ssl_cell(data, &pol, None, &c)?;
            accs.push(cell.probe.top1_mean);
            aucs.push(cell.probe.auc);
            vars.push(loss_variance(&cell.history));
            finals.push(cell.history.last().map(|r| r.train_loss).unwrap_or(f64::NAN));
            seeds.push(c.bt.seed);
        }
        let (top1_mean, top1_std) = mean_std(&accs);
        cells.push(AblationCell {
            value: value.clone(),
            top1_mean,
            top1_std,
            auc_mean: mean_std(&aucs).0,
            loss_variance: mean_std(&vars).0,
            final_loss: mean_std(&finals).0,
            seeds,
        });
    }
    Ok(AblationReport { axis, cells })
}

/// `ablation.csv` and `ablation.png` (bars of mean top-1).
pub fn write_ablation(report: &AblationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    w.write_record(["axis", "value", "top1_mean", "top1_std", "auc_mean", "loss_variance", "final_loss"])?;
    for c in &report.cells {
        w.write_record([
            report.axis.to_string(),
            c.value.clone(),
            format!("{:.4}", c.top1_mean),
            format!("{:.4}", c.top1_std),
            format!("{:.4}", c.auc_mean),
            format!("{:.6}", c.loss_variance),
            format!("{:.6}", c.final_loss),
        ])?;
    }
    w.flush()?;
    let mut canvas = Canvas::new(80 + 60 * report.cells.len() as u32, 240);
    let heights: Vec<f64> = report.cells.iter().map(|c| c.top1_mean / 100.0).collect();
    canvas.bars(&heights, &PALETTE);
    canvas.save(&dir.join("ablation.png"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::pathbt_policy;

    #[test]
    fn removing_every_transform_is_rejected() {
        let base = DeskConfig::default();
        let err = apply_axis(AblationAxis::TransformToggle, "all", &base, &pathbt_policy(32)).unwrap_err();
        assert!(err.to_string().contains("identical"), "{err}");
    }

    #[test]
    fn dropping_one_transform_keeps_policy_valid() {
        let base = DeskConfig::default();
        let (_, p) = apply_axis(AblationAxis::TransformToggle, "rotate", &base, &pathbt_policy(32)).unwrap();
        assert!(p.branch_a.iter().chain(&p.branch_b).all(|s| s.transform.name() != "rotate"));
        p.validate().unwrap();
    }

    #[test]
    fn axis_values_apply() {
        let base = DeskConfig::default();
        let pol = pathbt_policy(32);
        let (c, _) = apply_axis(AblationAxis::Lambda, "0.1", &base, &pol).unwrap();
        assert_eq!(c.bt.lambda, 0.1);
        let (_, p) = apply_axis(AblationAxis::PosterizeBits, "3", &base, &pol).unwrap();
        assert!(p.branch_b.iter().any(|s| s.transform == Transform::Posterize { bits: 3 }));
        let (_, p) = apply_axis(AblationAxis::CropAsymmetry, "0.08/0.5", &base, &pol).unwrap();
        assert!(matches!(p.branch_b.iter().rev().nth(1).unwrap().transform, Transform::CropResize { scale_range: [lo, _], .. } if lo == 0.5));
        assert!(apply_axis(AblationAxis::BatchSize, "x", &base, &pol).is_err());
        assert_eq!("posterize_bits".parse::<AblationAxis>().unwrap(), AblationAxis::PosterizeBits);
    }

    #[test]
    fn report_files_have_every_cell() {
        let report = AblationReport {
            axis: AblationAxis::PosterizeBits,
            cells: ["3", "7"]
                .iter()
                .map(|v| AblationCell { value: v.to_string(), top1_mean: 50.0, top1_std: 1.0, auc_mean: 0.7, loss_variance: 0.1, final_loss: 1.0, seeds: vec![0, 1] })
                .collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        write_ablation(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
        assert!(text.contains("posterize_bits,3,") && text.contains("posterize_bits,7,"));
        assert!(dir.path().join("ablation.png").exists());
    }
}
