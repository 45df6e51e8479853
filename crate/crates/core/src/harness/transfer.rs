//! Cross field-of-view transfer: every encoder probed on every FoV's tiles.

use super::desk::{probe_encoder, DeskConfig};
use super::matrix::CellStatus;
use super::synth::SyntheticSpec;
use crate::bt_core::Encoder;
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferCell {
    /// FoV the encoder was pretrained on.
    pub train_fov: String,
    pub eval_fov: String,
    pub diagonal: bool,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub fovs: Vec<String>,
    pub cells: Vec<TransferCell>,
}

impl TransferReport {
    pub fn cell(&self, train: &str, eval: &str) -> Option<&TransferCell> {
        self.cells.iter().find(|c| c.train_fov == train && c.eval_fov == eval)
    }

    /// Mean top-1 over completed diagonal and off-diagonal cells.
    pub fn diagonal_means(&self) -> (Option<f64>, Option<f64>) {
        let mean = |diag: bool| {
            let v: Vec<f64> = self.cells.iter().filter(|c| c.diagonal == diag).filter_map(|c| c.status.top1()).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        (mean(true), mean(false))
    }
}

/// The synthetic stand-in for a wider field of view: the same tissue seen at
/// `fov_scale` times the spatial frequency.
pub fn fov_spec(base: &SyntheticSpec, fov_scale: f64) -> SyntheticSpec {
    SyntheticSpec { scale: base.scale * fov_scale, ..base.clone() }
}

/// `encoders[i]` belongs to `datasets[i]`'s FoV; a `None` encoder marks its
/// whole row absent and the grid is still complete.
pub fn transfer_matrix(encoders: &mut [Option<Encoder>], datasets: &[(String, TileSet)], cfg: &DeskConfig) -> Result<TransferReport> {
    if datasets.len() < 2 {
        return Err(Error::InvalidConfig(format!("transfer needs at least 2 fields of view, got {}", datasets.len())));
    }
    if encoders.len() != datasets.len() {
        return Err(Error::DimensionMismatch(format!("{} encoders for {} fields of view", encoders.len(), datasets.len())));
    }
    let fovs: Vec<String> = datasets.iter().map(|(n, _)| n.clone()).collect();
    let mut cells = Vec::with_capacity(fovs.len() * fovs.len());
    for (i, enc) in encoders.iter_mut().enumerate() {
        for (j, (eval, data)) in datasets.iter().enumerate() {
            let status = match enc.as_mut() {
                None => CellStatus::Absent { reason: format!("no encoder trained at {}", fovs[i]) },
                Some(e) => match probe_encoder(e, data, cfg) {
                    Ok(p) => CellStatus::Done { top1: p.top1_mean, auc: p.auc },
                    Err(err) => CellStatus::Failed { error: err.to_string() },
                },
            };
            cells.push(TransferCell { train_fov: fovs[i].clone(), eval_fov: eval.clone(), diagonal: i == j, status });
        }
    }
    Ok(TransferReport { fovs, cells })
}

/// `transfer.csv` (one row per cell) and `transfer_grid.csv` (encoders as
/// rows, evaluation FoVs as columns, `acc / auc`, diagonal marked `*`).
pub fn write_transfer(report: &TransferReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("transfer.csv"))?;
    w.write_record(["train_fov", "eval_fov", "diagonal", "status", "top1", "auc", "detail"])?;
    for c in &report.cells {
        w.write_record([
            c.train_fov.clone(),
            c.eval_fov.clone(),
            c.diagonal.to_string(),
            c.status.label().to_string(),
            c.status.top1().map(|v| format!("{v:.4}")).unwrap_or_default(),
            c.status.auc().map(|v| format!("{v:.4}")).unwrap_or_default(),
            c.status.detail().to_string(),
        ])?;
    }
    w.flush()?;

    let mut g = csv::Writer::from_path(dir.join("transfer_grid.csv"))?;
    let mut header = vec!["encoder".to_string()];
    header.extend(report.fovs.iter().cloned());
    g.write_record(&header)?;
    for train in &report.fovs {
        let mut row = vec![train.clone()];
        for eval in &report.fovs {
            let text = match report.cell(train, eval) {
                Some(c) => match &c.status {
                    CellStatus::Done { top1, auc } => format!("{top1:.2} / {auc:.4}{}", if c.diagonal { " *" } else { "" }),
                    other => other.label().to_string(),
                },
                None => "missing".into(),
            };
            row.push(text);
        }
        g.write_record(&row)?;
    }
    g.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_encoders_leave_absent_cells() {
        let mut sets = Vec::new();
        for name in ["fov410", "fov800"] {
            let mut d = TileSet::new(vec!["a".into(), "b".into()]);
            d.push("x", image::RgbImage::new(8, 8), 0);
            sets.push((name.to_string(), d));
        }
        let mut encs: Vec<Option<Encoder>> = vec![None, None];
        let report = transfer_matrix(&mut encs, &sets, &DeskConfig::default()).unwrap();
        assert_eq!(report.cells.len(), 4);
        assert!(report.cells.iter().all(|c| c.status.label() == "absent"));
        assert_eq!(report.cells.iter().filter(|c| c.diagonal).count(), 2);
        let dir = tempfile::tempdir().unwrap();
        write_transfer(&report, dir.path()).unwrap();
        let grid = std::fs::read_to_string(dir.path().join("transfer_grid.csv")).unwrap();
        assert_eq!(grid.lines().count(), 3);
    }

    #[test]
    fn needs_two_fovs() {
        let d = TileSet::new(vec!["a".into()]);
        assert!(transfer_matrix(&mut [None], &[("one".into(), d)], &DeskConfig::default()).is_err());
    }
}
