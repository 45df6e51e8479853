//! The training matrix: supervised and Barlow Twins variants over datasets.

use super::desk::{random_baseline, ssl_cell, DeskConfig};
use super::supervised::{supervised_train, SupervisedConfig};
use super::synth::{default_classes, synth_tiles, SyntheticSpec};
use crate::augment::basic_policy;
use crate::bt_core::{encoder_registry, EncoderFamily, EncoderInit, EncoderSpec};
use crate::dataset::TileSet;
use crate::error::{Error, Result};
use crate::seeds::derive_seed;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRow {
    Supervised,
    /// Original policy, random init.
    BasicBt,
    /// Pathology policy from a pretrained initialisation.
    ImBt,
    /// Pathology policy, random init.
    PathBt,
    /// Pathology policy on the shifted-window encoder.
    SwinBt,
}

pub const ALL_ROWS: [MatrixRow; 5] = [MatrixRow::Supervised, MatrixRow::BasicBt, MatrixRow::ImBt, MatrixRow::PathBt, MatrixRow::SwinBt];

impl MatrixRow {
    pub fn name(self) -> &'static str {
        match self {
            MatrixRow::Supervised => "supervised",
            MatrixRow::BasicBt => "basic_bt",
            MatrixRow::ImBt => "im_bt",
            MatrixRow::PathBt => "path_bt",
            MatrixRow::SwinBt => "swin_bt",
        }
    }

    pub fn is_ssl(self) -> bool {
        self != MatrixRow::Supervised
    }
}

impl fmt::Display for MatrixRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MatrixRow {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ALL_ROWS
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown matrix row `{s}` (expected one of supervised, basic_bt, im_bt, path_bt, swin_bt)")))
    }
}

/// Resolves row names up front so a typo fails before any training.
pub fn resolve_rows(names: &[String]) -> Result<Vec<MatrixRow>> {
    if names.is_empty() {
        return Ok(ALL_ROWS.to_vec());
    }
    names.iter().map(|n| n.parse()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    pub desk: DeskConfig,
    pub supervised: SupervisedConfig,
    /// Weights for the pretrained-init row; without them an auxiliary
    /// supervised run on differently seeded textures provides the init.
    pub pretrained_init: Option<PathBuf>,
    pub aux_epochs: usize,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        let desk = DeskConfig::default();
        let supervised = SupervisedConfig { input_size: desk.out_size, ..SupervisedConfig::default() };
        Self { desk, supervised, pretrained_init: None, aux_epochs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Done { top1: f64, auc: f64 },
    Absent { reason: String },
    Failed { error: String },
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Done { .. } => "done",
            CellStatus::Absent { .. } => "absent",
            CellStatus::Failed { .. } => "failed",
        }
    }

    pub fn top1(&self) -> Option<f64> {
        match self {
            CellStatus::Done { top1, .. } => Some(*top1),
            _ => None,
        }
    }

    pub fn auc(&self) -> Option<f64> {
        match self {
            CellStatus::Done { auc, .. } => Some(*auc),
            _ => None,
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            CellStatus::Done { .. } => "",
            CellStatus::Absent { reason } => reason,
            CellStatus::Failed { error } => error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub model: MatrixRow,
    pub dataset: String,
    pub status: CellStatus,
    /// Probe accuracy of a random frozen encoder on the same dataset.
    pub random_top1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub planned: Vec<(MatrixRow, String)>,
    pub cells: Vec<MatrixCell>,
}

impl MatrixReport {
    pub fn all_succeeded(&self) -> bool {
        self.cells.len() == self.planned.len() && self.cells.iter().all(|c| matches!(c.status, CellStatus::Done { .. }))
    }
}

pub fn plan(rows: &[MatrixRow], datasets: &[String]) -> Vec<(MatrixRow, String)> {
    datasets.iter().flat_map(|d| rows.iter().map(move |&r| (r, d.clone()))).collect()
}

/// Encoder trained with labels on an auxiliary texture set, standing in for
/// generic pretrained weights.
fn auxiliary_init(cfg: &MatrixConfig) -> Result<crate::bt_core::Encoder> {
    let mut spec = SyntheticSpec::new(6, 100, cfg.desk.out_size * 2, derive_seed(cfg.desk.bt.seed, &[0xa0]));
    spec.classes = default_classes(6);
    let aux = synth_tiles(&spec);
    let sup = SupervisedConfig { epochs: cfg.aux_epochs, lr: 1e-3, ..cfg.supervised.clone() };
    Ok(supervised_train(&aux, &cfg.desk.encoder, &sup)?.model.encoder)
}

fn run_cell(row: MatrixRow, data: &TileSet, cfg: &MatrixConfig) -> Result<CellStatus> {
    let desk = &cfg.desk;
    let probe = match row {
        MatrixRow::Supervised => {
            let out = supervised_train(data, &desk.encoder, &cfg.supervised)?;
            return Ok(CellStatus::Done { top1: out.metrics.top1_acc, auc: out.metrics.auc });
        }
        MatrixRow::BasicBt => ssl_cell(data, &basic_policy(desk.out_size), None, desk)?.probe,
        MatrixRow::PathBt => ssl_cell(data, &desk.policy(), None, desk)?.probe,
        MatrixRow::ImBt => {
            let init = match &cfg.pretrained_init {
                Some(path) => {
                    let spec = EncoderSpec::new(desk.encoder.family, EncoderInit::Pretrained(path.clone()));
                    encoder_registry(&spec, desk.out_size as usize, 0)?
                }
                None => auxiliary_init(cfg)?,
            };
            ssl_cell(data, &desk.policy(), Some(init), desk)?.probe
        }
        MatrixRow::SwinBt => {
            let swin = DeskConfig { encoder: EncoderSpec::new(EncoderFamily::HierWindowTransformerTinyClass, EncoderInit::Random), ..desk.clone() };
            ssl_cell(data, &swin.policy(), None, &swin)?.probe
        }
    };
    Ok(CellStatus::Done { top1: probe.top1_mean, auc: probe.auc })
}

/// Runs every (row, dataset) cell; a failing cell is recorded, never dropped.
/// `dry_run` returns the plan without training.
pub fn experiment_matrix(datasets: &[(String, TileSet)], rows: &[MatrixRow], cfg: &MatrixConfig, dry_run: bool) -> Result<MatrixReport> {
    let names: Vec<String> = datasets.iter().map(|(n, _)| n.clone()).collect();
    let planned = plan(rows, &names);
    if dry_run {
        return Ok(MatrixReport { planned, cells: Vec::new() });
    }
    let mut cells = Vec::with_capacity(planned.len());
    for (name, data) in datasets {
        let baseline = random_baseline(data, &cfg.desk).ok().map(|p| p.top1_mean);
        for &row in rows {
            log::info!("matrix cell {row} on {name}");
            let status = match run_cell(row, data, cfg) {
                Ok(s) => s,
                Err(e) => CellStatus::Failed { error: e.to_string() },
            };
            cells.push(MatrixCell { model: row, dataset: name.clone(), status, random_top1: baseline });
        }
    }
    Ok(MatrixReport { planned, cells })
}

/// One row per (model, dataset) in the polar-plot data layout.
pub fn write_matrix_csv(report: &MatrixReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "dataset", "status", "top1", "auc", "random_top1", "detail"])?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    if report.cells.is_empty() {
        for (row, ds) in &report.planned {
            w.write_record([row.name(), ds, "planned", "", "", "", ""])?;
        }
    }
    for c in &report.cells {
        w.write_record([
            c.model.name(),
            &c.dataset,
            c.status.label(),
            &fmt(c.status.top1()),
            &fmt(c.status.auc()),
            &fmt(c.random_top1),
            c.status.detail(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
