use crate::train::load_pretrained;
use crate::Ctx;
use anyhow::{bail, Context as _, Result};
use clap::Args;
use pathbt_core::augment::resolve_policy;
use pathbt_core::bt_core::Encoder;
use pathbt_core::harness::{
    ablation, experiment_matrix, fov_spec, report as write_report, resolve_rows, ssl_cell, synth_tiles, transfer_matrix, write_ablation, write_matrix_csv,
    write_transfer, AblationAxis, CellStatus, DeskConfig, MatrixConfig, SyntheticSpec,
};
use pathbt_core::slide_ingest::load_tile_dataset;
use pathbt_core::TileSet;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// `NAME=DIR`, or a bare directory named after its last component.
fn parse_named(s: &str) -> Result<(String, PathBuf)> {
    match s.split_once('=') {
        Some((n, d)) if !n.is_empty() => Ok((n.to_string(), PathBuf::from(d))),
        _ => {
            let p = PathBuf::from(s);
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).with_context(|| format!("cannot name dataset `{s}`"))?;
            Ok((name, p))
        }
    }
}

fn load_named(specs: &[String]) -> Result<Vec<(String, TileSet)>> {
    specs
        .iter()
        .map(|s| {
            let (name, dir) = parse_named(s)?;
            let (set, _) = load_tile_dataset(&dir).with_context(|| format!("dataset {}", dir.display()))?;
            Ok((name, set))
        })
        .collect()
}

fn synthetic(seed: u64) -> (String, TileSet) {
    ("synthetic".into(), synth_tiles(&SyntheticSpec::new(3, 200, 64, seed)))
}

#[derive(Args, Serialize)]
pub struct MatrixArgs {
    /// Datasets as `NAME=DIR` (repeatable); a synthetic set when omitted.
    #[arg(long)]
    data: Vec<String>,
    /// Rows to run (all when omitted).
    #[arg(long, value_delimiter = ',')]
    rows: Vec<String>,
    /// List the planned cells without training.
    #[arg(long)]
    dry_run: bool,
}

pub fn matrix(ctx: &Ctx, a: MatrixArgs) -> Result<bool> {
    let rows = resolve_rows(&a.rows)?;
    let mut cfg: MatrixConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        cfg.desk.bt.seed = ctx.seed;
        cfg.desk.probe.seed = ctx.seed;
        cfg.supervised.seed = ctx.seed;
    }
    let datasets = if a.data.is_empty() { vec![synthetic(ctx.seed)] } else { load_named(&a.data)? };
    let snapshot = serde_json::json!({ "args": &a, "matrix": &cfg });
    ctx.run("matrix", &snapshot, |out, rec| {
        let report = experiment_matrix(&datasets, &rows, &cfg, a.dry_run)?;
        write_matrix_csv(&report, &out.join("matrix.csv"))?;
        std::fs::write(out.join("matrix.json"), serde_json::to_vec_pretty(&report)?)?;
        rec.add_artifact("matrix.csv");
        rec.add_artifact("matrix.json");
        for c in &report.cells {
            if let CellStatus::Done { top1, auc } = c.status {
                rec.metrics.insert(format!("{}/{}/top1", c.model, c.dataset), top1);
                rec.metrics.insert(format!("{}/{}/auc", c.model, c.dataset), auc);
            }
        }
        for (row, ds) in &report.planned {
            println!("{row}\t{ds}");
        }
        Ok(report.all_succeeded())
    })
}

#[derive(Args, Serialize)]
pub struct AblateArgs {
    /// batch_size, lambda, projector_dim, transform_toggle, crop_asymmetry, posterize_bits or rotation_angle.
    #[arg(long)]
    axis: String,
    /// Values separated by `;` (e.g. `0.2/0.2;0.2/0.5` or `rotate;all`).
    #[arg(long, value_delimiter = ';', required = true)]
    values: Vec<String>,
    /// Dataset directory; a synthetic set when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "pathbt")]
    policy: String,
    #[arg(long, default_value_t = 2)]
    seeds: usize,
}

pub fn ablate(ctx: &Ctx, a: AblateArgs) -> Result<bool> {
    let axis: AblationAxis = a.axis.parse()?;
    let mut base: DeskConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        base.bt.seed = ctx.seed;
        base.probe.seed = ctx.seed;
    }
    let policy = resolve_policy(&a.policy, base.out_size)?;
    let data = match &a.data {
        Some(d) => load_tile_dataset(d)?.0,
        None => synthetic(ctx.seed).1,
    };
    let snapshot = serde_json::json!({ "args": &a, "desk": &base });
    ctx.run("ablate", &snapshot, |out, rec| {
        let report = ablation(axis, &a.values, &base, &policy, &data, a.seeds)?;
        write_ablation(&report, out)?;
        std::fs::write(out.join("ablation.json"), serde_json::to_vec_pretty(&report)?)?;
        for name in ["ablation.csv", "ablation.png", "ablation.json"] {
            rec.add_artifact(name);
        }
        for c in &report.cells {
            rec.metrics.insert(format!("{}/top1_mean", c.value), c.top1_mean);
            rec.metrics.insert(format!("{}/loss_variance", c.value), c.loss_variance);
        }
        Ok(true)
    })
}

#[derive(Args, Serialize)]
pub struct TransferArgs {
    /// Datasets as `NAME=DIR`, one per field of view.
    #[arg(long)]
    data: Vec<String>,
    /// Encoders as `NAME=RUN` matching the dataset names; missing ones are absent cells.
    #[arg(long)]
    encoders: Vec<String>,
    /// Without `--data`: synthetic frequency multipliers standing in for fields of view.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    fov_scales: Vec<f64>,
    /// Pretrain an encoder per field of view when none is given.
    #[arg(long)]
    pretrain_missing: bool,
}

fn load_encoders(ctx: &Ctx, specs: &[String], names: &[String]) -> Result<Vec<Option<Encoder>>> {
    let mut out: Vec<Option<Encoder>> = names.iter().map(|_| None).collect();
    for s in specs {
        let Some((name, run)) = s.split_once('=') else { bail!("encoder `{s}` is not NAME=RUN") };
        let i = names.iter().position(|n| n == name).with_context(|| format!("encoder for unknown field of view `{name}`"))?;
        out[i] = Some(load_pretrained(&ctx.locate(run)?, crate::train::ENCODER_FILE)?.0);
    }
    Ok(out)
}

pub fn transfer(ctx: &Ctx, a: TransferArgs) -> Result<bool> {
    let mut cfg: DeskConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        cfg.bt.seed = ctx.seed;
        cfg.probe.seed = ctx.seed;
    }
    let datasets = if a.data.is_empty() {
        let base = SyntheticSpec::new(3, 200, 64, ctx.seed);
        a.fov_scales.iter().map(|&s| (format!("fov_x{s}"), synth_tiles(&fov_spec(&base, s)))).collect()
    } else {
        load_named(&a.data)?
    };
    let names: Vec<String> = datasets.iter().map(|(n, _)| n.clone()).collect();
    let mut encoders = load_encoders(ctx, &a.encoders, &names)?;
    let snapshot = serde_json::json!({ "args": &a, "desk": &cfg });
    ctx.run("transfer", &snapshot, |out, rec| {
        if a.pretrain_missing || a.encoders.is_empty() {
            let policy = cfg.policy();
            for (slot, (name, data)) in encoders.iter_mut().zip(&datasets) {
                if slot.is_none() {
                    log::info!("pretraining encoder at {name}");
                    *slot = Some(ssl_cell(data, &policy, None, &cfg)?.encoder);
                }
            }
        }
        let report = transfer_matrix(&mut encoders, &datasets, &cfg)?;
        write_transfer(&report, out)?;
        rec.add_artifact("transfer.csv");
        rec.add_artifact("transfer_grid.csv");
        let (diag, off) = report.diagonal_means();
        if let Some(d) = diag {
            rec.metrics.insert("diagonal_top1_mean".into(), d);
        }
        if let Some(o) = off {
            rec.metrics.insert("off_diagonal_top1_mean".into(), o);
        }
        Ok(report.cells.iter().all(|c| !matches!(c.status, CellStatus::Failed { .. })))
    })
}

#[derive(Args, Serialize)]
pub struct ReportArgs {
    /// Run ids to include (every registered run when omitted).
    runs: Vec<String>,
}

pub fn report(ctx: &Ctx, a: ReportArgs) -> Result<bool> {
    let ids = if a.runs.is_empty() { ctx.registry.list()? } else { a.runs.clone() };
    if ids.is_empty() {
        bail!("no runs under {}", ctx.registry.root().display());
    }
    for id in &ids {
        ctx.registry.load(id)?;
    }
    ctx.run("report", &a, |out, rec| {
        let files = write_report(&ctx.registry, &ids, out)?;
        for p in std::iter::once(&files.markdown).chain(std::iter::once(&files.metrics_csv)).chain(&files.plots) {
            rec.add_artifact(relative(p, out));
        }
        rec.metrics.insert("runs".into(), ids.len() as f64);
        Ok(true)
    })
}

fn relative(p: &Path, base: &Path) -> PathBuf {
    p.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}
