//! Consolidated markdown + CSV report over finished runs.

use super::run::Registry;
use crate::error::Result;
use crate::plot::{Canvas, PALETTE};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const LOSS_CSV: &str = "loss.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";

pub struct ReportFiles {
    pub markdown: PathBuf,
    pub metrics_csv: PathBuf,
    pub plots: Vec<PathBuf>,
}

/// Reads `epoch,train_loss,val_loss,...` rows; empty cells become `None`.
fn read_loss(path: &Path) -> Result<Vec<(f64, f64, Option<f64>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| rec.get(i).and_then(|s| s.trim().parse::<f64>().ok());
        if let (Some(e), Some(t)) = (num(0), num(1)) {
            rows.push((e, t, num(2)));
        }
    }
    Ok(rows)
}

fn plot_loss(rows: &[(f64, f64, Option<f64>)], path: &Path) -> Result<()> {
    let train: Vec<(f64, f64)> = rows.iter().map(|r| (r.0, r.1)).collect();
    let val: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.2.map(|v| (r.0, v))).collect();
    let mut canvas = Canvas::new(320, 220);
    let series = if val.is_empty() { vec![train] } else { vec![train, val] };
    canvas.lines(&series, &PALETTE);
    canvas.save(path)
}

/// One markdown section per run; unknown ids fail before anything is written.
pub fn report(registry: &Registry, run_ids: &[String], out_dir: &Path) -> Result<ReportFiles> {
    let records = run_ids.iter().map(|id| registry.load(id)).collect::<Result<Vec<_>>>()?;
    std::fs::create_dir_all(out_dir)?;
    let mut md = String::from("# Run report\n");
    let mut plots = Vec::new();
    let mut metrics = csv::Writer::from_path(out_dir.join("metrics.csv"))?;
    metrics.write_record(["run_id", "command", "metric", "value"])?;

    for rec in &records {
        let dir = registry.output_dir(rec);
        let _ = writeln!(md, "\n## {}\n", rec.run_id);
        let status = serde_json::to_value(&rec.status)?;
        let _ = writeln!(md, "- command: `{}`\n- version: {}\n- status: {}", rec.command, rec.version, status["state"].as_str().unwrap_or("?"));
        if rec.metrics.is_empty() {
            md.push_str("\nNo metrics recorded.\n");
        } else {
            md.push_str("\n| metric | value |\n|---|---|\n");
            for (k, v) in &rec.metrics {
                let _ = writeln!(md, "| {k} | {v:.4} |");
                metrics.write_record([rec.run_id.as_str(), rec.command.as_str(), k.as_str(), &format!("{v}")])?;
            }
        }

        let loss = dir.join(LOSS_CSV);
        if loss.is_file() {
            let rows = read_loss(&loss)?;
            let png = out_dir.join(format!("{}_loss.png", rec.run_id));
            plot_loss(&rows, &png)?;
            let _ = writeln!(md, "\nLoss curve ({} epochs): `{}`", rows.len(), png.file_name().unwrap().to_string_lossy());
            plots.push(png);
        } else {
            md.push_str("\nLoss curve: not produced by this run.\n");
        }

        let confusion = dir.join(CONFUSION_CSV);
        if confusion.is_file() {
            md.push_str("\nConfusion matrix (rows true, columns predicted):\n\n```\n");
            md.push_str(&std::fs::read_to_string(confusion)?);
            md.push_str("```\n");
        } else {
            md.push_str("\nConfusion matrix: not produced by this run.\n");
        }

        if !rec.artifacts.is_empty() {
            md.push_str("\nArtifacts:\n");
            for a in &rec.artifacts {
                let note = if dir.join(a).exists() { "" } else { " (missing)" };
                let _ = writeln!(md, "- `{}`{note}", a.display());
            }
        }
    }
    metrics.flush()?;
    let markdown = out_dir.join("report.md");
    std::fs::write(&markdown, md)?;
    Ok(ReportFiles { markdown, metrics_csv: out_dir.join("metrics.csv"), plots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::RunStatus;

    #[test]
    fn single_run_report_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path().join("runs")).unwrap();
        let mut rec = reg.begin("probe", serde_json::json!({})).unwrap();
        rec.metrics.insert("top1_mean".into(), 88.0);
        rec.add_artifact("roc_a.csv");
        reg.finish(&mut rec, RunStatus::Succeeded).unwrap();

        let out = dir.path().join("r1");
        let files = report(&reg, &[rec.run_id.clone()], &out).unwrap();
        let text = std::fs::read_to_string(&files.markdown).unwrap();
        assert_eq!(text.matches("\n## ").count(), 1);
        assert!(text.contains("not produced"));
        assert!(text.contains("(missing)"));
        let again = report(&reg, &[rec.run_id.clone()], &dir.path().join("r2")).unwrap();
        assert_eq!(text, std::fs::read_to_string(again.markdown).unwrap());
    }

    #[test]
    fn loss_csv_is_plotted() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path()).unwrap();
        let rec = reg.begin("pretrain", serde_json::json!({})).unwrap();
        std::fs::write(reg.run_dir(&rec.run_id).join(LOSS_CSV), "epoch,train_loss,val_loss\n1,5.0,6.0\n2,4.0,\n").unwrap();
        let files = report(&reg, &[rec.run_id.clone()], &dir.path().join("out")).unwrap();
        assert_eq!(files.plots.len(), 1);
        assert!(files.plots[0].exists());
    }

    #[test]
    fn unknown_run_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let reg = Registry::open(dir.path()).unwrap();
        assert!(report(&reg, &["ghost".into()], dir.path()).is_err());
    }
}
