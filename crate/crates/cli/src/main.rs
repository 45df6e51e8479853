//! `pathbt`: tiling, pretraining, probing, MIL and sweep commands.

mod data;
mod sweep;
mod train;

use anyhow::{Context as _, Result};
use clap::{Parser, Subcommand};
use pathbt_core::harness::{Registry, RunRecord, RunStatus};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pathbt", version, about = "Barlow Twins pretraining and evaluation for tissue tiles")]
struct Cli {
    /// Base random seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory (defaults to the run's registry directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON file with the command's configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut slides into filtered, ROI-labelled tiles.
    Tile(data::TileArgs),
    /// Write both augmented views of an image.
    AugmentPreview(data::PreviewArgs),
    /// Barlow Twins pretraining.
    Pretrain(train::PretrainArgs),
    /// Linear probe on a frozen pretrained encoder.
    Probe(train::ProbeArgs),
    /// Attention MIL slide classification with heatmaps.
    Mil(train::MilArgs),
    /// Fully supervised baseline.
    Supervised(train::SupervisedArgs),
    /// Supervised and Barlow Twins variants over datasets.
    Matrix(sweep::MatrixArgs),
    /// One-axis ablation sweep.
    Ablate(sweep::AblateArgs),
    /// Cross field-of-view transfer grid.
    Transfer(sweep::TransferArgs),
    /// Generate synthetic tiles and slides.
    Synth(data::SynthArgs),
    /// Consolidated report over runs.
    Report(sweep::ReportArgs),
}

/// Shared state for one invocation.
pub struct Ctx {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub registry: Registry,
}

impl Ctx {
    /// The `--config` file parsed as `T`, if one was given.
    pub fn read_config<T: DeserializeOwned>(&self) -> Result<Option<T>> {
        let Some(path) = &self.config else { return Ok(None) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map(Some).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn load_config<T: DeserializeOwned + Default>(&self) -> Result<T> {
        Ok(self.read_config()?.unwrap_or_default())
    }

    /// A run's output directory from either a path or a registered run id.
    pub fn locate(&self, path_or_id: &str) -> Result<PathBuf> {
        let p = Path::new(path_or_id);
        if p.is_dir() {
            return Ok(p.to_path_buf());
        }
        let rec = self.registry.load(path_or_id).with_context(|| format!("`{path_or_id}` is neither a directory nor a run id"))?;
        Ok(self.registry.output_dir(&rec))
    }

    /// Registers the run, snapshots `config` into the output directory, runs
    /// `body` and records the outcome. `body` returns whether every requested
    /// cell succeeded.
    pub fn run<C: Serialize>(&self, command: &str, config: &C, body: impl FnOnce(&Path, &mut RunRecord) -> Result<bool>) -> Result<bool> {
        let snapshot = serde_json::to_value(config)?;
        let mut rec = self.registry.begin(command, snapshot.clone())?;
        let out = match &self.out {
            Some(o) => o.clone(),
            None => self.registry.run_dir(&rec.run_id),
        };
        std::fs::create_dir_all(&out)?;
        let out = out.canonicalize()?;
        rec.output_dir = Some(out.clone());
        self.registry.save(&rec)?;
        std::fs::write(out.join("config.json"), serde_json::to_vec_pretty(&snapshot)?)?;
        rec.add_artifact("config.json");
        eprintln!("run {} -> {}", rec.run_id, out.display());
        match body(&out, &mut rec) {
            Ok(all_ok) => {
                let status = if all_ok { RunStatus::Succeeded } else { RunStatus::Failed("some cells did not complete".into()) };
                self.registry.finish(&mut rec, status)?;
                println!("{}", rec.run_id);
                Ok(all_ok)
            }
            Err(e) => {
                self.registry.finish(&mut rec, RunStatus::Failed(format!("{e:#}")))?;
                Err(e)
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    let ctx = Ctx { seed: cli.seed, out: cli.out, config: cli.config, registry: Registry::from_env("runs")? };
    match cli.command {
        Command::Tile(a) => data::tile(&ctx, a),
        Command::AugmentPreview(a) => data::augment_preview(&ctx, a),
        Command::Synth(a) => data::synth(&ctx, a),
        Command::Pretrain(a) => train::pretrain(&ctx, a),
        Command::Probe(a) => train::probe(&ctx, a),
        Command::Mil(a) => train::mil(&ctx, a),
        Command::Supervised(a) => train::supervised(&ctx, a),
        Command::Matrix(a) => sweep::matrix(&ctx, a),
        Command::Ablate(a) => sweep::ablate(&ctx, a),
        Command::Transfer(a) => sweep::transfer(&ctx, a),
        Command::Report(a) => sweep::report(&ctx, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
