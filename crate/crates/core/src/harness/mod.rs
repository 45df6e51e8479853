//! Synthetic data, baselines, sweeps and run bookkeeping.

pub mod ablation;
pub mod bags;
pub mod desk;
pub mod matrix;
pub mod report;
pub mod run;
pub mod slide;
pub mod supervised;
pub mod synth;
pub mod transfer;

pub use bags::{synth_bags, BagSpec, SynthBags};
pub use synth::{synth_artifact_set, synth_tile, synth_tiles, ArtifactKind, ClassTexture, Nuisance, Pattern, SlideRules, SyntheticSpec};
pub use slide::{synth_slide, Cell, SynthSlide};
pub use supervised::{supervised_train, SupervisedConfig, SupervisedEpoch, SupervisedModel, SupervisedOutcome};
pub use run::{Registry, RunRecord, RunStatus, RUNS_DIR_ENV};
pub use ablation::{ablation, apply_axis, write_ablation, AblationAxis, AblationCell, AblationReport};
pub use desk::{loss_variance, probe_encoder, random_baseline, ssl_cell, DeskConfig, SslCell, DESK_OUT_SIZE};
pub use matrix::{experiment_matrix, resolve_rows, write_matrix_csv, CellStatus, MatrixCell, MatrixConfig, MatrixReport, MatrixRow};
pub use report::{report, ReportFiles};
pub use transfer::{fov_spec, transfer_matrix, write_transfer, TransferCell, TransferReport};
