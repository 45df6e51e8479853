//! Frozen-encoder evaluation: feature extraction, linear probing, metrics,
//! eval-phase mixing and 2-D projections.

pub mod extract;
pub mod metrics;
pub mod mix;
pub mod probe;
pub mod projection;

pub use extract::{embed_tensors, extract_embeddings, preprocess, EvalPreprocess};
pub use metrics::{binary_auc, compute_metrics, confusion_matrix, roc_curve, ClassStats, MetricsRecord};
pub use mix::{cutmix, eval_phase_mix, mixup, MixConfig, MixMode, Rect};
pub use probe::{fit_head, train_probe, train_probe_repeated, LinearHead, ProbeConfig, ProbeOutcome, ProbeSummary};
pub use projection::{project_2d, write_projection, Projection};
