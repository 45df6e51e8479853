//! Self-supervised tissue-tile representation learning: tile ingestion,
//! two-branch augmentation, Barlow Twins pretraining, linear probing,
//! attention-based slide classification and the experiment harness.

pub mod augment;
pub mod bt_core;
pub mod dataset;
pub mod error;
pub mod eval_linear;
pub mod harness;
pub mod mil_slide;
pub mod plot;
pub mod slide_ingest;
mod seeds;

pub use dataset::TileSet;
pub use error::{Error, Result};
pub use seeds::derive_seed;
