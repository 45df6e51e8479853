//! Slide-level classification with gated-attention multiple-instance
//! learning over frozen tile embeddings.

pub mod bags;
pub mod heatmap;
pub mod model;
pub mod train;

pub use bags::{bag_assemble, AttentionBag, SlideTiles, TileCoord};
pub use heatmap::{heatmap_export, HeatmapFiles, HEATMAP_DOWNSAMPLE, TOP_K};
pub use model::{MILConfig, MilModel};
pub use train::{predict_slide, slide_split, train_mil, MilEpoch, MilOutcome, SlidePrediction};
