//! Slide tiling: tissue detection, grid extraction at a field of view, ROI
//! labels, the artifact filter and dataset export.

pub mod export;
pub mod filter;
pub mod geometry;
pub mod manifest;
pub mod reader;
pub mod tissue;

pub use export::{export_dataset, load_tile_dataset, read_manifest, MANIFEST_NAME};
pub use filter::{filter_tiles, train_artifact_filter, ArtifactFilterModel, FilterConfig, FilterReport, Tile};
pub use manifest::{load_manifests, side_px, Polygon, RoiMembership, SlideManifest, TileRecord, DEFAULT_FOVS};
pub use reader::{RasterSlide, SlideReader};
pub use tissue::{grid_tiles, otsu_threshold, roi_membership, tissue_mask, TissueMask};

use crate::error::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileConfig {
    pub fov_microns: f64,
    pub min_tissue_frac: f64,
    /// Base pixels per thumbnail pixel for the tissue mask.
    pub thumb_downsample: u32,
    /// Resize extracted tiles to this side; keep base resolution when `None`.
    pub out_size: Option<u32>,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self { fov_microns: 410.0, min_tissue_frac: 0.5, thumb_downsample: 16, out_size: None }
    }
}

/// Mask, grid and ROI-label one slide, then read tile pixels in parallel.
pub fn tile_slide(manifest: &SlideManifest, reader: &dyn SlideReader, cfg: &TileConfig) -> Result<Vec<Tile>> {
    manifest.validate()?;
    let thumb = reader.thumbnail(cfg.thumb_downsample);
    let mask = tissue_mask(&thumb, cfg.thumb_downsample as f64)?;
    let records = grid_tiles(manifest, reader.dimensions(), cfg.fov_microns, &mask, cfg.min_tissue_frac)?;
    Ok(records
        .into_par_iter()
        .map(|record| {
            let s = record.side_px as u32;
            let mut image = reader.read_region(record.origin_xy[0], record.origin_xy[1], s, s);
            if let Some(o) = cfg.out_size {
                image = crate::augment::kernels::resize(&image, o, o);
            }
            Tile { record, image }
        })
        .collect())
}
