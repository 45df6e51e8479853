use crate::bt_core::Encoder;
use crate::error::Result;
use crate::eval_linear::{embed_tensors, EvalPreprocess};
use crate::augment::eval_transform;
use crate::slide_ingest::Tile;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileCoord {
    pub x: u64,
    pub y: u64,
    pub side: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBag {
    pub slide_id: String,
    pub instances: Array2<f64>,
    pub tile_coords: Vec<TileCoord>,
    /// Empty until the bag has been scored.
    pub attention: Array1<f64>,
    pub slide_scores: Array1<f64>,
    pub label: usize,
}

impl AttentionBag {
    pub fn new(slide_id: impl Into<String>, instances: Array2<f64>, tile_coords: Vec<TileCoord>, label: usize) -> Self {
        Self {
            slide_id: slide_id.into(),
            instances,
            tile_coords,
            attention: Array1::zeros(0),
            slide_scores: Array1::zeros(0),
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The tiles of one slide with its class index.
pub struct SlideTiles {
    pub slide_id: String,
    pub label: usize,
    pub tiles: Vec<Tile>,
}

/// Embeds every slide's tiles with the frozen encoder. Slides without tiles
/// are skipped and their ids returned.
pub fn bag_assemble(slides: &[SlideTiles], encoder: &mut Encoder, pre: &EvalPreprocess) -> Result<(Vec<AttentionBag>, Vec<String>)> {
    let mut bags = Vec::new();
    let mut skipped = Vec::new();
    for s in slides {
        if s.tiles.is_empty() {
            log::warn!("slide {} has no tiles; skipped", s.slide_id);
            skipped.push(s.slide_id.clone());
            continue;
        }
        let views: Vec<_> = s.tiles.par_iter().map(|t| eval_transform(&t.image, pre.size, pre.mean, pre.std)).collect();
        let instances = embed_tensors(encoder, &views, pre.batch_size)?;
        let coords = s
            .tiles
            .iter()
            .map(|t| TileCoord { x: t.record.origin_xy[0], y: t.record.origin_xy[1], side: t.record.side_px })
            .collect();
        bags.push(AttentionBag::new(s.slide_id.clone(), instances, coords, s.label));
    }
    Ok((bags, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::{IMAGENET_MEAN, IMAGENET_STD};
    use crate::bt_core::{encoder_registry, EncoderSpec};
    use crate::slide_ingest::{RoiMembership, TileRecord};
    use image::{Rgb, RgbImage};

    fn tile(x: u64, shade: u8) -> Tile {
        Tile {
            record: TileRecord {
                slide_id: "s".into(),
                origin_xy: [x, 0],
                fov_microns: 8.0,
                side_px: 16,
                class_label: "TA".into(),
                roi_membership: RoiMembership::OutRoi,
                tissue_score: 1.0,
            },
            image: RgbImage::from_fn(16, 16, |i, j| Rgb([shade, (i * 9) as u8, (j * 5) as u8])),
        }
    }

    #[test]
    fn assemble_and_skip() {
        let mut enc = encoder_registry(&EncoderSpec::small_conv(), 16, 0).unwrap();
        let slides = vec![
            SlideTiles { slide_id: "one".into(), label: 0, tiles: vec![tile(0, 10)] },
            SlideTiles { slide_id: "none".into(), label: 1, tiles: vec![] },
            SlideTiles { slide_id: "dup".into(), label: 1, tiles: vec![tile(0, 50), tile(16, 50), tile(32, 90)] },
        ];
        let pre = EvalPreprocess::new(16, (IMAGENET_MEAN, IMAGENET_STD));
        let (bags, skipped) = bag_assemble(&slides, &mut enc, &pre).unwrap();
        assert_eq!(skipped, vec!["none".to_string()]);
        assert_eq!(bags.len() + skipped.len(), slides.len());
        assert_eq!(bags[0].len(), 1);
        assert_eq!(bags[1].instances.row(0), bags[1].instances.row(1));
        assert_eq!(bags[1].tile_coords[2], TileCoord { x: 32, y: 0, side: 16 });
    }
}
