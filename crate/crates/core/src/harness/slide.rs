//! Composite synthetic slides with weak (partial) ROI annotation.

use super::synth::{render_texture, SyntheticSpec};
use crate::seeds::derive_seed;
use crate::slide_ingest::{Polygon, SlideManifest};
use image::{Rgb, RgbImage};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Background,
    Tissue,
    Signal,
}

pub struct SynthSlide {
    pub manifest: SlideManifest,
    pub image: RgbImage,
    /// Cell layout, indexed `[row, col]`.
    pub cells: Array2<Cell>,
    /// Signal cells carrying an annotation polygon, as `(row, col)`.
    pub annotated: Vec<(usize, usize)>,
    /// Tissue pixels over all pixels.
    pub tissue_fraction: f64,
}

impl SynthSlide {
    pub fn cell_side(&self) -> u32 {
        self.image.width() / self.cells.ncols() as u32
    }

    pub fn count(&self, kind: Cell) -> usize {
        self.cells.iter().filter(|&&c| c == kind).count()
    }
}

/// Texture index used for ordinary tissue; `lesion_class` textures fill signal cells.
pub const NORMAL_TEXTURE: usize = 0;

/// Builds slide `index`. Lesion slides (`lesion_class = Some(c)`) fill a
/// `signal_fraction` of their tissue cells with class `c`'s texture and
/// annotate `annotation_coverage` of those cells, one square per cell.
/// Normal slides carry no polygons.
pub fn synth_slide(spec: &SyntheticSpec, index: usize, lesion_class: Option<usize>, mpp: f64) -> SynthSlide {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0x51de, index as u64]));
    let g = spec.slide.grid.max(1);
    let side = spec.tile_size;
    let total = g * g;

    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng);
    let n_bg = ((total as f64) * spec.slide.background_fraction).round() as usize;
    let n_bg = n_bg.min(total - 1);
    let mut cells = Array2::from_elem((g, g), Cell::Tissue);
    for &k in &order[..n_bg] {
        cells[[k / g, k % g]] = Cell::Background;
    }
    let tissue: Vec<usize> = order[n_bg..].to_vec();
    let mut annotated = Vec::new();
    if lesion_class.is_some() {
        let n_sig = (((tissue.len() as f64) * spec.slide.signal_fraction).round() as usize).clamp(1, tissue.len());
        for &k in &tissue[..n_sig] {
            cells[[k / g, k % g]] = Cell::Signal;
        }
        let n_ann = ((n_sig as f64) * spec.slide.annotation_coverage).round() as usize;
        annotated = tissue[..n_ann].iter().map(|&k| (k / g, k % g)).collect();
        annotated.sort_unstable();
    }

    let mut image = RgbImage::new(side * g as u32, side * g as u32);
    for ((r, c), &cell) in cells.indexed_iter() {
        let tile = match cell {
            Cell::Background => background(side, &mut rng),
            Cell::Tissue => render_texture(&spec.classes[NORMAL_TEXTURE], side, spec.scale, &spec.nuisance, &mut rng),
            Cell::Signal => {
                let cls = lesion_class.unwrap_or(NORMAL_TEXTURE);
                render_texture(&spec.classes[cls], side, spec.scale, &spec.nuisance, &mut rng)
            }
        };
        image::imageops::replace(&mut image, &tile, (c as u32 * side) as i64, (r as u32 * side) as i64);
    }

    // inset keeps neighbouring squares from sharing edges
    let inset = 0.5;
    let roi_polygons: Vec<Polygon> = annotated
        .iter()
        .map(|&(r, c)| {
            let (x0, y0) = ((c as u32 * side) as f64 + inset, (r as u32 * side) as f64 + inset);
            let (x1, y1) = (x0 + side as f64 - 2.0 * inset, y0 + side as f64 - 2.0 * inset);
            vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]]
        })
        .collect();

    let slide_id = format!("slide{index:03}");
    let class_label = match lesion_class {
        Some(c) => spec.classes[c].name.clone(),
        None => "Normal".to_string(),
    };
    let tissue_fraction = (total - n_bg) as f64 / total as f64;
    let manifest = SlideManifest {
        image_source: PathBuf::from(format!("{slide_id}.png")),
        slide_id,
        class_label,
        mpp,
        level_downsamples: vec![1.0],
        roi_polygons,
    };
    SynthSlide { manifest, image, cells, annotated, tissue_fraction }
}

/// Near-white glass with faint noise.
fn background<R: Rng + ?Sized>(side: u32, rng: &mut R) -> RgbImage {
    let level: f64 = rng.random_range(238.0..248.0);
    RgbImage::from_fn(side, side, |_, _| {
        let v = (level + rng.random_range(-3.0..3.0)).clamp(0.0, 255.0) as u8;
        Rgb([v, v, v.saturating_sub(1)])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_ingest::{tissue_mask, RasterSlide, SlideReader};

    fn spec() -> SyntheticSpec {
        SyntheticSpec::new(3, 1, 64, 5)
    }

    #[test]
    fn normal_slide_has_no_polygons() {
        let s = synth_slide(&spec(), 0, None, 0.5);
        assert!(s.manifest.roi_polygons.is_empty());
        assert!(s.manifest.is_normal());
        assert_eq!(s.count(Cell::Signal), 0);
        s.manifest.validate().unwrap();
    }

    #[test]
    fn annotation_covers_half_of_signal() {
        let s = synth_slide(&spec(), 1, Some(1), 0.5);
        let n_sig = s.count(Cell::Signal);
        assert!(n_sig > 0);
        let expect = ((n_sig as f64) * 0.5).round() as usize;
        assert_eq!(s.manifest.roi_polygons.len(), expect);
        // every annotated cell is signal-textured
        assert!(s.annotated.iter().all(|&(r, c)| s.cells[[r, c]] == Cell::Signal));
        s.manifest.validate().unwrap();
    }

    #[test]
    fn mask_recovers_tissue_fraction() {
        for i in 0..3 {
            let s = synth_slide(&spec(), i, Some(2), 0.5);
            let reader = RasterSlide::new(s.image.clone());
            let mask = tissue_mask(&reader.thumbnail(16), 16.0).unwrap();
            assert!((mask.tissue_fraction() - s.tissue_fraction).abs() <= 0.02, "{} vs {}", mask.tissue_fraction(), s.tissue_fraction);
        }
    }

    #[test]
    fn reproducible() {
        let a = synth_slide(&spec(), 4, Some(1), 0.5);
        let b = synth_slide(&spec(), 4, Some(1), 0.5);
        assert_eq!(a.image, b.image);
        assert_eq!(a.manifest, b.manifest);
    }
}
