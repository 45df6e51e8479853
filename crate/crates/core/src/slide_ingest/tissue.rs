use super::geometry::{union_area_in_rect, Rect};
use super::manifest::{side_px, RoiMembership, SlideManifest, TileRecord};
use crate::error::{Error, Result};
use image::RgbImage;
use ndarray::Array2;

/// `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn gray(p: &image::Rgb<u8>) -> u8 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8
}

pub fn histogram(img: &RgbImage) -> [u64; 256] {
    let mut h = [0u64; 256];
    for p in img.pixels() {
        h[gray(p) as usize] += 1;
    }
    h
}

/// Otsu threshold over `0..=255`, lower class `gray ≤ t`; among the thresholds
/// between the first and last occupied bins the smallest maximizer wins.
/// Scores are compared exactly in integers for histograms below 2^28
/// pixels.
pub fn otsu_threshold(hist: &[u64; 256]) -> Result<u8> {
    let first = hist.iter().position(|&c| c > 0).ok_or(Error::EmptyHistogram)?;
    let last = hist.iter().rposition(|&c| c > 0).unwrap();
    let total: u128 = hist.iter().map(|&c| c as u128).sum();
    let sum: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let exact = total < (1 << 28);
    let (mut w0, mut s0) = (0u128, 0u128);
    let mut best_t = first;
    let (mut best_n, mut best_d) = (0u128, 1u128);
    let mut best_f = 0.0f64;
    for t in 0..=last {
        w0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let w1 = total - w0;
        if t < first || w1 == 0 {
            continue;
        }
        // w0·w1·(μ0 − μ1)² · total² = (s0·total − sum·w0)² / (w0·w1)
        let diff = (s0 * total).abs_diff(sum * w0);
        if exact {
            let (n, d) = (diff * diff, w0 * w1);
            if n * best_d > best_n * d {
                (best_n, best_d, best_t) = (n, d, t);
            }
        } else {
            let f = (diff as f64).powi(2) / (w0 as f64 * w1 as f64);
            if f > best_f {
                (best_f, best_t) = (f, t);
            }
        }
    }
    Ok(best_t as u8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueMask {
    /// `grid[[y, x]]` at thumbnail resolution.
    pub grid: Array2<bool>,
    pub threshold: u8,
    /// Base-level pixels per thumbnail pixel.
    pub downsample: f64,
}

impl TissueMask {
    pub fn tissue_fraction(&self) -> f64 {
        let n = self.grid.len().max(1) as f64;
        self.grid.iter().filter(|&&v| v).count() as f64 / n
    }

    /// Fraction of a base-level rectangle covered by tissue pixels, weighting
    /// each mask pixel by its overlap area.
    pub fn fraction_in(&self, r: Rect) -> f64 {
        let ds = self.downsample;
        let (h, w) = self.grid.dim();
        let (gx0, gx1) = ((r.x0 / ds).floor().max(0.0) as usize, ((r.x1 / ds).ceil() as usize).min(w));
        let (gy0, gy1) = ((r.y0 / ds).floor().max(0.0) as usize, ((r.y1 / ds).ceil() as usize).min(h));
        let mut covered = 0.0;
        for gy in gy0..gy1 {
            let oy = ((gy + 1) as f64 * ds).min(r.y1) - (gy as f64 * ds).max(r.y0);
            for gx in gx0..gx1 {
                if self.grid[[gy, gx]] {
                    let ox = ((gx + 1) as f64 * ds).min(r.x1) - (gx as f64 * ds).max(r.x0);
                    covered += ox.max(0.0) * oy.max(0.0);
                }
            }
        }
        covered / r.area()
    }
}

/// Tissue is darker than the glass: `gray ≤ t`. A histogram with a single
/// occupied level has no split and yields an empty mask.
pub fn tissue_mask(thumbnail: &RgbImage, downsample: f64) -> Result<TissueMask> {
    let hist = histogram(thumbnail);
    let threshold = otsu_threshold(&hist)?;
    let bimodal = hist.iter().filter(|&&c| c > 0).count() > 1;
    let (w, h) = thumbnail.dimensions();
    let grid = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        bimodal && gray(thumbnail.get_pixel(x as u32, y as u32)) <= threshold
    });
    Ok(TissueMask { grid, threshold, downsample })
}

/// Non-overlapping grid of `round(fov / mpp)`-pixel cells inside the slide,
/// keeping cells whose tissue fraction reaches `min_tissue_frac`. Records
/// come back in (y, x) order with ROI membership filled in and
/// `tissue_score` 1 until a filter scores them.
pub fn grid_tiles(
    manifest: &SlideManifest,
    slide_dims: (u64, u64),
    fov_microns: f64,
    mask: &TissueMask,
    min_tissue_frac: f64,
) -> Result<Vec<TileRecord>> {
    if !(0.0..=1.0).contains(&min_tissue_frac) {
        return Err(Error::InvalidConfig(format!("min_tissue_frac must lie in [0, 1], got {min_tissue_frac}")));
    }
    let side = side_px(fov_microns, manifest.mpp)?;
    let (w, h) = slide_dims;
    let mut out = Vec::new();
    for ty in 0..h / side {
        for tx in 0..w / side {
            let (x, y) = (tx * side, ty * side);
            let rect = Rect { x0: x as f64, y0: y as f64, x1: (x + side) as f64, y1: (y + side) as f64 };
            let frac = mask.fraction_in(rect);
            if frac >= min_tissue_frac {
                let mut rec = TileRecord {
                    slide_id: manifest.slide_id.clone(),
                    origin_xy: [x, y],
                    fov_microns,
                    side_px: side,
                    class_label: manifest.class_label.clone(),
                    roi_membership: RoiMembership::OutRoi,
                    tissue_score: 1.0,
                };
                rec.roi_membership = roi_membership(&rec, manifest)?;
                out.push(rec);
            }
        }
    }
    Ok(out)
}

pub const ROI_OVERLAP: f64 = 0.5;

/// `in_roi` when at least half the tile area lies inside the union of the
/// slide's polygons; `normal_slide` for polygon-free Normal slides.
pub fn roi_membership(tile: &TileRecord, manifest: &SlideManifest) -> Result<RoiMembership> {
    for p in &manifest.roi_polygons {
        super::geometry::validate_polygon(p)?;
    }
    if manifest.roi_polygons.is_empty() && manifest.is_normal() {
        return Ok(RoiMembership::NormalSlide);
    }
    let [x, y] = tile.origin_xy;
    let s = tile.side_px as f64;
    let rect = Rect { x0: x as f64, y0: y as f64, x1: x as f64 + s, y1: y as f64 + s };
    let frac = union_area_in_rect(&manifest.roi_polygons, rect) / rect.area();
    Ok(if frac >= ROI_OVERLAP { RoiMembership::InRoi } else { RoiMembership::OutRoi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    /// Direct definition: class weights and sums, variance w0·w1·(μ0 − μ1)²
    /// kept as an exact fraction.
    fn between_class(hist: &[u64; 256], t: usize) -> (u128, u128) {
        let w0: u128 = hist[..=t].iter().map(|&c| c as u128).sum();
        let w1: u128 = hist[t + 1..].iter().map(|&c| c as u128).sum();
        if w0 == 0 || w1 == 0 {
            return (0, 1);
        }
        let s0: u128 = hist[..=t].iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
        let s1: u128 = hist[t + 1..].iter().enumerate().map(|(i, &c)| (i + t + 1) as u128 * c as u128).sum();
        // μ0 − μ1 = (s0·w1 − s1·w0) / (w0·w1)
        let diff = (s0 * w1).abs_diff(s1 * w0);
        (diff * diff, w0 * w1)
    }

    fn exhaustive(hist: &[u64; 256]) -> u8 {
        let first = hist.iter().position(|&c| c > 0).unwrap();
        let last = hist.iter().rposition(|&c| c > 0).unwrap();
        let mut best = (first, (0u128, 1u128));
        for t in first..=last {
            let (n, d) = between_class(hist, t);
            // n/d > bn/bd  ⇔  n·bd > bn·d (exact integer comparison)
            let (bn, bd) = best.1;
            if n * bd > bn * d {
                best = (t, (n, d));
            }
        }
        best.0 as u8
    }

    #[test]
    fn otsu_examples() {
        let mut h = [0u64; 256];
        h[10] = 100;
        assert_eq!(otsu_threshold(&h).unwrap(), 10);
        let mut h = [0u64; 256];
        h[50] = 500;
        h[200] = 500;
        let t = otsu_threshold(&h).unwrap();
        assert_eq!(t, exhaustive(&h));
        assert!((50..=199).contains(&t));
        let h = [7u64; 256];
        assert_eq!(otsu_threshold(&h).unwrap(), exhaustive(&h));
        let err = otsu_threshold(&[0; 256]).unwrap_err();
        assert_eq!(err.to_string(), "empty histogram");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn otsu_matches_exhaustive(bins in prop::collection::vec(0u64..50, 256), sparse in any::<bool>()) {
            let mut h = [0u64; 256];
            for (i, b) in bins.iter().enumerate() {
                h[i] = if sparse && b % 3 != 0 { 0 } else { *b };
            }
            if h.iter().all(|&c| c == 0) { h[0] = 1; }
            prop_assert_eq!(otsu_threshold(&h).unwrap(), exhaustive(&h));
        }
    }

    #[test]
    fn masks() {
        let white = RgbImage::from_pixel(16, 16, Rgb([255, 255, 255]));
        assert!(tissue_mask(&white, 1.0).unwrap().grid.iter().all(|&v| !v));
        let halves = RgbImage::from_fn(16, 10, |x, _| if x < 8 { Rgb([40, 40, 40]) } else { Rgb([250, 250, 250]) });
        let m = tissue_mask(&halves, 1.0).unwrap();
        for ((_, x), &v) in m.grid.indexed_iter() {
            assert_eq!(v, x < 8);
        }
    }

    fn slide(class: &str, polys: Vec<Vec<[f64; 2]>>) -> SlideManifest {
        SlideManifest {
            slide_id: "s".into(),
            class_label: class.into(),
            mpp: 0.4,
            level_downsamples: vec![1.0],
            roi_polygons: polys,
            image_source: "s.png".into(),
        }
    }

    fn full_mask(w: usize, h: usize, ds: f64) -> TissueMask {
        TissueMask { grid: Array2::from_elem((h, w), true), threshold: 128, downsample: ds }
    }

    #[test]
    fn full_tissue_slide_grid() {
        let tiles = grid_tiles(&slide("Normal", vec![]), (8000, 8000), 800.0, &full_mask(250, 250, 32.0), 0.5).unwrap();
        assert_eq!(tiles.len(), 16);
        assert!(tiles.iter().all(|t| t.side_px == 2000 && t.roi_membership == RoiMembership::NormalSlide));
        let empty = TissueMask { grid: Array2::from_elem((250, 250), false), ..full_mask(1, 1, 32.0) };
        assert!(grid_tiles(&slide("Normal", vec![]), (8000, 8000), 800.0, &empty, 0.5).unwrap().is_empty());
        assert!(grid_tiles(&slide("Normal", vec![]), (8000, 8000), 0.1, &empty, 0.0).is_err());
    }

    fn rec(x: u64, y: u64, side: u64) -> TileRecord {
        TileRecord {
            slide_id: "s".into(),
            origin_xy: [x, y],
            fov_microns: side as f64 * 0.4,
            side_px: side,
            class_label: "HP".into(),
            roi_membership: RoiMembership::OutRoi,
            tissue_score: 1.0,
        }
    }

    #[test]
    fn roi_rules() {
        let sq = vec![[0.0, 0.0], [100.0, 0.0], [100.0, 100.0], [0.0, 100.0]];
        let s = slide("HP", vec![sq]);
        assert_eq!(roi_membership(&rec(10, 10, 50), &s).unwrap(), RoiMembership::InRoi);
        assert_eq!(roi_membership(&rec(200, 200, 50), &s).unwrap(), RoiMembership::OutRoi);
        assert_eq!(roi_membership(&rec(75, 0, 50), &s).unwrap(), RoiMembership::InRoi);
        assert_eq!(roi_membership(&rec(76, 0, 50), &s).unwrap(), RoiMembership::OutRoi);
        assert_eq!(roi_membership(&rec(0, 0, 50), &slide("HP", vec![])).unwrap(), RoiMembership::OutRoi);
        let bow = slide("HP", vec![vec![[0.0, 0.0], [2.0, 2.0], [2.0, 0.0], [0.0, 2.0]]]);
        assert!(roi_membership(&rec(0, 0, 1), &bow).unwrap_err().to_string().contains("invalid polygon"));
    }

    proptest! {
        #[test]
        fn roi_invariant_under_reversal_and_translation(
            pts in prop::collection::vec((0i64..200, 0i64..200), 3..4),
            x in 0u64..200, y in 0u64..200, side in 1u64..120, dx in 0u64..500, dy in 0u64..500
        ) {
            let poly: Vec<[f64; 2]> = pts.iter().map(|&(a, b)| [a as f64, b as f64]).collect();
            prop_assume!(crate::slide_ingest::geometry::validate_polygon(&poly).is_ok());
            let base = roi_membership(&rec(x, y, side), &slide("TA", vec![poly.clone()])).unwrap();
            let mut rev = poly.clone();
            rev.reverse();
            prop_assert_eq!(roi_membership(&rec(x, y, side), &slide("TA", vec![rev])).unwrap(), base);
            let moved: Vec<[f64; 2]> = poly.iter().map(|p| [p[0] + dx as f64, p[1] + dy as f64]).collect();
            prop_assert_eq!(roi_membership(&rec(x + dx, y + dy, side), &slide("TA", vec![moved])).unwrap(), base);
        }

        #[test]
        fn grid_tiles_are_disjoint(w in 1u64..60, h in 1u64..60, side_um in 1u64..40, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let grid = Array2::from_shape_fn((h as usize, w as usize), |_| rng.random_bool(0.6));
            let mask = TissueMask { grid, threshold: 0, downsample: 4.0 };
            let s = SlideManifest { mpp: 1.0, ..slide("Normal", vec![]) };
            let tiles = grid_tiles(&s, (w * 4, h * 4), side_um as f64, &mask, 0.3).unwrap();
            let area: u64 = tiles.iter().map(|t| t.side_px * t.side_px).sum();
            prop_assert!(area <= w * h * 16);
            for (i, a) in tiles.iter().enumerate() {
                prop_assert!(a.origin_xy[0] + a.side_px <= w * 4 && a.origin_xy[1] + a.side_px <= h * 4);
                for b in &tiles[i + 1..] {
                    let sep = a.origin_xy[0] + a.side_px <= b.origin_xy[0] || b.origin_xy[0] + b.side_px <= a.origin_xy[0]
                        || a.origin_xy[1] + a.side_px <= b.origin_xy[1] || b.origin_xy[1] + b.side_px <= a.origin_xy[1];
                    prop_assert!(sep);
                }
            }
            let bigger = grid_tiles(&s, (w * 4, h * 4), side_um as f64 * 2.0, &mask, 0.3).unwrap();
            prop_assert!(tiles.len() >= bigger.len());
        }
    }
}
