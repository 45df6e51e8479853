use super::bags::AttentionBag;
use crate::error::{Error, Result};
use crate::plot::ramp;
use image::{Rgb, RgbImage};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const HEATMAP_DOWNSAMPLE: f64 = 32.0;
pub const TOP_K: usize = 6;
const MAX_ALPHA: f64 = 0.6;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapFiles {
    pub overlay: PathBuf,
    pub csv: PathBuf,
    pub metadata: PathBuf,
    pub top_tiles: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Row {
    x: u64,
    y: u64,
    side: u64,
    attention: f64,
}

/// Blends each tile's attention colour onto the thumbnail with opacity
/// proportional to attention relative to the bag maximum, and writes the
/// per-tile CSV plus the `k` most attended tiles (when pixels are supplied).
pub fn heatmap_export(
    bag: &AttentionBag,
    thumbnail: &RgbImage,
    downsample: f64,
    tile_images: Option<&[RgbImage]>,
    k: usize,
    out_dir: &Path,
) -> Result<HeatmapFiles> {
    let attn = &bag.attention;
    if attn.len() != bag.tile_coords.len() {
        return Err(Error::DimensionMismatch(format!("{} attention values for {} tiles", attn.len(), bag.tile_coords.len())));
    }
    let (tw, th) = thumbnail.dimensions();
    let rects: Vec<(u32, u32, u32, u32)> = bag
        .tile_coords
        .iter()
        .map(|c| {
            let x0 = (c.x as f64 / downsample).floor();
            let y0 = (c.y as f64 / downsample).floor();
            let x1 = ((c.x + c.side) as f64 / downsample).ceil();
            let y1 = ((c.y + c.side) as f64 / downsample).ceil();
            if x1 > tw as f64 || y1 > th as f64 {
                return Err(Error::CoordOutOfBounds { tile: format!("{}_{}_{}", bag.slide_id, c.x, c.y) });
            }
            Ok((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
        })
        .collect::<Result<_>>()?;
    std::fs::create_dir_all(out_dir)?;
    let max = attn.iter().copied().fold(0.0f64, f64::max);
    let mut overlay = thumbnail.clone();
    for (&(x0, y0, x1, y1), &a) in rects.iter().zip(attn) {
        let t = if max > 0.0 { a / max } else { 0.0 };
        let alpha = MAX_ALPHA * t;
        if alpha <= 0.0 {
            continue;
        }
        let c = ramp(t);
        for y in y0..y1 {
            for x in x0..x1 {
                let p = overlay.get_pixel_mut(x, y);
                *p = Rgb([0, 1, 2].map(|i| (p[i] as f64 * (1.0 - alpha) + c[i] as f64 * alpha).round() as u8));
            }
        }
    }
    let stem = &bag.slide_id;
    let overlay_path = out_dir.join(format!("{stem}_heatmap.png"));
    overlay.save(&overlay_path)?;
    let csv_path = out_dir.join(format!("{stem}_attention.csv"));
    let mut w = csv::Writer::from_path(&csv_path)?;
    for (c, &a) in bag.tile_coords.iter().zip(attn) {
        w.serialize(Row { x: c.x, y: c.y, side: c.side, attention: a })?;
    }
    w.flush()?;
    let metadata = out_dir.join(format!("{stem}_heatmap.json"));
    let meta = serde_json::json!({
        "slide_id": stem,
        "downsample": downsample,
        "color_ramp": "linear blue (0,0,255) to red (255,0,0), green 64*(1-|2t-1|), t = attention / max attention",
        "max_alpha": MAX_ALPHA,
    });
    std::fs::write(&metadata, serde_json::to_string_pretty(&meta)?)?;
    let mut top_tiles = Vec::new();
    if let Some(images) = tile_images {
        let mut order: Vec<usize> = (0..attn.len()).collect();
        order.sort_by(|&a, &b| attn[b].total_cmp(&attn[a]).then(a.cmp(&b)));
        for (rank, &i) in order.iter().take(k).enumerate() {
            let c = bag.tile_coords[i];
            let p = out_dir.join(format!("{stem}_top{}_{}_{}.png", rank + 1, c.x, c.y));
            images[i].save(&p)?;
            top_tiles.push(p);
        }
    }
    Ok(HeatmapFiles { overlay: overlay_path, csv: csv_path, metadata, top_tiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mil_slide::bags::TileCoord;
    use ndarray::{Array1, Array2};

    fn bag(attn: Vec<f64>) -> AttentionBag {
        let coords = (0..attn.len() as u64).map(|i| TileCoord { x: i * 64, y: 0, side: 64 }).collect();
        let mut b = AttentionBag::new("s", Array2::zeros((attn.len(), 2)), coords, 0);
        b.attention = Array1::from(attn);
        b
    }

    fn colored_tiles(img: &RgbImage, n: u32) -> Vec<[u8; 3]> {
        (0..n).map(|i| img.get_pixel(i * 2, 0).0).collect()
    }

    #[test]
    fn uniform_and_single_hot() {
        let dir = tempfile::tempdir().unwrap();
        let thumb = RgbImage::from_pixel(8, 2, Rgb([200, 200, 200]));
        let f = heatmap_export(&bag(vec![0.25; 4]), &thumb, 32.0, None, 6, dir.path()).unwrap();
        let img = image::open(&f.overlay).unwrap().to_rgb8();
        let cols = colored_tiles(&img, 4);
        assert!(cols.iter().all(|c| *c == cols[0]) && cols[0] != [200, 200, 200]);
        let f = heatmap_export(&bag(vec![0.0, 1.0, 0.0, 0.0]), &thumb, 32.0, None, 6, dir.path()).unwrap();
        let img = image::open(&f.overlay).unwrap().to_rgb8();
        let changed = colored_tiles(&img, 4).iter().filter(|c| **c != [200, 200, 200]).count();
        assert_eq!(changed, 1);
        let text = std::fs::read_to_string(&f.csv).unwrap();
        let total: f64 = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_bounds_names_tile() {
        let dir = tempfile::tempdir().unwrap();
        let thumb = RgbImage::new(4, 2);
        let err = heatmap_export(&bag(vec![0.5, 0.5, 0.0]), &thumb, 32.0, None, 6, dir.path()).unwrap_err();
        assert!(err.to_string().contains("s_128_0"), "{err}");
    }

    #[test]
    fn top_k_tiles() {
        let dir = tempfile::tempdir().unwrap();
        let thumb = RgbImage::new(8, 2);
        let imgs: Vec<RgbImage> = (0..4).map(|i| RgbImage::from_pixel(3, 3, Rgb([i as u8; 3]))).collect();
        let f = heatmap_export(&bag(vec![0.1, 0.4, 0.3, 0.2]), &thumb, 32.0, Some(&imgs), 2, dir.path()).unwrap();
        assert_eq!(f.top_tiles.len(), 2);
        assert!(f.top_tiles[0].to_string_lossy().contains("top1_64_0"));
    }
}
