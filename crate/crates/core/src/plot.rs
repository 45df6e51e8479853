//! Minimal raster charts (no text rendering): scatter, line and bar plots.

use crate::error::Result;
use image::{Rgb, RgbImage};
use std::path::Path;

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

/// Blue (t = 0) to red (t = 1).
pub fn ramp(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    Rgb([(255.0 * t).round() as u8, (64.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8, (255.0 * (1.0 - t)).round() as u8])
}

pub struct Canvas {
    pub img: RgbImage,
    margin: u32,
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

impl Canvas {
    pub fn new(w: u32, h: u32) -> Self {
        let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
        let margin = 20;
        for x in margin..w - margin {
            img.put_pixel(x, h - margin, Rgb([0, 0, 0]));
        }
        for y in margin..h - margin {
            img.put_pixel(margin, y, Rgb([0, 0, 0]));
        }
        Self { img, margin }
    }

    fn to_px(&self, x: f64, y: f64, xr: (f64, f64), yr: (f64, f64)) -> (i64, i64) {
        let (w, h) = (self.img.width() as f64, self.img.height() as f64);
        let m = self.margin as f64 + 4.0;
        let px = m + (x - xr.0) / (xr.1 - xr.0) * (w - 2.0 * m);
        let py = h - m - (y - yr.0) / (yr.1 - yr.0) * (h - 2.0 * m);
        (px.round() as i64, py.round() as i64)
    }

    fn dot(&mut self, x: i64, y: i64, r: i64, c: Rgb<u8>) {
        for dy in -r..=r {
            for dx in -r..=r {
                let (px, py) = (x + dx, y + dy);
                if px >= 0 && py >= 0 && (px as u32) < self.img.width() && (py as u32) < self.img.height() {
                    self.img.put_pixel(px as u32, py as u32, c);
                }
            }
        }
    }

    pub fn scatter(&mut self, pts: &[(f64, f64, usize)], palette: &[[u8; 3]]) {
        let xr = bounds(pts.iter().map(|p| p.0));
        let yr = bounds(pts.iter().map(|p| p.1));
        for &(x, y, c) in pts {
            let (px, py) = self.to_px(x, y, xr, yr);
            self.dot(px, py, 1, Rgb(palette[c % palette.len()]));
        }
    }

    pub fn lines(&mut self, series: &[Vec<(f64, f64)>], palette: &[[u8; 3]]) {
        let xr = bounds(series.iter().flatten().map(|p| p.0));
        let yr = bounds(series.iter().flatten().map(|p| p.1));
        for (s, pts) in series.iter().enumerate() {
            let c = Rgb(palette[s % palette.len()]);
            for w in pts.windows(2) {
                let (x0, y0) = self.to_px(w[0].0, w[0].1, xr, yr);
                let (x1, y1) = self.to_px(w[1].0, w[1].1, xr, yr);
                let n = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
                for t in 0..=n {
                    self.dot(x0 + (x1 - x0) * t / n, y0 + (y1 - y0) * t / n, 0, c);
                }
            }
            if pts.len() == 1 {
                let (x, y) = self.to_px(pts[0].0, pts[0].1, xr, yr);
                self.dot(x, y, 1, c);
            }
        }
    }

    pub fn bars(&mut self, values: &[f64], palette: &[[u8; 3]]) {
        if values.is_empty() {
            return;
        }
        let hi = values.iter().copied().filter(|v| v.is_finite()).fold(0.0f64, f64::max).max(1e-12);
        let (w, h) = (self.img.width() as f64, self.img.height() as f64);
        let m = self.margin as f64 + 4.0;
        let slot = (w - 2.0 * m) / values.len() as f64;
        for (i, &v) in values.iter().enumerate() {
            let top = h - m - (v.max(0.0) / hi) * (h - 2.0 * m);
            let c = Rgb(palette[i % palette.len()]);
            for x in (m + slot * i as f64 + slot * 0.15) as u32..(m + slot * (i as f64 + 0.85)) as u32 {
                for y in top.max(0.0) as u32..(h - m) as u32 {
                    self.img.put_pixel(x, y, c);
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.img.save(path)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_ends() {
        assert_eq!(ramp(0.0), Rgb([0, 0, 255]));
        assert_eq!(ramp(1.0), Rgb([255, 0, 0]));
        assert_eq!(ramp(f64::NAN), ramp(0.0));
    }

    #[test]
    fn drawing_touches_pixels() {
        let mut c = Canvas::new(100, 80);
        c.lines(&[vec![(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)]], &PALETTE);
        c.bars(&[1.0, 3.0], &PALETTE[2..]);
        c.scatter(&[(0.0, 0.0, 3)], &PALETTE);
        let colored = c.img.pixels().filter(|p| p.0 != [255, 255, 255] && p.0 != [0, 0, 0]).count();
        assert!(colored > 50);
    }
}
