use crate::error::Result;
use image::{Rgb, RgbImage};
use std::path::Path;

/// Access to a slide's base-level pixels. Pyramidal formats can implement
/// this over their own level structure.
pub trait SlideReader: Sync {
    fn dimensions(&self) -> (u64, u64);

    /// Base-level region, clipped to the slide; pixels outside are white.
    fn read_region(&self, x: u64, y: u64, w: u32, h: u32) -> RgbImage;

    /// Box-averaged thumbnail with one pixel per `downsample × downsample`
    /// base block (partial edge blocks dropped).
    fn thumbnail(&self, downsample: u32) -> RgbImage;
}

/// A slide held as a single in-memory raster (PNG or any decodable format).
pub struct RasterSlide {
    image: RgbImage,
}

impl RasterSlide {
    pub fn new(image: RgbImage) -> Self {
        Self { image }
    }

    pub fn open(path: &Path) -> Result<Self> {
        Ok(Self { image: image::open(path)?.to_rgb8() })
    }
}

impl SlideReader for RasterSlide {
    fn dimensions(&self) -> (u64, u64) {
        (self.image.width() as u64, self.image.height() as u64)
    }

    fn read_region(&self, x: u64, y: u64, w: u32, h: u32) -> RgbImage {
        let (iw, ih) = self.dimensions();
        RgbImage::from_fn(w, h, |dx, dy| {
            let (sx, sy) = (x + dx as u64, y + dy as u64);
            if sx < iw && sy < ih {
                *self.image.get_pixel(sx as u32, sy as u32)
            } else {
                Rgb([255, 255, 255])
            }
        })
    }

    fn thumbnail(&self, downsample: u32) -> RgbImage {
        let d = downsample.max(1);
        let (w, h) = (self.image.width() / d, self.image.height() / d);
        let n = (d * d) as u32;
        RgbImage::from_fn(w.max(1), h.max(1), |tx, ty| {
            let mut acc = [0u32; 3];
            for y in ty * d..((ty + 1) * d).min(self.image.height()) {
                for x in tx * d..((tx + 1) * d).min(self.image.width()) {
                    let p = self.image.get_pixel(x, y);
                    for c in 0..3 {
                        acc[c] += p[c] as u32;
                    }
                }
            }
            Rgb(acc.map(|a| ((a + n / 2) / n) as u8))
        })
    }
}
