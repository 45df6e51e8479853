//! Pixel kernels on 8-bit RGB images. All randomness comes from the caller's rng.

use crate::error::{Error, Result};
use image::{Rgb, RgbImage};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn solarize(img: &RgbImage, threshold: u8) -> RgbImage {
    let mut out = img.clone();
    for v in out.iter_mut() {
        if *v >= threshold {
            *v = 255 - *v;
        }
    }
    out
}

pub fn posterize(img: &RgbImage, bits: u8) -> RgbImage {
    assert!((1..=8).contains(&bits), "posterize bits {bits} outside [1, 8]");
    let mask: u8 = !(((1u16 << (8 - bits)) - 1) as u8);
    let mut out = img.clone();
    for v in out.iter_mut() {
        *v &= mask;
    }
    out
}

pub fn hflip(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

pub fn vflip(img: &RgbImage) -> RgbImage {
    image::imageops::flip_vertical(img)
}

/// ITU-R 601 luma, rounded.
pub fn luma(p: &Rgb<u8>) -> u8 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round().clamp(0.0, 255.0) as u8
}

fn luma_f(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn grayscale(img: &RgbImage) -> RgbImage {
    let mut out = img.clone();
    for p in out.pixels_mut() {
        let l = luma(p);
        *p = Rgb([l, l, l]);
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterStrength {
    pub const ZERO: Self = Self { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0 };
}

#[derive(Clone, Copy)]
enum JitterOp {
    Brightness,
    Contrast,
    Saturation,
    Hue,
}

fn adjust_brightness(img: &mut RgbImage, f: f64) {
    for v in img.iter_mut() {
        *v = to_u8(*v as f64 * f);
    }
}

fn adjust_contrast(img: &mut RgbImage, f: f64) {
    let n = (img.width() * img.height()).max(1) as f64;
    let mean = img.pixels().map(|p| luma_f(p[0] as f64, p[1] as f64, p[2] as f64)).sum::<f64>() / n;
    for v in img.iter_mut() {
        *v = to_u8((*v as f64 - mean) * f + mean);
    }
}

fn adjust_saturation(img: &mut RgbImage, f: f64) {
    for p in img.pixels_mut() {
        let g = luma_f(p[0] as f64, p[1] as f64, p[2] as f64);
        for c in 0..3 {
            p[c] = to_u8(g + f * (p[c] as f64 - g));
        }
    }
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn adjust_hue(img: &mut RgbImage, shift: f64) {
    for p in img.pixels_mut() {
        let (h, s, v) = rgb_to_hsv(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0);
        let (r, g, b) = hsv_to_rgb(h + shift, s, v);
        *p = Rgb([to_u8(r * 255.0), to_u8(g * 255.0), to_u8(b * 255.0)]);
    }
}

/// Random brightness, contrast, saturation and hue changes applied in a random
/// order. Factors are drawn from `[max(0, 1 - s), 1 + s]`, hue shift from
/// `[-hue, hue]`; a zero strength skips its adjustment entirely.
pub fn color_jitter<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R, s: JitterStrength) -> RgbImage {
    let mut ops = [JitterOp::Brightness, JitterOp::Contrast, JitterOp::Saturation, JitterOp::Hue];
    ops.shuffle(rng);
    let mut out = img.clone();
    for op in ops {
        match op {
            JitterOp::Brightness if s.brightness > 0.0 => {
                let f = rng.random_range((1.0 - s.brightness).max(0.0)..=1.0 + s.brightness);
                adjust_brightness(&mut out, f);
            }
            JitterOp::Contrast if s.contrast > 0.0 => {
                let f = rng.random_range((1.0 - s.contrast).max(0.0)..=1.0 + s.contrast);
                adjust_contrast(&mut out, f);
            }
            JitterOp::Saturation if s.saturation > 0.0 => {
                let f = rng.random_range((1.0 - s.saturation).max(0.0)..=1.0 + s.saturation);
                adjust_saturation(&mut out, f);
            }
            JitterOp::Hue if s.hue > 0.0 => {
                let shift = rng.random_range(-s.hue..=s.hue);
                adjust_hue(&mut out, shift);
            }
            _ => {}
        }
    }
    out
}

/// Reflects a coordinate into `[0, n - 1]` without repeating the edge sample.
fn reflect(x: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let last = (n - 1) as f64;
    let period = 2.0 * last;
    let m = x.rem_euclid(period);
    if m > last {
        period - m
    } else {
        m
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-9 {
        r
    } else {
        v
    }
}

/// Bilinear sample at continuous `(x, y)` with reflection outside the image.
fn sample_reflect(img: &RgbImage, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let x = reflect(snap(x), w);
    let y = reflect(snap(y), h);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let raw = img.as_raw();
    let at = |xx: usize, yy: usize, c: usize| raw[(yy * w + xx) * 3 + c] as f64;
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = at(x0, y0, c) * (1.0 - fx) + at(x1, y0, c) * fx;
        let bot = at(x0, y1, c) * (1.0 - fx) + at(x1, y1, c) * fx;
        *o = top * (1.0 - fy) + bot * fy;
    }
    out
}

/// Rotation by `degrees` (counter-clockwise) about the image centre followed by
/// a translation of `(dx, dy)` pixels, with bilinear interpolation and
/// reflection padding.
pub fn affine_with(img: &RgbImage, degrees: f64, dx: f64, dy: f64) -> RgbImage {
    if degrees == 0.0 && dx == 0.0 && dy == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut out = RgbImage::new(w, h);
    for (x, y, p) in out.enumerate_pixels_mut() {
        // inverse map: undo translation, then rotate by -angle (image y axis points down)
        let u = x as f64 - dx - cx;
        let v = y as f64 - dy - cy;
        let sx = cos * u - sin * v + cx;
        let sy = sin * u + cos * v + cy;
        let s = sample_reflect(img, sx, sy);
        *p = Rgb([to_u8(s[0]), to_u8(s[1]), to_u8(s[2])]);
    }
    out
}

pub fn rotate<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R, max_degrees: f64) -> RgbImage {
    if max_degrees <= 0.0 {
        return img.clone();
    }
    let angle = rng.random_range(0.0..=max_degrees);
    affine_with(img, angle, 0.0, 0.0)
}

/// Random rotation in `[0, max_degrees]` composed with an integer translation
/// drawn uniformly from `±translate_frac · (W, H)`.
pub fn affine<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R, max_degrees: f64, translate_frac: [f64; 2]) -> RgbImage {
    let angle = if max_degrees > 0.0 { rng.random_range(0.0..=max_degrees) } else { 0.0 };
    let mx = translate_frac[0] * img.width() as f64;
    let my = translate_frac[1] * img.height() as f64;
    let dx = if mx > 0.0 { rng.random_range(-mx..=mx).round() } else { 0.0 };
    let dy = if my > 0.0 { rng.random_range(-my..=my).round() } else { 0.0 };
    affine_with(img, angle, dx, dy)
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = k.iter().sum();
    k.into_iter().map(|v| v / z).collect()
}

/// Separable Gaussian blur with sigma drawn from `sigma_range`.
pub fn gaussian_blur<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R, sigma_range: [f64; 2]) -> RgbImage {
    let sigma = if sigma_range[1] > sigma_range[0] { rng.random_range(sigma_range[0]..=sigma_range[1]) } else { sigma_range[0] };
    blur_with(img, sigma)
}

pub fn blur_with(img: &RgbImage, sigma: f64) -> RgbImage {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src: Vec<f64> = img.as_raw().iter().map(|&v| v as f64).collect();
    let idx = |i: i64, n: usize| reflect(i as f64, n) as usize;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                tmp[(y * w + x) * 3 + c] = k.iter().enumerate().map(|(j, kv)| kv * src[(y * w + idx(x as i64 + j as i64 - r, w)) * 3 + c]).sum();
            }
        }
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    let raw: &mut [u8] = &mut out;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v: f64 = k.iter().enumerate().map(|(j, kv)| kv * tmp[(idx(y as i64 + j as i64 - r, h) * w + x) * 3 + c]).sum();
                raw[(y * w + x) * 3 + c] = to_u8(v);
            }
        }
    }
    out
}

/// Bilinear resize of the `(x0, y0, cw, ch)` region to `out_w × out_h`
/// (half-pixel centres; same-size resize is the identity).
pub fn resize_region(img: &RgbImage, x0: u32, y0: u32, cw: u32, ch: u32, out_w: u32, out_h: u32) -> RgbImage {
    let sx = cw as f64 / out_w as f64;
    let sy = ch as f64 / out_h as f64;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut out = RgbImage::new(out_w, out_h);
    for (x, y, p) in out.enumerate_pixels_mut() {
        let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, cw as f64 - 1.0) + x0 as f64;
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, ch as f64 - 1.0) + y0 as f64;
        let xa = fx.floor() as usize;
        let ya = fy.floor() as usize;
        let xb = (xa + 1).min(w - 1).min((x0 + cw - 1) as usize);
        let yb = (ya + 1).min(h - 1).min((y0 + ch - 1) as usize);
        let tx = fx - xa as f64;
        let ty = fy - ya as f64;
        let at = |xx: usize, yy: usize, c: usize| raw[(yy * w + xx) * 3 + c] as f64;
        for c in 0..3 {
            let top = at(xa, ya, c) * (1.0 - tx) + at(xb, ya, c) * tx;
            let bot = at(xa, yb, c) * (1.0 - tx) + at(xb, yb, c) * tx;
            p[c] = to_u8(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

pub fn resize(img: &RgbImage, out_w: u32, out_h: u32) -> RgbImage {
    if img.dimensions() == (out_w, out_h) {
        return img.clone();
    }
    resize_region(img, 0, 0, img.width(), img.height(), out_w, out_h)
}

/// Random-resized crop: area fraction from `scale_range`, aspect ratio from
/// `[3/4, 4/3]` (log-uniform), ten attempts before falling back to the whole
/// image; the crop is resized to `out_size × out_size`.
pub fn crop_resize<R: Rng + ?Sized>(img: &RgbImage, rng: &mut R, out_size: u32, scale_range: [f64; 2]) -> Result<RgbImage> {
    let [lo, hi] = scale_range;
    if !(lo > 0.0 && hi <= 1.0 && lo <= hi) {
        return Err(Error::InvalidTransform {
            name: "crop_resize".into(),
            reason: format!("scale_range [{lo}, {hi}] must lie in (0, 1] with lo <= hi"),
        });
    }
    let (w, h) = img.dimensions();
    let area = (w * h) as f64;
    let (log_lo, log_hi) = ((3.0f64 / 4.0).ln(), (4.0f64 / 3.0).ln());
    for _ in 0..10 {
        let target = area * if hi > lo { rng.random_range(lo..=hi) } else { lo };
        let ratio = rng.random_range(log_lo..=log_hi).exp();
        let cw = (target * ratio).sqrt().round() as u32;
        let ch = (target / ratio).sqrt().round() as u32;
        if cw >= 1 && ch >= 1 && cw <= w && ch <= h {
            let x0 = rng.random_range(0..=w - cw);
            let y0 = rng.random_range(0..=h - ch);
            if (x0, y0, cw, ch) == (0, 0, w, h) {
                return Ok(resize(img, out_size, out_size));
            }
            return Ok(resize_region(img, x0, y0, cw, ch, out_size, out_size));
        }
    }
    Ok(resize(img, out_size, out_size))
}

/// `(v / 255 - mean) / std` per channel, CHW layout.
pub fn normalize(img: &RgbImage, mean: [f64; 3], std: [f64; 3]) -> Array3<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Array3::from_shape_fn((3, h, w), |(c, y, x)| (raw[(y * w + x) * 3 + c] as f64 / 255.0 - mean[c]) / std[c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Asymmetric test card: every pixel distinct across the image.
    fn card(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 + y * 3) as u8, (y * 11 + x) as u8, ((x * y) % 251) as u8]))
    }

    #[test]
    fn solarize_threshold_cases() {
        let img = RgbImage::from_raw(2, 1, vec![255, 249, 250, 0, 10, 251]).unwrap();
        let s = solarize(&img, 250);
        assert_eq!(s.as_raw(), &vec![0, 249, 5, 0, 10, 4]);
        let c = card(9, 7);
        assert_eq!(solarize(&solarize(&c, 0), 0), c);
        assert!(solarize(&c, 0).as_raw().iter().zip(c.as_raw()).all(|(a, b)| *a == 255 - *b));
    }

    #[test]
    fn posterize_bit_masks() {
        let img = RgbImage::from_raw(1, 1, vec![255, 37, 128]).unwrap();
        assert_eq!(posterize(&img, 8), img);
        assert_eq!(posterize(&img, 7).as_raw(), &vec![254, 36, 128]);
        assert_eq!(posterize(&img, 5).as_raw()[1], 32);
    }

    #[test]
    fn flips_are_involutions() {
        let c = card(8, 5);
        assert_eq!(hflip(&hflip(&c)), c);
        assert_eq!(vflip(&vflip(&c)), c);
        assert_ne!(hflip(&c), c);
    }

    #[test]
    fn zero_jitter_and_zero_rotation_are_identity() {
        let c = card(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(color_jitter(&c, &mut rng, JitterStrength::ZERO), c);
        assert_eq!(rotate(&c, &mut rng, 0.0), c);
        assert_eq!(affine(&c, &mut rng, 0.0, [0.0, 0.0]), c);
    }

    #[test]
    fn rotation_by_180_reverses_indices() {
        let c = card(15, 12);
        let r = affine_with(&c, 180.0, 0.0, 0.0);
        let both = hflip(&vflip(&c));
        assert_eq!(r, both);
    }

    #[test]
    fn rotation_is_seed_deterministic() {
        let c = card(20, 20);
        let a = rotate(&c, &mut ChaCha8Rng::seed_from_u64(9), 180.0);
        let b = rotate(&c, &mut ChaCha8Rng::seed_from_u64(9), 180.0);
        assert_eq!(a, b);
    }

    #[test]
    fn pure_translation_moves_delta() {
        let mut img = RgbImage::new(48, 32);
        img.put_pixel(20, 10, Rgb([255, 255, 255]));
        let t = affine_with(&img, 0.0, 10.0, 0.0);
        let lit: Vec<(u32, u32)> = t.enumerate_pixels().filter(|(_, _, p)| p[0] > 0).map(|(x, y, _)| (x, y)).collect();
        assert_eq!(lit, vec![(30, 10)]);
    }

    #[test]
    fn grayscale_replicates_luma() {
        let img = RgbImage::from_raw(1, 1, vec![200, 100, 50]).unwrap();
        let g = grayscale(&img);
        let l = (0.299f64 * 200.0 + 0.587 * 100.0 + 0.114 * 50.0).round() as u8;
        assert_eq!(g.as_raw(), &vec![l, l, l]);
    }

    #[test]
    fn normalize_unit_stats_is_scaling() {
        let img = RgbImage::from_raw(1, 1, vec![255, 0, 51]).unwrap();
        let n = normalize(&img, [0.0; 3], [1.0; 3]);
        assert_eq!(n[[0, 0, 0]], 1.0);
        assert_eq!(n[[1, 0, 0]], 0.0);
        assert_eq!(n[[2, 0, 0]], 51.0 / 255.0);
    }

    #[test]
    fn crop_rejects_bad_scale() {
        let c = card(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(crop_resize(&c, &mut rng, 8, [0.0, 1.0]).is_err());
        assert!(crop_resize(&c, &mut rng, 8, [0.5, 1.5]).is_err());
        assert_eq!(crop_resize(&c, &mut rng, 8, [1.0, 1.0]).unwrap(), c);
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }
}
