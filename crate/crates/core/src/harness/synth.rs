use crate::dataset::TileSet;
use crate::seeds::derive_seed;
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    /// One grating.
    Stripes,
    /// Two orthogonal gratings.
    Grid,
    /// Three gratings 120° apart (hexagonal spots).
    Dots,
    /// Round spots on a square lattice.
    SquareSpots,
    /// Round spots on a hexagonal lattice.
    HexSpots,
    /// Round spots scattered at the square-lattice density.
    ScatteredSpots,
}

const SPOT_RADIUS: f64 = 0.28;

fn spot(d: f64) -> f64 {
    // soft disk edge, +1 inside and −1 outside
    (((SPOT_RADIUS - d) * 12.0).tanh()).clamp(-1.0, 1.0)
}

fn square_lattice_dist(u: f64, v: f64) -> f64 {
    let (du, dv) = (u - u.round(), v - v.round());
    (du * du + dv * dv).sqrt()
}

fn hex_lattice_dist(u: f64, v: f64) -> f64 {
    let s3 = 3f64.sqrt();
    let b = v * 2.0 / s3;
    let a = u - b / 2.0;
    let (a0, b0) = (a.floor(), b.floor());
    let mut best = f64::INFINITY;
    for (da, db) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let (pa, pb) = (a0 + da, b0 + db);
        let (px, py) = (pa + pb / 2.0, pb * s3 / 2.0);
        best = best.min(((u - px).powi(2) + (v - py).powi(2)).sqrt());
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassTexture {
    pub name: String,
    pub pattern: Pattern,
    /// Cycles per tile width at scale 1.
    pub frequency: f64,
    /// Fixed orientation in degrees, or uniformly random when `None`.
    pub orientation: Option<f64>,
    /// Dark and light stain colours.
    pub palette: [[u8; 3]; 2],
}

/// Per-tile variation shared by every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    /// Uniform per-channel palette offset range.
    pub palette_shift: f64,
    pub contrast: [f64; 2],
    /// Relative frequency jitter.
    pub frequency_jitter: f64,
    pub noise_sigma: f64,
    /// Logistic sharpening of the pattern field; 0 keeps sinusoids.
    pub sharpness: f64,
}

impl Default for Nuisance {
    fn default() -> Self {
        Self { palette_shift: 0.0, contrast: [0.8, 1.0], frequency_jitter: 0.1, noise_sigma: 2.0, sharpness: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRules {
    /// Tiles per slide side (slides are square grids).
    pub grid: usize,
    /// Fraction of tissue tiles carrying the lesion texture on lesion slides.
    pub signal_fraction: f64,
    /// Fraction of signal tiles covered by annotation polygons.
    pub annotation_coverage: f64,
    /// Fraction of grid cells left as background.
    pub background_fraction: f64,
}

impl Default for SlideRules {
    fn default() -> Self {
        Self { grid: 8, signal_fraction: 0.4, annotation_coverage: 0.5, background_fraction: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<ClassTexture>,
    pub tiles_per_class: usize,
    pub tile_size: u32,
    /// Frequency multiplier standing in for the field of view.
    pub scale: f64,
    pub nuisance: Nuisance,
    /// Fraction of extra tiles rendered as artifacts (blank, blur, pen).
    pub artifact_fraction: f64,
    pub slide: SlideRules,
    pub seed: u64,
}

const STAIN_DARK: [u8; 3] = [120, 50, 130];
const STAIN_LIGHT: [u8; 3] = [235, 180, 210];

pub fn default_classes(n: usize) -> Vec<ClassTexture> {
    let table = [(Pattern::Stripes, 5.0), (Pattern::Grid, 5.0), (Pattern::Dots, 5.0), (Pattern::Stripes, 10.0), (Pattern::Grid, 10.0), (Pattern::Dots, 10.0)];
    (0..n)
        .map(|i| {
            let (pattern, frequency) = table[i % table.len()];
            ClassTexture {
                name: format!("class{i}"),
                pattern,
                frequency: frequency * (1.0 + (i / table.len()) as f64 * 0.5),
                orientation: None,
                palette: [STAIN_DARK, STAIN_LIGHT],
            }
        })
        .collect()
}

impl SyntheticSpec {
    pub fn new(n_classes: usize, tiles_per_class: usize, tile_size: u32, seed: u64) -> Self {
        Self {
            classes: default_classes(n_classes),
            tiles_per_class,
            tile_size,
            scale: 1.0,
            nuisance: Nuisance::default(),
            artifact_fraction: 0.0,
            slide: SlideRules::default(),
            seed,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

/// Pattern value in `[-1, 1]` at lattice coordinates `(u, v)`.
fn field(pattern: Pattern, u: f64, v: f64, phases: [f64; 3], scattered: &[(f64, f64)]) -> f64 {
    let g = |angle: f64, ph: f64| (2.0 * PI * (u * angle.cos() + v * angle.sin()) + ph).cos();
    let (su, sv) = (u + phases[0] / (2.0 * PI), v + phases[1] / (2.0 * PI));
    match pattern {
        Pattern::Stripes => g(0.0, phases[0]),
        Pattern::Grid => (g(0.0, phases[0]) + g(PI / 2.0, phases[1])) / 2.0,
        Pattern::Dots => (g(0.0, phases[0]) + g(2.0 * PI / 3.0, phases[1]) + g(4.0 * PI / 3.0, phases[2])) / 3.0,
        Pattern::SquareSpots => spot(square_lattice_dist(su, sv)),
        Pattern::HexSpots => spot(hex_lattice_dist(su, sv)),
        Pattern::ScatteredSpots => {
            let d = scattered.iter().map(|&(a, b)| (a - u).powi(2) + (b - v).powi(2)).fold(f64::INFINITY, f64::min);
            spot(d.sqrt())
        }
    }
}

/// Spot centres over the rotated tile footprint, square-lattice density,
/// rejecting centres closer than 0.75 lattice units.
fn scatter_points<R: Rng + ?Sized>(freq: f64, rng: &mut R) -> Vec<(f64, f64)> {
    let extent = freq * std::f64::consts::SQRT_2 + 2.0;
    let target = (extent * extent * 4.0).ceil() as usize;
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(target);
    let mut tries = 0;
    while pts.len() < (extent * 2.0).powi(2) as usize && tries < target * 30 {
        tries += 1;
        let p = (rng.random_range(-extent..extent), rng.random_range(-extent..extent));
        if pts.iter().all(|q| (p.0 - q.0).powi(2) + (p.1 - q.1).powi(2) >= 0.75 * 0.75) {
            pts.push(p);
        }
    }
    pts
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Renders one tile of `tex` with fresh nuisance draws from `rng`.
pub fn render_texture<R: Rng + ?Sized>(tex: &ClassTexture, size: u32, scale: f64, nz: &Nuisance, rng: &mut R) -> RgbImage {
    let theta = tex.orientation.map_or_else(|| rng.random_range(0.0..PI), f64::to_radians);
    let freq = tex.frequency * scale * (1.0 + rng.random_range(-nz.frequency_jitter..=nz.frequency_jitter));
    let phases = [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)];
    let contrast = rng.random_range(nz.contrast[0]..=nz.contrast[1]);
    let mut pal = tex.palette.map(|c| c.map(f64::from));
    for ch in 0..3 {
        let shift = rng.random_range(-nz.palette_shift..=nz.palette_shift);
        pal[0][ch] += shift;
        pal[1][ch] += shift;
    }
    let scattered = if tex.pattern == Pattern::ScatteredSpots { scatter_points(freq, rng) } else { Vec::new() };
    let noise = Normal::new(0.0, nz.noise_sigma.max(1e-9)).unwrap();
    let (ct, st) = (theta.cos(), theta.sin());
    let s = size as f64;
    RgbImage::from_fn(size, size, |x, y| {
        let (px, py) = ((x as f64 + 0.5) / s, (y as f64 + 0.5) / s);
        let (u, v) = (freq * (px * ct + py * st), freq * (-px * st + py * ct));
        let mut f = field(tex.pattern, u, v, phases, &scattered);
        if nz.sharpness > 0.0 {
            f = 2.0 / (1.0 + (-nz.sharpness * f).exp()) - 1.0;
        }
        let t = 0.5 + 0.5 * contrast * f;
        let mut px = [0u8; 3];
        for ch in 0..3 {
            let base = pal[0][ch] + (pal[1][ch] - pal[0][ch]) * t;
            px[ch] = clamp_u8(base + if nz.noise_sigma > 0.0 { noise.sample(rng) } else { 0.0 });
        }
        Rgb(px)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Blank,
    Blur,
    Pen,
}

/// A tile that should be rejected by quality control.
pub fn render_artifact<R: Rng + ?Sized>(kind: ArtifactKind, spec: &SyntheticSpec, rng: &mut R) -> RgbImage {
    let size = spec.tile_size;
    match kind {
        ArtifactKind::Blank => {
            let level = rng.random_range(225.0..250.0);
            let noise = Normal::new(0.0, 3.0).unwrap();
            RgbImage::from_fn(size, size, |_, _| {
                let v = level + noise.sample(rng);
                Rgb([clamp_u8(v), clamp_u8(v - 2.0), clamp_u8(v)])
            })
        }
        ArtifactKind::Blur => {
            let tex = &spec.classes[rng.random_range(0..spec.classes.len())];
            let img = render_texture(tex, size, spec.scale, &spec.nuisance, rng);
            crate::augment::kernels::blur_with(&img, size as f64 / 6.0)
        }
        ArtifactKind::Pen => {
            let tex = &spec.classes[rng.random_range(0..spec.classes.len())];
            let mut img = render_texture(tex, size, spec.scale, &spec.nuisance, rng);
            let ink = [[20, 90, 40], [30, 40, 160], [10, 10, 10]][rng.random_range(0..3)];
            let strokes = rng.random_range(2..5);
            let s = size as f64;
            for _ in 0..strokes {
                let (x0, y0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                let angle = rng.random_range(0.0..PI);
                let width = rng.random_range(s / 12.0..s / 6.0);
                for (x, y, p) in img.enumerate_pixels_mut() {
                    let d = ((x as f64 - x0) * angle.sin() - (y as f64 - y0) * angle.cos()).abs();
                    if d < width {
                        *p = Rgb(ink);
                    }
                }
            }
            img
        }
    }
}

/// Tile for class `label`, index `i`: each tile has its own random stream so
/// any subset can be regenerated independently.
pub fn synth_tile(spec: &SyntheticSpec, label: usize, i: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[label as u64, i as u64]));
    render_texture(&spec.classes[label], spec.tile_size, spec.scale, &spec.nuisance, &mut rng)
}

/// Class-balanced procedural tiles in class-major order.
pub fn synth_tiles(spec: &SyntheticSpec) -> TileSet {
    use rayon::prelude::*;
    let jobs: Vec<(usize, usize)> = (0..spec.n_classes()).flat_map(|c| (0..spec.tiles_per_class).map(move |i| (c, i))).collect();
    let images: Vec<RgbImage> = jobs.par_iter().map(|&(c, i)| synth_tile(spec, c, i)).collect();
    let mut set = TileSet::new(spec.class_names());
    for ((c, i), img) in jobs.into_iter().zip(images) {
        set.push(format!("{}_{i:05}", spec.classes[c].name), img, c);
    }
    set
}

/// Two-class tissue-versus-artifact set for training the quality filter.
/// Label 0 is tissue, 1 is artifact; artifacts cycle through all kinds.
pub fn synth_artifact_set(spec: &SyntheticSpec, per_class: usize) -> TileSet {
    let mut set = TileSet::new(vec!["tissue".into(), "artifact".into()]);
    let kinds = [ArtifactKind::Blank, ArtifactKind::Blur, ArtifactKind::Pen];
    for i in 0..per_class {
        let c = i % spec.n_classes();
        set.push(format!("tissue_{i:05}"), synth_tile(spec, c, 1_000_000 + i), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[u64::MAX, i as u64]));
        set.push(format!("artifact_{i:05}"), render_artifact(kinds[i % 3], spec, &mut rng), 1);
    }
    set
}
