use crate::Ctx;
use anyhow::{bail, Context as _, Result};
use clap::Args;
use image::{Rgb, RgbImage};
use ndarray::Array3;
use pathbt_core::augment::{apply_policy, resolve_policy, DEFAULT_OUT_SIZE};
use pathbt_core::derive_seed;
use pathbt_core::harness::synth::default_classes;
use pathbt_core::harness::{synth_artifact_set, synth_slide, synth_tile, SyntheticSpec};
use pathbt_core::slide_ingest::{
    export_dataset, filter_tiles, load_manifests, tile_slide, train_artifact_filter, FilterConfig, RasterSlide, RoiMembership, Tile, TileConfig,
    TileRecord,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::PathBuf;

pub const SLIDE_MANIFEST: &str = "slides.json";

#[derive(Args)]
pub struct SynthArgs {
    /// Tile classes [default: 3].
    #[arg(long)]
    classes: Option<usize>,
    /// Tiles per class [default: 200].
    #[arg(long)]
    per_class: Option<usize>,
    /// Tile side in pixels [default: 64].
    #[arg(long)]
    tile_size: Option<u32>,
    /// Number of slides; even indices are normal, odd ones carry a lesion.
    #[arg(long, default_value_t = 8)]
    slides: usize,
    /// Slide microns per pixel [default: 410 / tile size].
    #[arg(long)]
    mpp: Option<f64>,
}

#[derive(Serialize)]
struct SynthSnapshot<'a> {
    spec: &'a SyntheticSpec,
    slides: usize,
    mpp: f64,
}

/// Writes `tiles/` (a tile dataset), `slides/` (PNG slides plus `slides.json`) and `spec.json`.
pub fn synth(ctx: &Ctx, a: SynthArgs) -> Result<bool> {
    let mut spec: SyntheticSpec = ctx.read_config()?.unwrap_or_else(|| SyntheticSpec::new(3, 200, 64, ctx.seed));
    if let Some(k) = a.classes {
        spec.classes = default_classes(k);
    }
    if let Some(n) = a.per_class {
        spec.tiles_per_class = n;
    }
    if let Some(s) = a.tile_size {
        spec.tile_size = s;
    }
    if ctx.config.is_none() {
        spec.seed = ctx.seed;
    }
    if spec.n_classes() < 2 {
        bail!("synthetic data needs at least 2 classes");
    }
    let mpp = a.mpp.unwrap_or(410.0 / spec.tile_size as f64);
    let snap = SynthSnapshot { spec: &spec, slides: a.slides, mpp };
    ctx.run("synth", &snap, |out, rec| {
        let side = spec.tile_size as u64;
        let mut tiles = Vec::with_capacity(spec.n_classes() * spec.tiles_per_class);
        for (c, tex) in spec.classes.iter().enumerate() {
            for i in 0..spec.tiles_per_class {
                let record = TileRecord {
                    slide_id: "synthetic".into(),
                    origin_xy: [i as u64 * side, c as u64 * side],
                    fov_microns: side as f64 * mpp,
                    side_px: side,
                    class_label: tex.name.clone(),
                    roi_membership: RoiMembership::InRoi,
                    tissue_score: 1.0,
                };
                tiles.push(Tile { record, image: synth_tile(&spec, c, i) });
            }
        }
        export_dataset(&tiles, &out.join("tiles"), true)?;

        let slide_dir = out.join("slides");
        std::fs::create_dir_all(&slide_dir)?;
        let mut manifests = Vec::with_capacity(a.slides);
        for i in 0..a.slides {
            let lesion = (i % 2 == 1).then(|| 1 + (i / 2) % (spec.n_classes() - 1));
            let s = synth_slide(&spec, i, lesion, mpp);
            s.image.save(slide_dir.join(&s.manifest.image_source))?;
            manifests.push(s.manifest);
        }
        std::fs::write(slide_dir.join(SLIDE_MANIFEST), serde_json::to_vec_pretty(&manifests)?)?;
        std::fs::write(out.join("spec.json"), serde_json::to_vec_pretty(&spec)?)?;
        rec.metrics.insert("tiles".into(), tiles.len() as f64);
        rec.metrics.insert("slides".into(), a.slides as f64);
        for p in ["tiles/manifest.jsonl", "slides/slides.json", "spec.json"] {
            rec.add_artifact(p);
        }
        Ok(true)
    })
}

#[derive(Args, Serialize)]
pub struct TileArgs {
    /// Slide manifest JSON (array of slides).
    #[arg(long)]
    manifest: PathBuf,
    /// Field of view in microns.
    #[arg(long, default_value_t = 410.0)]
    fov: f64,
    #[arg(long, default_value_t = 0.5)]
    min_tissue: f64,
    #[arg(long, default_value_t = 16)]
    thumb_downsample: u32,
    /// Resize tiles to this side.
    #[arg(long)]
    out_size: Option<u32>,
    /// Train the artifact filter on synthetic tissue/artifact tiles and drop rejected tiles.
    #[arg(long)]
    filter: bool,
    /// Replace an existing dataset in the output directory.
    #[arg(long)]
    overwrite: bool,
}

pub fn tile(ctx: &Ctx, a: TileArgs) -> Result<bool> {
    let slides = load_manifests(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let cfg = TileConfig { fov_microns: a.fov, min_tissue_frac: a.min_tissue, thumb_downsample: a.thumb_downsample, out_size: a.out_size };
    ctx.run("tile", &a, |out, rec| {
        let mut tiles = Vec::new();
        for m in &slides {
            let reader = RasterSlide::open(&m.image_source)?;
            let t = tile_slide(m, &reader, &cfg)?;
            log::info!("{}: {} tiles", m.slide_id, t.len());
            tiles.extend(t);
        }
        let before = tiles.len();
        if a.filter {
            let fcfg = FilterConfig { seed: ctx.seed, ..FilterConfig::default() };
            let spec = SyntheticSpec::new(3, 1, fcfg.input_size, ctx.seed);
            let (mut model, report) = train_artifact_filter(&synth_artifact_set(&spec, 200), &fcfg)?;
            rec.metrics.insert("filter_test_accuracy".into(), report.test_accuracy);
            rec.metrics.insert("filter_parameters".into(), report.parameter_count as f64);
            tiles = filter_tiles(&mut model, tiles).0;
        }
        let manifest = export_dataset(&tiles, out, a.overwrite)?;
        rec.metrics.insert("tiles".into(), tiles.len() as f64);
        rec.metrics.insert("rejected".into(), (before - tiles.len()) as f64);
        rec.add_artifact(manifest.file_name().unwrap());
        Ok(true)
    })
}

#[derive(Args, Serialize)]
pub struct PreviewArgs {
    /// `basic`, `pathbt` or a policy JSON file.
    #[arg(long, default_value = "pathbt")]
    policy: String,
    #[arg(long)]
    image: PathBuf,
    /// Pairs of views to write.
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = DEFAULT_OUT_SIZE)]
    out_size: u32,
}

/// Undoes the final normalisation for viewing.
fn to_image(x: &Array3<f64>, mean: [f64; 3], std: [f64; 3]) -> RgbImage {
    let (_, h, w) = x.dim();
    RgbImage::from_fn(w as u32, h as u32, |px, py| {
        let v = |c: usize| ((x[[c, py as usize, px as usize]] * std[c] + mean[c]) * 255.0).round().clamp(0.0, 255.0) as u8;
        Rgb([v(0), v(1), v(2)])
    })
}

pub fn augment_preview(ctx: &Ctx, a: PreviewArgs) -> Result<bool> {
    let policy = resolve_policy(&a.policy, a.out_size)?;
    let img = image::open(&a.image).with_context(|| format!("opening {}", a.image.display()))?.to_rgb8();
    let (mean, std) = policy.normalization();
    ctx.run("augment-preview", &a, |out, rec| {
        std::fs::write(out.join("policy.json"), policy.to_text())?;
        for i in 0..a.count {
            for (tag, branch, b) in [("a", &policy.branch_a, 0u64), ("b", &policy.branch_b, 1)] {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.seed, &[i as u64, b]));
                let view = apply_policy(&img, branch, &mut rng)?;
                let name = format!("{tag}_{i:02}.png");
                to_image(&view, mean, std).save(out.join(&name))?;
                rec.add_artifact(name);
            }
        }
        Ok(true)
    })
}
