use crate::Ctx;
use anyhow::{bail, Context as _, Result};
use clap::Args;
use ndarray::Axis;
use pathbt_core::augment::{resolve_policy, AugmentationPolicy, DEFAULT_OUT_SIZE, IMAGENET_MEAN, IMAGENET_STD};
use pathbt_core::bt_core::{encoder_registry, pretrain_with, BTConfig, Encoder, EncoderFamily, EncoderInit, EncoderSpec};
use pathbt_core::derive_seed;
use pathbt_core::eval_linear::{confusion_matrix, extract_embeddings, project_2d, roc_curve, train_probe_repeated, EvalPreprocess, ProbeConfig};
use pathbt_core::harness::report::{CONFUSION_CSV, LOSS_CSV};
use pathbt_core::harness::{supervised_train, SupervisedConfig};
use pathbt_core::mil_slide::{bag_assemble, heatmap_export, predict_slide, train_mil, MILConfig, SlideTiles, HEATMAP_DOWNSAMPLE, TOP_K};
use pathbt_core::slide_ingest::{load_manifests, load_tile_dataset, tile_slide, RasterSlide, SlideReader, TileConfig};
use pathbt_nn::checkpoint;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const ENCODER_FILE: &str = "encoder.bin";
pub const PROJECTOR_FILE: &str = "projector.bin";

/// What `pretrain` snapshots into `config.json`; `probe` and `mil` rebuild
/// the encoder from it.
#[derive(Serialize, Deserialize)]
pub struct PretrainSnapshot {
    pub data: PathBuf,
    pub out_size: u32,
    pub policy: AugmentationPolicy,
    pub encoder: EncoderSpec,
    pub bt: BTConfig,
    pub eval_at_epochs: Vec<usize>,
}

#[derive(Args)]
pub struct PretrainArgs {
    /// Exported tile dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// `basic`, `pathbt` or a policy JSON file.
    #[arg(long, default_value = "pathbt")]
    policy: String,
    #[arg(long, default_value = "small_conv")]
    encoder: EncoderFamily,
    /// `random` or `pretrained:PATH`.
    #[arg(long, default_value = "random")]
    init: String,
    #[arg(long, default_value_t = DEFAULT_OUT_SIZE)]
    out_size: u32,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated projector widths.
    #[arg(long, value_delimiter = ',')]
    projector: Option<Vec<usize>>,
    #[arg(long)]
    lr_weights: Option<f64>,
    #[arg(long)]
    lars_eta: Option<f64>,
    /// Save `encoder_epoch{E}.bin` after these epochs.
    #[arg(long, value_delimiter = ',')]
    eval_at_epochs: Vec<usize>,
}

pub fn pretrain(ctx: &Ctx, a: PretrainArgs) -> Result<bool> {
    let mut bt: BTConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        bt.seed = ctx.seed;
    }
    bt.epochs = a.epochs.unwrap_or(bt.epochs);
    bt.batch_size = a.batch_size.unwrap_or(bt.batch_size);
    bt.lambda = a.lambda.unwrap_or(bt.lambda);
    bt.lr_weights = a.lr_weights.unwrap_or(bt.lr_weights);
    bt.lars_eta = a.lars_eta.unwrap_or(bt.lars_eta);
    if let Some(p) = a.projector {
        bt.projector_dims = p;
    }
    bt.validate()?;
    let snap = PretrainSnapshot {
        data: a.data.canonicalize().with_context(|| format!("dataset {}", a.data.display()))?,
        out_size: a.out_size,
        policy: resolve_policy(&a.policy, a.out_size)?,
        encoder: EncoderSpec::new(a.encoder, a.init.parse::<EncoderInit>()?),
        bt,
        eval_at_epochs: a.eval_at_epochs,
    };
    let (data, _) = load_tile_dataset(&snap.data)?;
    ctx.run("pretrain", &snap, |out, rec| {
        let encoder = encoder_registry(&snap.encoder, snap.out_size as usize, derive_seed(snap.bt.seed, &[3]))?;
        let mut loss = csv::Writer::from_path(out.join(LOSS_CSV))?;
        loss.write_record(["epoch", "train_loss", "val_loss", "invariance", "redundancy"])?;
        let mut on_epoch = |r: &pathbt_core::bt_core::EpochRecord, enc: &Encoder, _: &_| -> pathbt_core::Result<()> {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            loss.write_record([r.epoch.to_string(), r.train_loss.to_string(), val, r.invariance.to_string(), r.redundancy.to_string()])?;
            loss.flush()?;
            if snap.eval_at_epochs.contains(&r.epoch) {
                checkpoint::save(enc, &out.join(format!("encoder_epoch{}.bin", r.epoch)))?;
            }
            Ok(())
        };
        let outcome = pretrain_with(&data, &snap.policy, encoder, &snap.bt, &mut on_epoch)?;
        checkpoint::save(&outcome.encoder, &out.join(ENCODER_FILE))?;
        checkpoint::save(&outcome.projector, &out.join(PROJECTOR_FILE))?;
        for name in [LOSS_CSV, ENCODER_FILE, PROJECTOR_FILE] {
            rec.add_artifact(name);
        }
        for e in &snap.eval_at_epochs {
            rec.add_artifact(format!("encoder_epoch{e}.bin"));
        }
        if let Some(last) = outcome.history.last() {
            rec.metrics.insert("final_train_loss".into(), last.train_loss);
            if let Some(v) = last.val_loss {
                rec.metrics.insert("final_val_loss".into(), v);
            }
        }
        Ok(true)
    })
}

/// Rebuilds the encoder a pretrain run saved (`checkpoint` names the weight
/// file inside it).
pub fn load_pretrained(dir: &Path, checkpoint_name: &str) -> Result<(Encoder, PretrainSnapshot)> {
    let text = std::fs::read_to_string(dir.join("config.json")).with_context(|| format!("no pretrain config in {}", dir.display()))?;
    let snap: PretrainSnapshot = serde_json::from_str(&text).context("config.json is not a pretrain snapshot")?;
    let spec = EncoderSpec { init: EncoderInit::Pretrained(dir.join(checkpoint_name)), ..snap.encoder.clone() };
    let enc = encoder_registry(&spec, snap.out_size as usize, 0)?;
    Ok((enc, snap))
}

/// Encoder source shared by `probe` and `mil`.
#[derive(Args, Serialize)]
pub struct EncoderSource {
    /// Pretrain run directory or id; omit to use a randomly initialised encoder.
    #[arg(long)]
    pretrain: Option<String>,
    /// Weight file inside the pretrain run.
    #[arg(long, default_value = ENCODER_FILE)]
    checkpoint: String,
    /// Encoder for the random baseline.
    #[arg(long, default_value = "small_conv")]
    encoder: EncoderFamily,
    /// Input side for the random baseline.
    #[arg(long, default_value_t = DEFAULT_OUT_SIZE)]
    out_size: u32,
}

impl EncoderSource {
    fn build(&self, ctx: &Ctx) -> Result<(Encoder, u32)> {
        match &self.pretrain {
            Some(p) => {
                let (enc, snap) = load_pretrained(&ctx.locate(p)?, &self.checkpoint)?;
                Ok((enc, snap.out_size))
            }
            None => {
                let spec = EncoderSpec::new(self.encoder, EncoderInit::Random);
                Ok((encoder_registry(&spec, self.out_size as usize, derive_seed(ctx.seed, &[3]))?, self.out_size))
            }
        }
    }
}

#[derive(Args, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    source: EncoderSource,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
}

fn write_confusion(path: &Path, cm: &ndarray::Array2<usize>, names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["true\\pred".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for (i, row) in cm.rows().into_iter().enumerate() {
        let mut r = vec![names[i].clone()];
        r.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn probe(ctx: &Ctx, a: ProbeArgs) -> Result<bool> {
    let mut cfg: ProbeConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        cfg.seed = ctx.seed;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.repeats = a.repeats.unwrap_or(cfg.repeats);
    cfg.train_per_class = a.train_per_class.unwrap_or(cfg.train_per_class);
    cfg.test_per_class = a.test_per_class.unwrap_or(cfg.test_per_class);
    let (mut encoder, out_size) = a.source.build(ctx)?;
    let (data, _) = load_tile_dataset(&a.data)?;
    let snapshot = serde_json::json!({ "args": &a, "probe": &cfg, "out_size": out_size });
    ctx.run("probe", &snapshot, |out, rec| {
        let before = checkpoint::checksum(&encoder);
        let pre = EvalPreprocess::new(out_size, (IMAGENET_MEAN, IMAGENET_STD));
        let (emb, labels) = extract_embeddings(&mut encoder, &data, &pre)?;
        let (summary, first) = train_probe_repeated(&emb, &labels, &data.class_names, &cfg)?;
        let unchanged = checkpoint::checksum(&encoder) == before;

        std::fs::write(out.join("metrics.json"), serde_json::to_vec_pretty(&summary)?)?;
        let pred: Vec<usize> = first
            .test_scores
            .axis_iter(Axis(0))
            .map(|r| r.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0)
            .collect();
        let cm = confusion_matrix(&pred, &first.test_labels, data.n_classes());
        write_confusion(&out.join(CONFUSION_CSV), &cm, &data.class_names)?;
        for name in ["metrics.json", CONFUSION_CSV] {
            rec.add_artifact(name);
        }
        for (c, name) in data.class_names.iter().enumerate() {
            let positive: Vec<bool> = first.test_labels.iter().map(|&l| l == c).collect();
            let scores: Vec<f64> = first.test_scores.column(c).to_vec();
            let file = format!("roc_{}.csv", file_safe(name));
            let mut w = csv::Writer::from_path(out.join(&file))?;
            w.write_record(["fpr", "tpr", "threshold"])?;
            for (fpr, tpr, thr) in roc_curve(&scores, &positive) {
                w.write_record([fpr.to_string(), tpr.to_string(), thr.to_string()])?;
            }
            w.flush()?;
            rec.add_artifact(file);
        }
        let proj = project_2d(&emb)?;
        pathbt_core::eval_linear::write_projection(&proj, &labels, &data.class_names, out)?;
        rec.add_artifact("projection.csv");
        rec.add_artifact("projection.png");

        rec.metrics.insert("top1_mean".into(), summary.top1_mean);
        rec.metrics.insert("top1_std".into(), summary.top1_std);
        rec.metrics.insert("auc".into(), summary.auc);
        rec.metrics.insert("auc_std".into(), summary.auc_std);
        if let Some(f1) = summary.f1 {
            rec.metrics.insert("f1_macro".into(), f1);
        }
        rec.metrics.insert("encoder_unchanged".into(), if unchanged { 1.0 } else { 0.0 });
        if !unchanged {
            bail!("encoder weights changed during probing");
        }
        Ok(true)
    })
}

#[derive(Args, Serialize)]
pub struct MilArgs {
    /// Slide manifest JSON (array of slides).
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    source: EncoderSource,
    #[arg(long, default_value_t = 410.0)]
    fov: f64,
    #[arg(long, default_value_t = 0.5)]
    min_tissue: f64,
    #[arg(long, default_value_t = 16)]
    thumb_downsample: u32,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    instance_loss_weight: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
}

pub fn mil(ctx: &Ctx, a: MilArgs) -> Result<bool> {
    let mut cfg: MILConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        cfg.seed = ctx.seed;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.instance_loss_weight = a.instance_loss_weight.unwrap_or(cfg.instance_loss_weight);
    cfg.test_fraction = a.test_fraction.unwrap_or(cfg.test_fraction);
    let manifests = load_manifests(&a.manifest).with_context(|| format!("loading {}", a.manifest.display()))?;
    let (mut encoder, out_size) = a.source.build(ctx)?;
    let tcfg = TileConfig { fov_microns: a.fov, min_tissue_frac: a.min_tissue, thumb_downsample: a.thumb_downsample, out_size: None };
    let class_names = vec!["normal".to_string(), "lesion".to_string()];
    let snapshot = serde_json::json!({ "args": &a, "mil": &cfg, "out_size": out_size });
    ctx.run("mil", &snapshot, |out, rec| {
        let mut slides = Vec::with_capacity(manifests.len());
        let mut readers = Vec::with_capacity(manifests.len());
        for m in &manifests {
            let reader = RasterSlide::open(&m.image_source)?;
            let tiles = tile_slide(m, &reader, &tcfg)?;
            slides.push(SlideTiles { slide_id: m.slide_id.clone(), label: usize::from(!m.is_normal()), tiles });
            readers.push(reader);
        }
        let pre = EvalPreprocess::new(out_size, (IMAGENET_MEAN, IMAGENET_STD));
        let (mut bags, skipped) = bag_assemble(&slides, &mut encoder, &pre)?;
        rec.metrics.insert("slides_skipped".into(), skipped.len() as f64);
        let outcome = train_mil(&bags, &class_names, &cfg)?;
        let mut model = outcome.model;

        std::fs::write(out.join("metrics.json"), serde_json::to_vec_pretty(&outcome.metrics)?)?;
        let mut hist = csv::Writer::from_path(out.join("history.csv"))?;
        hist.write_record(["epoch", "train_loss", "val_loss", "val_auc"])?;
        for h in &outcome.history {
            hist.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string(), h.val_auc.to_string()])?;
        }
        hist.flush()?;
        let mut pw = csv::Writer::from_path(out.join("predictions.csv"))?;
        pw.write_record(["slide_id", "label", "predicted", "score_lesion"])?;
        for p in &outcome.predictions {
            pw.write_record([p.slide_id.clone(), class_names[p.label].clone(), class_names[p.predicted].clone(), p.scores[1].to_string()])?;
        }
        pw.flush()?;
        for name in ["metrics.json", "history.csv", "predictions.csv"] {
            rec.add_artifact(name);
        }

        for &b in &outcome.test {
            let bag = &mut bags[b];
            let (_, attention) = predict_slide(&mut model, bag);
            bag.attention = attention;
            let s = slides.iter().position(|s| s.slide_id == bag.slide_id).expect("bag comes from a slide");
            let thumb = readers[s].thumbnail(HEATMAP_DOWNSAMPLE as u32);
            let images: Vec<_> = slides[s].tiles.iter().map(|t| t.image.clone()).collect();
            let dir = out.join("heatmaps").join(file_safe(&bag.slide_id));
            heatmap_export(bag, &thumb, HEATMAP_DOWNSAMPLE, Some(&images), TOP_K, &dir)?;
            rec.add_artifact(Path::new("heatmaps").join(file_safe(&bag.slide_id)));
        }
        rec.metrics.insert("test_top1".into(), outcome.metrics.top1_acc);
        rec.metrics.insert("test_auc".into(), outcome.metrics.auc);
        Ok(true)
    })
}

#[derive(Args, Serialize)]
pub struct SupervisedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "small_conv")]
    encoder: EncoderFamily,
    /// `random` or `pretrained:PATH`.
    #[arg(long, default_value = "random")]
    init: String,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    input_size: Option<u32>,
    #[arg(long)]
    batch_size: Option<usize>,
}

pub fn supervised(ctx: &Ctx, a: SupervisedArgs) -> Result<bool> {
    let mut cfg: SupervisedConfig = ctx.load_config()?;
    if ctx.config.is_none() {
        cfg.seed = ctx.seed;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.lr = a.lr.unwrap_or(cfg.lr);
    cfg.input_size = a.input_size.unwrap_or(cfg.input_size);
    cfg.batch_size = a.batch_size.unwrap_or(cfg.batch_size);
    let spec = EncoderSpec::new(a.encoder, a.init.parse::<EncoderInit>()?);
    let (data, _) = load_tile_dataset(&a.data)?;
    let snapshot = serde_json::json!({ "args": &a, "supervised": &cfg, "encoder": &spec });
    ctx.run("supervised", &snapshot, |out, rec| {
        let outcome = supervised_train(&data, &spec, &cfg)?;
        let mut w = csv::Writer::from_path(out.join(LOSS_CSV))?;
        w.write_record(["epoch", "train_loss", "val_loss", "val_acc"])?;
        for h in &outcome.history {
            if let Some(l) = h.train_loss {
                w.write_record([h.epoch.to_string(), l.to_string(), String::new(), h.val_acc.to_string()])?;
            }
        }
        w.flush()?;
        std::fs::write(out.join("metrics.json"), serde_json::to_vec_pretty(&outcome.metrics)?)?;
        checkpoint::save(&outcome.model.encoder, &out.join(ENCODER_FILE))?;
        for name in [LOSS_CSV, "metrics.json", ENCODER_FILE] {
            rec.add_artifact(name);
        }
        rec.metrics.insert("val_top1".into(), outcome.metrics.top1_acc);
        rec.metrics.insert("val_auc".into(), outcome.metrics.auc);
        rec.metrics.insert("best_epoch".into(), outcome.best_epoch as f64);
        Ok(true)
    })
}
