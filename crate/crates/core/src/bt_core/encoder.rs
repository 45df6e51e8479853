//! Encoder families: a desk-scale convolutional encoder plus
//! architecture-faithful residual (50-layer bottleneck) and shifted-window
//! transformer (tiny) classes.

use crate::error::{Error, Result};
use pathbt_nn::residual::Bottleneck;
use pathbt_nn::swin::{effective_window, PatchEmbed, PatchMerging, SwinBlock, TokenMeanPool};
use pathbt_nn::{checkpoint, BatchNorm, Conv2d, GlobalAvgPool, Layer, LayerNorm, MaxPool2d, Mode, Param, Relu, Sequential, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    SmallConv,
    Residual50Class,
    HierWindowTransformerTinyClass,
}

impl EncoderFamily {
    pub fn feature_dim(self) -> usize {
        match self {
            EncoderFamily::SmallConv => SMALL_CONV_WIDTHS[SMALL_CONV_WIDTHS.len() - 1],
            EncoderFamily::Residual50Class => 2048,
            EncoderFamily::HierWindowTransformerTinyClass => SWIN_TINY_DIM * 8,
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            EncoderFamily::SmallConv => "small_conv",
            EncoderFamily::Residual50Class => "rn50class",
            EncoderFamily::HierWindowTransformerTinyClass => "swintclass",
        }
    }
}

impl fmt::Display for EncoderFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for EncoderFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small_conv" => Ok(Self::SmallConv),
            "rn50class" | "residual50_class" => Ok(Self::Residual50Class),
            "swintclass" | "hier_window_transformer_tiny_class" => Ok(Self::HierWindowTransformerTinyClass),
            other => Err(Error::UnknownEncoder(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderInit {
    Random,
    Pretrained(PathBuf),
}

impl FromStr for EncoderInit {
    type Err = Error;
    /// `random` or `pretrained:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "random" => Ok(Self::Random),
            Some(("pretrained", path)) if !path.is_empty() => Ok(Self::Pretrained(PathBuf::from(path))),
            _ => Err(Error::InvalidConfig(format!("encoder init `{s}` (expected random or pretrained:PATH)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub family: EncoderFamily,
    pub init: EncoderInit,
    pub feature_dim: usize,
}

impl EncoderSpec {
    pub fn new(family: EncoderFamily, init: EncoderInit) -> Self {
        Self { family, init, feature_dim: family.feature_dim() }
    }

    pub fn small_conv() -> Self {
        Self::new(EncoderFamily::SmallConv, EncoderInit::Random)
    }
}

pub const SMALL_CONV_WIDTHS: [usize; 4] = [16, 32, 64, 128];
pub const SMALL_CONV_STRIDES: [usize; 4] = [2, 2, 2, 1];
const RESNET50_BLOCKS: [usize; 4] = [3, 4, 6, 3];
const SWIN_TINY_DIM: usize = 96;
const SWIN_TINY_DEPTHS: [usize; 4] = [2, 2, 6, 2];
const SWIN_TINY_HEADS: [usize; 4] = [3, 6, 12, 24];
const SWIN_WINDOW: usize = 7;

/// A feature extractor `(N, 3, H, W) → (N, feature_dim)`.
pub struct Encoder {
    pub spec: EncoderSpec,
    net: Sequential,
}

impl Encoder {
    pub fn feature_dim(&self) -> usize {
        self.spec.feature_dim
    }

    #[cfg(test)]
    pub(crate) fn from_parts(spec: EncoderSpec, net: Sequential) -> Self {
        Self { spec, net }
    }
}

impl Layer for Encoder {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        self.net.forward(x, mode)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        self.net.backward(grad)
    }
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.net.visit_params(f)
    }
    fn visit_params_ref(&self, f: &mut dyn FnMut(&Param)) {
        self.net.visit_params_ref(f)
    }
    fn clear_cache(&mut self) {
        self.net.clear_cache()
    }
}

fn small_conv(rng: &mut ChaCha8Rng) -> Sequential {
    small_conv_net(&SMALL_CONV_WIDTHS, &SMALL_CONV_STRIDES, rng)
}

pub(crate) fn small_conv_net(widths: &[usize], strides: &[usize], rng: &mut ChaCha8Rng) -> Sequential {
    let mut net = Sequential::new();
    let mut in_ch = 3;
    for (i, (&w, &s)) in widths.iter().zip(strides).enumerate() {
        net.push(Conv2d::new(&format!("stage{i}.conv"), in_ch, w, 3, s, 1, false, rng));
        net.push(BatchNorm::new(&format!("stage{i}.bn"), w));
        net.push(Relu::new());
        in_ch = w;
    }
    net.push(GlobalAvgPool::new());
    net
}

fn residual50(rng: &mut ChaCha8Rng) -> Sequential {
    let mut net = Sequential::new()
        .with(Conv2d::new("stem.conv", 3, 64, 7, 2, 3, false, rng))
        .with(BatchNorm::new("stem.bn", 64))
        .with(Relu::new())
        .with(MaxPool2d::new(3, 2, 1));
    let mut in_ch = 64;
    for (stage, &blocks) in RESNET50_BLOCKS.iter().enumerate() {
        let width = 64 << stage;
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            net.push(Bottleneck::new(&format!("layer{}.{b}", stage + 1), in_ch, width, stride, rng));
            in_ch = width * Bottleneck::EXPANSION;
        }
    }
    net.push(GlobalAvgPool::new());
    net
}

fn swin_tiny(input_size: usize, rng: &mut ChaCha8Rng) -> Result<Sequential> {
    let patch = 4;
    if input_size % (patch * 8) != 0 {
        return Err(Error::InvalidConfig(format!(
            "shifted-window encoder needs input size divisible by {}, got {input_size}",
            patch * 8
        )));
    }
    let mut net = Sequential::new().with(PatchEmbed::new("patch_embed", 3, SWIN_TINY_DIM, patch, rng));
    let mut res = input_size / patch;
    let mut dim = SWIN_TINY_DIM;
    for stage in 0..4 {
        let ws = effective_window(res, SWIN_WINDOW);
        for b in 0..SWIN_TINY_DEPTHS[stage] {
            let shift = if b % 2 == 1 && res > ws { ws / 2 } else { 0 };
            net.push(SwinBlock::new(&format!("stage{stage}.{b}"), dim, SWIN_TINY_HEADS[stage], ws, shift, rng));
        }
        if stage < 3 {
            net.push(PatchMerging::new(&format!("stage{stage}.merge"), dim, rng));
            res /= 2;
            dim *= 2;
        }
    }
    net.push(LayerNorm::new("norm", dim));
    net.push(TokenMeanPool::new());
    Ok(net)
}

/// Builds an encoder from its spec. `input_size` is the square input side the
/// encoder will see (the windowed transformer fixes its windows from it).
pub fn encoder_registry(spec: &EncoderSpec, input_size: usize, seed: u64) -> Result<Encoder> {
    if spec.feature_dim != spec.family.feature_dim() {
        return Err(Error::InvalidConfig(format!(
            "{} produces {} features, spec declares {}",
            spec.family,
            spec.family.feature_dim(),
            spec.feature_dim
        )));
    }
    if let EncoderInit::Pretrained(path) = &spec.init {
        if !path.is_file() {
            return Err(Error::MissingWeights(path.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = match spec.family {
        EncoderFamily::SmallConv => small_conv(&mut rng),
        EncoderFamily::Residual50Class => residual50(&mut rng),
        EncoderFamily::HierWindowTransformerTinyClass => swin_tiny(input_size, &mut rng)?,
    };
    let mut enc = Encoder { spec: spec.clone(), net };
    if let EncoderInit::Pretrained(path) = &spec.init {
        checkpoint::load(&mut enc, path)?;
    }
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use pathbt_nn::checkpoint::checksum;
    use pathbt_nn::init;

    #[test]
    fn small_conv_feature_width() {
        let mut enc = encoder_registry(&EncoderSpec::small_conv(), 64, 1).unwrap();
        let x = init::normal(&[2, 3, 64, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        let y = enc.forward(&x, Mode::Eval);
        assert_eq!(y.shape(), &[2, enc.feature_dim()]);
        assert_eq!(enc.feature_dim(), 128);
    }

    #[test]
    fn random_init_is_seeded() {
        let a = encoder_registry(&EncoderSpec::small_conv(), 32, 5).unwrap();
        let b = encoder_registry(&EncoderSpec::small_conv(), 32, 5).unwrap();
        let c = encoder_registry(&EncoderSpec::small_conv(), 32, 6).unwrap();
        assert_eq!(checksum(&a), checksum(&b));
        assert_ne!(checksum(&a), checksum(&c));
    }

    #[test]
    fn family_names_parse() {
        assert_eq!("rn50class".parse::<EncoderFamily>().unwrap().feature_dim(), 2048);
        assert_eq!("swintclass".parse::<EncoderFamily>().unwrap().feature_dim(), 768);
        assert!(matches!("vgg".parse::<EncoderFamily>(), Err(Error::UnknownEncoder(_))));
        assert_eq!("pretrained:/x/w.bin".parse::<EncoderInit>().unwrap(), EncoderInit::Pretrained("/x/w.bin".into()));
        assert!("pretrained:".parse::<EncoderInit>().is_err());
    }

    #[test]
    fn missing_weights_file() {
        let spec = EncoderSpec::new(EncoderFamily::SmallConv, EncoderInit::Pretrained("/nonexistent/w.bin".into()));
        assert!(matches!(encoder_registry(&spec, 32, 0), Err(Error::MissingWeights(_))));
    }

    #[test]
    fn pretrained_weights_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let src = encoder_registry(&EncoderSpec::small_conv(), 32, 11).unwrap();
        checkpoint::save(&src, &path).unwrap();
        let spec = EncoderSpec::new(EncoderFamily::SmallConv, EncoderInit::Pretrained(path));
        let loaded = encoder_registry(&spec, 32, 99).unwrap();
        assert_eq!(checksum(&src), checksum(&loaded));
    }

    #[test]
    fn declared_width_must_match_family() {
        let mut spec = EncoderSpec::small_conv();
        spec.feature_dim = 64;
        assert!(encoder_registry(&spec, 32, 0).is_err());
    }

    #[test]
    fn residual50_architecture() {
        let mut enc = encoder_registry(&EncoderSpec::new(EncoderFamily::Residual50Class, EncoderInit::Random), 32, 0).unwrap();
        // 23.5M parameters without the classification head
        assert_eq!(enc.param_count(), 23_508_032);
        let x = init::normal(&[1, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(enc.forward(&x, Mode::Eval).shape(), &[1, 2048]);
    }

    #[test]
    fn swin_tiny_architecture() {
        let spec = EncoderSpec::new(EncoderFamily::HierWindowTransformerTinyClass, EncoderInit::Random);
        let mut enc = encoder_registry(&spec, 32, 0).unwrap();
        assert!(enc.param_count() > 27_000_000 && enc.param_count() < 29_000_000, "{}", enc.param_count());
        let x = init::normal(&[1, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(enc.forward(&x, Mode::Eval).shape(), &[1, 768]);
        assert!(encoder_registry(&spec, 40, 0).is_err());
    }
}
