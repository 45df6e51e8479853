use super::kernels::{self, JitterStrength};
use crate::error::{Error, Result};
use image::RgbImage;
use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// One parameterised image transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    CropResize { out_size: u32, scale_range: [f64; 2] },
    Hflip,
    Vflip,
    ColorJitter(JitterStrength),
    Grayscale,
    GaussianBlur { sigma_range: [f64; 2] },
    Solarize { threshold: i64 },
    Posterize { bits: i64 },
    Rotate { max_degrees: f64 },
    Affine { max_degrees: f64, translate_frac: [f64; 2] },
    Normalize { mean: [f64; 3], std: [f64; 3] },
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::CropResize { .. } => "crop_resize",
            Transform::Hflip => "hflip",
            Transform::Vflip => "vflip",
            Transform::ColorJitter(_) => "color_jitter",
            Transform::Grayscale => "grayscale",
            Transform::GaussianBlur { .. } => "gaussian_blur",
            Transform::Solarize { .. } => "solarize",
            Transform::Posterize { .. } => "posterize",
            Transform::Rotate { .. } => "rotate",
            Transform::Affine { .. } => "affine",
            Transform::Normalize { .. } => "normalize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub probability: f64,
    #[serde(flatten)]
    pub transform: Transform,
}

impl TransformSpec {
    pub fn new(probability: f64, transform: Transform) -> Self {
        Self { probability, transform }
    }

    pub fn always(transform: Transform) -> Self {
        Self::new(1.0, transform)
    }

    fn invalid(&self, reason: impl Into<String>) -> Error {
        Error::InvalidTransform { name: self.transform.name().to_string(), reason: reason.into() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(self.invalid(format!("probability {} outside [0, 1]", self.probability)));
        }
        match &self.transform {
            Transform::CropResize { out_size, scale_range: [lo, hi] } => {
                if *out_size == 0 {
                    return Err(self.invalid("out_size must be positive"));
                }
                if !(*lo > 0.0 && *hi <= 1.0 && lo <= hi) {
                    return Err(self.invalid(format!("scale_range [{lo}, {hi}] must lie in (0, 1]")));
                }
            }
            Transform::ColorJitter(s) => {
                if [s.brightness, s.contrast, s.saturation].iter().any(|v| *v < 0.0 || !v.is_finite()) {
                    return Err(self.invalid("strengths must be finite and non-negative"));
                }
                if !(0.0..=0.5).contains(&s.hue) {
                    return Err(self.invalid(format!("hue {} outside [0, 0.5]", s.hue)));
                }
            }
            Transform::GaussianBlur { sigma_range: [lo, hi] } => {
                if !(*lo > 0.0 && lo <= hi) {
                    return Err(self.invalid(format!("sigma_range [{lo}, {hi}] must be positive and ordered")));
                }
            }
            Transform::Solarize { threshold } => {
                if !(0..=255).contains(threshold) {
                    return Err(self.invalid(format!("threshold {threshold} outside [0, 255]")));
                }
            }
            Transform::Posterize { bits } => {
                if !(1..=8).contains(bits) {
                    return Err(self.invalid(format!("bits {bits} outside [1, 8]")));
                }
            }
            Transform::Rotate { max_degrees } => {
                if !(0.0..=360.0).contains(max_degrees) {
                    return Err(self.invalid(format!("max_degrees {max_degrees} outside [0, 360]")));
                }
            }
            Transform::Affine { max_degrees, translate_frac } => {
                if !(0.0..=360.0).contains(max_degrees) {
                    return Err(self.invalid(format!("max_degrees {max_degrees} outside [0, 360]")));
                }
                if translate_frac.iter().any(|t| !(0.0..=1.0).contains(t)) {
                    return Err(self.invalid(format!("translate_frac {translate_frac:?} outside [0, 1]")));
                }
            }
            Transform::Normalize { std, .. } => {
                if std.iter().any(|s| *s <= 0.0) {
                    return Err(self.invalid("std must be positive"));
                }
            }
            Transform::Hflip | Transform::Vflip | Transform::Grayscale => {}
        }
        Ok(())
    }
}

/// Two ordered transform lists, one per distorted view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub name: String,
    pub branch_a: Vec<TransformSpec>,
    pub branch_b: Vec<TransformSpec>,
}

/// Checks that every spec is in range and the branch ends with
/// `crop_resize` then `normalize`; returns the crop output size.
pub fn validate_branch(branch: &[TransformSpec]) -> Result<u32> {
    for spec in branch {
        spec.validate()?;
    }
    let n = branch.len();
    let tail = (n >= 2).then(|| (&branch[n - 2].transform, &branch[n - 1].transform));
    match tail {
        Some((Transform::CropResize { out_size, .. }, Transform::Normalize { .. })) => {
            if let Some(pos) = branch[..n - 2]
                .iter()
                .position(|s| matches!(s.transform, Transform::CropResize { .. } | Transform::Normalize { .. }))
            {
                return Err(Error::InvalidTransform {
                    name: branch[pos].transform.name().into(),
                    reason: "crop_resize and normalize may only appear at the end of a branch".into(),
                });
            }
            Ok(*out_size)
        }
        _ => Err(Error::InvalidPolicy("branch must end with crop_resize followed by normalize".into())),
    }
}

impl AugmentationPolicy {
    pub fn validate(&self) -> Result<u32> {
        let a = validate_branch(&self.branch_a)?;
        let b = validate_branch(&self.branch_b)?;
        if a != b {
            return Err(Error::InvalidPolicy(format!("branch crop sizes differ: {a} vs {b}")));
        }
        Ok(a)
    }

    pub fn out_size(&self) -> u32 {
        self.branch_a.iter().rev().find_map(|s| match s.transform {
            Transform::CropResize { out_size, .. } => Some(out_size),
            _ => None,
        }).unwrap_or(0)
    }

    /// Canonical text form (pretty JSON).
    pub fn to_text(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serialises")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    /// True when neither branch can alter its input beyond the final
    /// crop and normalisation: both views would be near-identical.
    pub fn is_degenerate(&self) -> bool {
        let inert = |b: &[TransformSpec]| {
            b.iter().all(|s| match &s.transform {
                Transform::CropResize { scale_range, .. } => s.probability == 0.0 || scale_range[0] >= 1.0,
                Transform::Normalize { .. } => true,
                _ => s.probability == 0.0,
            })
        };
        inert(&self.branch_a) && inert(&self.branch_b)
    }

    /// Replaces the output size of both branches' crop.
    pub fn with_out_size(mut self, size: u32) -> Self {
        for spec in self.branch_a.iter_mut().chain(self.branch_b.iter_mut()) {
            if let Transform::CropResize { out_size, .. } = &mut spec.transform {
                *out_size = size;
            }
        }
        self
    }

    /// Final normalisation statistics of branch A.
    pub fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        self.branch_a
            .iter()
            .find_map(|s| match s.transform {
                Transform::Normalize { mean, std } => Some((mean, std)),
                _ => None,
            })
            .unwrap_or((IMAGENET_MEAN, IMAGENET_STD))
    }
}

/// Applies a branch in order; each transform fires independently with its
/// probability (one uniform draw per spec, fired or not). A crop that does not
/// fire still resizes the whole image to the output size, and normalisation
/// always runs, so the output is always `3 × out_size × out_size`.
pub fn apply_policy<R: Rng + ?Sized>(image: &RgbImage, branch: &[TransformSpec], rng: &mut R) -> Result<Array3<f64>> {
    validate_branch(branch)?;
    let mut img = image.clone();
    for spec in branch {
        let fire = rng.random::<f64>() < spec.probability;
        match &spec.transform {
            Transform::CropResize { out_size, scale_range } => {
                img = if fire {
                    kernels::crop_resize(&img, rng, *out_size, *scale_range)?
                } else {
                    kernels::resize(&img, *out_size, *out_size)
                };
            }
            Transform::Normalize { mean, std } => return Ok(kernels::normalize(&img, *mean, *std)),
            _ if !fire => {}
            Transform::Hflip => img = kernels::hflip(&img),
            Transform::Vflip => img = kernels::vflip(&img),
            Transform::ColorJitter(s) => img = kernels::color_jitter(&img, rng, *s),
            Transform::Grayscale => img = kernels::grayscale(&img),
            Transform::GaussianBlur { sigma_range } => img = kernels::gaussian_blur(&img, rng, *sigma_range),
            Transform::Solarize { threshold } => img = kernels::solarize(&img, *threshold as u8),
            Transform::Posterize { bits } => img = kernels::posterize(&img, *bits as u8),
            Transform::Rotate { max_degrees } => img = kernels::rotate(&img, rng, *max_degrees),
            Transform::Affine { max_degrees, translate_frac } => img = kernels::affine(&img, rng, *max_degrees, *translate_frac),
        }
    }
    unreachable!("validated branch ends with normalize")
}

/// Deterministic evaluation preprocessing: resize then normalise.
pub fn eval_transform(image: &RgbImage, out_size: u32, mean: [f64; 3], std: [f64; 3]) -> Array3<f64> {
    kernels::normalize(&kernels::resize(image, out_size, out_size), mean, std)
}

pub const DEFAULT_OUT_SIZE: u32 = 224;

/// Weak jitter used by the pathology policy.
pub const WEAK_JITTER: JitterStrength = JitterStrength { brightness: 0.2, contrast: 0.2, saturation: 0.1, hue: 0.02 };

/// The original Barlow Twins two-branch policy.
pub fn basic_policy(out_size: u32) -> AugmentationPolicy {
    let jitter = JitterStrength { brightness: 0.4, contrast: 0.4, saturation: 0.2, hue: 0.1 };
    let common = |blur_p: f64| {
        vec![
            TransformSpec::new(0.5, Transform::Hflip),
            TransformSpec::new(0.8, Transform::ColorJitter(jitter)),
            TransformSpec::new(0.2, Transform::Grayscale),
            TransformSpec::new(blur_p, Transform::GaussianBlur { sigma_range: [0.1, 2.0] }),
        ]
    };
    let tail = || {
        vec![
            TransformSpec::always(Transform::CropResize { out_size, scale_range: [0.08, 1.0] }),
            TransformSpec::always(Transform::Normalize { mean: IMAGENET_MEAN, std: IMAGENET_STD }),
        ]
    };
    let mut a = common(1.0);
    a.extend(tail());
    let mut b = common(0.1);
    b.push(TransformSpec::new(0.2, Transform::Solarize { threshold: 128 }));
    b.extend(tail());
    AugmentationPolicy { name: "basic".into(), branch_a: a, branch_b: b }
}

/// Pathology-adapted policy: vertical flips, weak jitter, high-threshold
/// solarisation and 7-bit posterisation on one branch, rotation and affine
/// distortion, symmetric crops, no grayscale or blur.
pub fn pathbt_policy(out_size: u32) -> AugmentationPolicy {
    let geometric = || {
        vec![
            TransformSpec::new(0.5, Transform::Hflip),
            TransformSpec::new(0.5, Transform::Vflip),
            TransformSpec::new(0.5, Transform::Rotate { max_degrees: 180.0 }),
            TransformSpec::new(0.5, Transform::Affine { max_degrees: 45.0, translate_frac: [0.5, 0.5] }),
            TransformSpec::new(0.8, Transform::ColorJitter(WEAK_JITTER)),
        ]
    };
    let tail = || {
        vec![
            TransformSpec::always(Transform::CropResize { out_size, scale_range: [0.2, 1.0] }),
            TransformSpec::always(Transform::Normalize { mean: IMAGENET_MEAN, std: IMAGENET_STD }),
        ]
    };
    let mut a = geometric();
    a.extend(tail());
    let mut b = geometric();
    b.push(TransformSpec::new(0.2, Transform::Solarize { threshold: 250 }));
    b.push(TransformSpec::new(0.2, Transform::Posterize { bits: 7 }));
    b.extend(tail());
    AugmentationPolicy { name: "pathbt".into(), branch_a: a, branch_b: b }
}

pub struct BuiltinPolicies {
    pub basic: AugmentationPolicy,
    pub pathbt: AugmentationPolicy,
}

pub fn builtin_policies(out_size: u32) -> BuiltinPolicies {
    BuiltinPolicies { basic: basic_policy(out_size), pathbt: pathbt_policy(out_size) }
}

/// Resolves `basic`, `pathbt` or a JSON policy file path.
pub fn resolve_policy(name_or_path: &str, out_size: u32) -> Result<AugmentationPolicy> {
    match name_or_path {
        "basic" => Ok(basic_policy(out_size)),
        "pathbt" => Ok(pathbt_policy(out_size)),
        path => AugmentationPolicy::from_text(&std::fs::read_to_string(path)?),
    }
}
