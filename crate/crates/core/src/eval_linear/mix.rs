use crate::error::{Error, Result};
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    Mixup,
    Cutmix,
}

impl std::str::FromStr for MixMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixup" => Ok(Self::Mixup),
            "cutmix" => Ok(Self::Cutmix),
            other => Err(Error::InvalidConfig(format!("unknown mix mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub mode: MixMode,
    pub alpha: f64,
    /// Number of mixed copies of the training set added to the probe stream.
    pub passes: usize,
}

/// `coef·a + (1 − coef)·b` for both images and label vectors.
pub fn mixup(a: &Array3<f64>, b: &Array3<f64>, la: &Array1<f64>, lb: &Array1<f64>, coef: f64) -> (Array3<f64>, Array1<f64>) {
    (a * coef + b * (1.0 - coef), la * coef + lb * (1.0 - coef))
}

/// Half-open rectangle `[y0, y1) × [x0, x1)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }
}

/// Pastes `rect` of `b` into `a`; the label weight of `b` equals the pasted
/// area fraction.
pub fn cutmix(a: &Array3<f64>, b: &Array3<f64>, la: &Array1<f64>, lb: &Array1<f64>, rect: Rect) -> (Array3<f64>, Array1<f64>) {
    let (_, h, w) = a.dim();
    let mut out = a.clone();
    out.slice_mut(s![.., rect.y0..rect.y1, rect.x0..rect.x1])
        .assign(&b.slice(s![.., rect.y0..rect.y1, rect.x0..rect.x1]));
    let frac = rect.area() as f64 / (h * w) as f64;
    (out, la * (1.0 - frac) + lb * frac)
}

/// Box covering `1 − coef` of the image, centred uniformly and clipped.
pub fn cutmix_rect<R: Rng + ?Sized>(h: usize, w: usize, coef: f64, rng: &mut R) -> Rect {
    let cut = (1.0 - coef).max(0.0).sqrt();
    let (ch, cw) = ((h as f64 * cut) as usize, (w as f64 * cut) as usize);
    let cy = rng.random_range(0..h);
    let cx = rng.random_range(0..w);
    Rect {
        y0: cy.saturating_sub(ch / 2),
        y1: (cy + ch / 2 + ch % 2).min(h),
        x0: cx.saturating_sub(cw / 2),
        x1: (cx + cw / 2 + cw % 2).min(w),
    }
}

/// One mixed copy of `images`: each sample is paired with a random partner
/// and blended according to `cfg`. Labels are soft targets summing to 1.
pub fn eval_phase_mix<R: Rng + ?Sized>(
    images: &[Array3<f64>],
    targets: &Array2<f64>,
    cfg: &MixConfig,
    rng: &mut R,
) -> Result<(Vec<Array3<f64>>, Array2<f64>)> {
    if !(cfg.alpha > 0.0) {
        return Err(Error::InvalidConfig(format!("mix alpha must be > 0, got {}", cfg.alpha)));
    }
    let beta = Beta::new(cfg.alpha, cfg.alpha).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut partner: Vec<usize> = (0..images.len()).collect();
    partner.shuffle(rng);
    let mut out = Vec::with_capacity(images.len());
    let mut soft = Array2::zeros(targets.raw_dim());
    for (i, &j) in partner.iter().enumerate() {
        let coef: f64 = beta.sample(rng);
        let (la, lb) = (targets.row(i).to_owned(), targets.row(j).to_owned());
        let (img, lab) = match cfg.mode {
            MixMode::Mixup => mixup(&images[i], &images[j], &la, &lb, coef),
            MixMode::Cutmix => {
                let (_, h, w) = images[i].dim();
                cutmix(&images[i], &images[j], &la, &lb, cutmix_rect(h, w, coef, rng))
            }
        };
        out.push(img);
        soft.index_axis_mut(Axis(0), i).assign(&lab);
    }
    Ok((out, soft))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn imgs() -> (Array3<f64>, Array3<f64>) {
        (Array3::from_shape_fn((3, 4, 4), |(c, y, x)| (c + y * 4 + x) as f64), Array3::from_elem((3, 4, 4), -1.0))
    }

    #[test]
    fn unit_coefficient_keeps_first() {
        let (a, b) = imgs();
        let (m, l) = mixup(&a, &b, &array![1.0, 0.0], &array![0.0, 1.0], 1.0);
        assert_eq!(m, a);
        assert_eq!(l, array![1.0, 0.0]);
    }

    #[test]
    fn half_coefficient_is_mean() {
        let (a, b) = imgs();
        let (m, _) = mixup(&a, &b, &array![1.0, 0.0], &array![0.0, 1.0], 0.5);
        assert_eq!(m, (&a + &b) / 2.0);
    }

    #[test]
    fn empty_rect_is_identity() {
        let (a, b) = imgs();
        let r = Rect { y0: 2, y1: 2, x0: 0, x1: 4 };
        let (m, l) = cutmix(&a, &b, &array![1.0, 0.0], &array![0.0, 1.0], r);
        assert_eq!(m, a);
        assert_eq!(l, array![1.0, 0.0]);
    }

    #[test]
    fn cutmix_label_tracks_area() {
        let (a, b) = imgs();
        let r = Rect { y0: 0, y1: 2, x0: 0, x1: 2 };
        let (m, l) = cutmix(&a, &b, &array![1.0, 0.0], &array![0.0, 1.0], r);
        assert_eq!(l, array![0.75, 0.25]);
        assert_eq!(m[[0, 1, 1]], -1.0);
        assert_eq!(m[[0, 3, 3]], a[[0, 3, 3]]);
    }

    #[test]
    fn mixed_labels_sum_to_one() {
        let (a, b) = imgs();
        let images = vec![a.clone(), b.clone(), a, b];
        let targets = pathbt_nn::loss::one_hot(&[0, 1, 0, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for mode in [MixMode::Mixup, MixMode::Cutmix] {
            let cfg = MixConfig { mode, alpha: 0.4, passes: 1 };
            let (_, soft) = eval_phase_mix(&images, &targets, &cfg, &mut rng).unwrap();
            for row in soft.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
            }
        }
        let bad = MixConfig { mode: MixMode::Mixup, alpha: 0.0, passes: 1 };
        assert!(eval_phase_mix(&images, &targets, &bad, &mut rng).is_err());
    }
}
