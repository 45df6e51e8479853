use crate::mil_slide::{AttentionBag, TileCoord};
use crate::seeds::derive_seed;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Embedding-level bags: background instances are standard normal, signal
/// instances are shifted along a fixed random direction. A bag is positive
/// iff it holds at least `positive_min` signal instances; negative bags hold none.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagSpec {
    pub n_bags: usize,
    pub instances: usize,
    pub dim: usize,
    pub signal_shift: f64,
    pub positive_min: usize,
    pub positive_max: usize,
    pub seed: u64,
}

impl Default for BagSpec {
    fn default() -> Self {
        Self { n_bags: 200, instances: 20, dim: 32, signal_shift: 3.0, positive_min: 2, positive_max: 5, seed: 0 }
    }
}

pub struct SynthBags {
    pub bags: Vec<AttentionBag>,
    pub class_names: Vec<String>,
    /// `signal[b][m]` marks signal instances.
    pub signal: Vec<Vec<bool>>,
}

pub fn synth_bags(spec: &BagSpec) -> SynthBags {
    let mut dir_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0]));
    let mut u: Array1<f64> = Array1::from_shape_fn(spec.dim, |_| StandardNormal.sample(&mut dir_rng));
    u /= u.dot(&u).sqrt();
    let side = 64;
    let cols = (spec.instances as f64).sqrt().ceil() as u64;
    let mut bags = Vec::with_capacity(spec.n_bags);
    let mut signal = Vec::with_capacity(spec.n_bags);
    for b in 0..spec.n_bags {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1, b as u64]));
        let label = b % 2;
        let k = if label == 1 { rng.random_range(spec.positive_min..=spec.positive_max) } else { 0 };
        let mut mask: Vec<bool> = (0..spec.instances).map(|m| m < k).collect();
        mask.shuffle(&mut rng);
        let mut x = Array2::from_shape_fn((spec.instances, spec.dim), |_| StandardNormal.sample(&mut rng));
        for (m, &s) in mask.iter().enumerate() {
            if s {
                x.row_mut(m).scaled_add(spec.signal_shift, &u);
            }
        }
        let coords = (0..spec.instances as u64).map(|m| TileCoord { x: (m % cols) * side, y: (m / cols) * side, side }).collect();
        bags.push(AttentionBag::new(format!("bag{b:04}"), x, coords, label));
        signal.push(mask);
    }
    SynthBags { bags, class_names: vec!["negative".into(), "positive".into()], signal }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_follow_signal_counts() {
        let s = synth_bags(&BagSpec { n_bags: 40, ..Default::default() });
        for (b, m) in s.bags.iter().zip(&s.signal) {
            let k = m.iter().filter(|&&v| v).count();
            assert_eq!(b.label == 1, k >= 2);
            assert_eq!(b.len(), 20);
        }
    }
}
