//! In-memory labelled tile collections.

use crate::error::{Error, Result};
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default)]
pub struct TileSet {
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub ids: Vec<String>,
}

impl TileSet {
    pub fn new(class_names: Vec<String>) -> Self {
        Self { class_names, ..Default::default() }
    }

    pub fn push(&mut self, id: impl Into<String>, image: RgbImage, label: usize) {
        self.ids.push(id.into());
        self.images.push(image);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, idx: &[usize]) -> TileSet {
        TileSet {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Seeded split keeping class proportions: returns (train, test) indices.
    pub fn stratified_split(&self, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        stratified_split(&self.labels, self.n_classes(), test_fraction, seed)
    }

    /// Exactly `train_per_class` + `test_per_class` samples from every class,
    /// or an error listing classes that fall short.
    pub fn balanced_split(&self, train_per_class: usize, test_per_class: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
        balanced_indices(&self.labels, &self.class_names, train_per_class, test_per_class, seed)
    }
}

/// Exactly `train_per_class` + `test_per_class` indices per class, or an
/// error listing classes that fall short as `name (have/need)`.
pub fn balanced_indices(
    labels: &[usize],
    class_names: &[String],
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let need = train_per_class + test_per_class;
    let deficient: Vec<String> = (0..class_names.len())
        .filter_map(|c| {
            let have = by_class.get(&c).map_or(0, Vec::len);
            (have < need).then(|| format!("{} ({have}/{need})", class_names[c]))
        })
        .collect();
    if !deficient.is_empty() {
        return Err(Error::DeficientClasses(deficient.join(", ")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        train.extend_from_slice(&idx[..train_per_class]);
        test.extend_from_slice(&idx[train_per_class..need]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn stratified_split(labels: &[usize], n_classes: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for c in 0..n_classes {
        let mut idx: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
        idx.shuffle(&mut rng);
        let n_test = ((idx.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(idx.len().saturating_sub(1));
        test.extend_from_slice(&idx[..n_test]);
        train.extend_from_slice(&idx[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(counts: &[usize]) -> TileSet {
        let mut s = TileSet::new((0..counts.len()).map(|c| format!("c{c}")).collect());
        for (c, &n) in counts.iter().enumerate() {
            for i in 0..n {
                s.push(format!("{c}-{i}"), RgbImage::new(2, 2), c);
            }
        }
        s
    }

    #[test]
    fn balanced_split_exact_counts() {
        let s = set(&[10, 12, 9]);
        let (tr, te) = s.balanced_split(5, 3, 1).unwrap();
        assert_eq!(s.subset(&tr).class_counts(), vec![5, 5, 5]);
        assert_eq!(s.subset(&te).class_counts(), vec![3, 3, 3]);
        assert!(tr.iter().all(|i| !te.contains(i)));
    }

    #[test]
    fn balanced_split_lists_deficient_classes() {
        let err = set(&[10, 4, 9]).balanced_split(5, 3, 1).unwrap_err().to_string();
        assert!(err.contains("c1 (4/8)"), "{err}");
        assert!(!err.contains("c0"));
    }
}
