//! Datasets: ingestion, splitting, standardization and synthetic
//! generation.

mod container;
mod mhealth;
mod synth;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{read_dataset, write_dataset, DATASET_MAGIC};
pub use mhealth::{load_mhealth, ColumnMap, MHealthOptions, MHEALTH_CLASSES, MHEALTH_FEATURES};
pub use synth::{synth_multiview, SynthMultiViewSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Rows are shuffled and cut 80/10/10.
    #[default]
    PerRow,
    /// Whole subjects are shuffled and assigned to splits.
    PerSubject,
}

/// Disjoint, exhaustive train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Seeded 80/10/10 row split of `n` items.
    pub fn per_row(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (n as f64 * 0.8).round() as usize;
        let n_val = (n as f64 * 0.1).round() as usize;
        let test = idx.split_off((n_train + n_val).min(n));
        let val = idx.split_off(n_train.min(idx.len()));
        Self { train: idx, val, test }
    }

    /// Seeded split by group (e.g. subject): groups are shuffled and the
    /// first 80% of them train, the next 10% validate, the rest test.
    pub fn per_group(groups: &[u32], seed: u64) -> Self {
        let mut ids: Vec<u32> = groups.to_vec();
        ids.sort_unstable();
        ids.dedup();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (ids.len() as f64 * 0.8).round() as usize;
        let n_val = (ids.len() as f64 * 0.1).round() as usize;
        let mut out = Self::default();
        for (i, g) in groups.iter().enumerate() {
            let rank = ids.iter().position(|x| x == g).expect("group present");
            if rank < n_train {
                out.train.push(i);
            } else if rank < n_train + n_val {
                out.val.push(i);
            } else {
                out.test.push(i);
            }
        }
        out
    }
}

/// Labeled instances with one feature matrix per input view.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One `N × D` matrix per view; single-view data has one entry.
    pub views: Vec<Array2<f32>>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub splits: Splits,
    /// Optional group id per row (the subject for MHealth).
    pub groups: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(views: Vec<Array2<f32>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let n = labels.len();
        if views.is_empty() || views.iter().any(|v| v.nrows() != n) {
            return Err(Error::Dataset("every view needs one row per label".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange { label: bad, classes: class_count });
        }
        Ok(Self { views, labels, class_count, splits: Splits::default(), groups: None })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn view_dim(&self) -> usize {
        self.views[0].ncols()
    }

    pub fn split(&self, kind: SplitKind) -> &[usize] {
        match kind {
            SplitKind::Train => &self.splits.train,
            SplitKind::Val => &self.splits.val,
            SplitKind::Test => &self.splits.test,
        }
    }

    pub fn with_splits(mut self, mode: SplitMode, seed: u64) -> Result<Self> {
        self.splits = match mode {
            SplitMode::PerRow => Splits::per_row(self.len(), seed),
            SplitMode::PerSubject => {
                let groups =
                    self.groups.as_ref().ok_or_else(|| Error::Dataset("per-subject split needs subject ids".into()))?;
                Splits::per_group(groups, seed)
            }
        };
        Ok(self)
    }

    /// Rows `indices` of every view.
    pub fn gather(&self, indices: &[usize]) -> Vec<Array2<f32>> {
        self.views.iter().map(|v| v.select(Axis(0), indices)).collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Zero-mean, unit-variance scaling of every column using statistics
    /// from the train split only. Constant columns are only centered.
    pub fn standardize(&mut self) -> Result<()> {
        if self.splits.train.is_empty() {
            return Err(Error::Dataset("standardization needs a non-empty train split".into()));
        }
        let train = self.splits.train.clone();
        for view in &mut self.views {
            let rows = view.select(Axis(0), &train);
            let mean = rows.mean_axis(Axis(0)).expect("non-empty");
            let std = rows.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
            *view -= &mean;
            *view /= &std;
        }
        Ok(())
    }

    /// Keeps a seeded random subset of `n` rows (all rows if `n` ≥ len).
    /// Splits are cleared and must be recomputed.
    pub fn subsample(mut self, n: usize, seed: u64) -> Self {
        if n >= self.len() {
            return self;
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(n);
        idx.sort_unstable();
        self.views = self.gather(&idx);
        self.labels = self.labels_of(&idx);
        self.groups = self.groups.map(|g| idx.iter().map(|&i| g[i]).collect());
        self.splits = Splits::default();
        self
    }

    pub fn class_counts(&self, indices: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &i in indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

/// Inverse-frequency class weights over the train split,
/// `N / (K · N_c)`, rescaled to mean 1.
pub fn class_weights(data: &Dataset) -> Result<Vec<f64>> {
    let counts = data.class_counts(&data.splits.train);
    if data.splits.train.is_empty() {
        return Err(Error::Dataset("train split is empty".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Dataset(format!("class {c} has no training examples")));
    }
    Ok(normalized_inverse_frequency(&counts))
}

pub(crate) fn normalized_inverse_frequency(counts: &[usize]) -> Vec<f64> {
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| n as f64 / (k * c as f64)).collect();
    let mean = raw.iter().sum::<f64>() / k;
    raw.into_iter().map(|w| w / mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn toy(labels: Vec<usize>, k: usize) -> Dataset {
        let n = labels.len();
        let x = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f32);
        Dataset::new(vec![x], labels, k).unwrap()
    }

    #[test]
    fn row_split_is_disjoint_exhaustive_and_80_10_10() {
        for n in [10usize, 97, 1000, 1401] {
            let s = Splits::per_row(n, 3);
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let nf = n as f64;
            assert!((s.train.len() as f64 - 0.8 * nf).abs() <= 1.0);
            assert!((s.val.len() as f64 - 0.1 * nf).abs() <= 1.0);
            assert!((s.test.len() as f64 - 0.1 * nf).abs() <= 1.0);
        }
        assert_eq!(Splits::per_row(50, 1), Splits::per_row(50, 1));
        assert_ne!(Splits::per_row(50, 1), Splits::per_row(50, 2));
    }

    #[test]
    fn group_split_keeps_groups_together() {
        let groups: Vec<u32> = (0..100).map(|i| (i % 10) as u32).collect();
        let s = Splits::per_group(&groups, 4);
        let owner = |i: &usize| groups[*i];
        let train: std::collections::BTreeSet<u32> = s.train.iter().map(owner).collect();
        let test: std::collections::BTreeSet<u32> = s.test.iter().map(owner).collect();
        assert_eq!(train.len(), 8);
        assert!(train.is_disjoint(&test));
        assert_eq!(s.train.len() + s.val.len() + s.test.len(), 100);
    }

    #[test]
    fn standardization_uses_train_statistics() {
        let mut d = toy((0..20).map(|i| i % 2).collect(), 2).with_splits(SplitMode::PerRow, 1).unwrap();
        d.standardize().unwrap();
        let train = d.gather(&d.splits.train.clone()).remove(0);
        let mean = train.mean_axis(Axis(0)).unwrap();
        let std = train.std_axis(Axis(0), 0.0);
        for j in 0..2 {
            assert!(mean[j].abs() < 1e-5);
            assert!((std[j] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn balanced_classes_get_unit_weights() {
        let d = toy((0..30).map(|i| i % 3).collect(), 3);
        let d = Dataset { splits: Splits { train: (0..30).collect(), ..Default::default() }, ..d };
        assert_eq!(class_weights(&d).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn inverse_frequency_weights_for_90_10() {
        // Raw weights N/(K·N_c) are (5/9, 5); rescaling keeps their ratio and sets the mean to 1.
        let w = normalized_inverse_frequency(&[90, 10]);
        let raw: [f64; 2] = [100.0 / 180.0, 100.0 / 20.0];
        assert!((raw[0] - 5.0 / 9.0).abs() < 1e-15 && (raw[1] - 5.0).abs() < 1e-15);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
        assert!((w[1] / w[0] - raw[1] / raw[0]).abs() < 1e-9);
        assert!((w[0] - 0.2).abs() < 1e-12 && (w[1] - 1.8).abs() < 1e-12);
    }

    #[test]
    fn missing_class_is_an_error() {
        let d = toy(vec![0, 0, 1, 1], 3);
        let d = Dataset { splits: Splits { train: vec![0, 1, 2, 3], ..Default::default() }, ..d };
        assert!(class_weights(&d).is_err());
    }

    #[test]
    fn subsample_is_seeded() {
        let d = toy((0..100).map(|i| i % 4).collect(), 4);
        let a = d.clone().subsample(30, 8);
        let b = d.clone().subsample(30, 8);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert_eq!(d.clone().subsample(500, 8).len(), 100);
    }
}
