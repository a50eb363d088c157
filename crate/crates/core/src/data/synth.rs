//! Synthetic multi-camera data: every instance is a set of views of one
//! object, each view a noisy rendering of a per-(class, camera) prototype.
//! Views in which the object is "not visible" are all-zero images.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, SplitMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthMultiViewSpec {
    pub instances: usize,
    pub views: usize,
    pub view_dim: usize,
    pub classes: usize,
    /// Relative class frequencies; normalized internally.
    pub class_skew: Vec<f64>,
    /// Probability that a view is replaced by an all-zero image.
    pub occlusion_rate: f64,
    /// Standard deviation of per-pixel noise around the prototype.
    pub noise: f64,
    pub seed: u64,
    pub split_seed: u64,
}

impl Default for SynthMultiViewSpec {
    fn default() -> Self {
        Self {
            instances: 1400,
            views: 6,
            view_dim: 32 * 32 * 3,
            classes: 3,
            // pedestrian, car, bus
            class_skew: vec![0.30, 0.60, 0.10],
            occlusion_rate: 0.25,
            noise: 0.35,
            seed: 7,
            split_seed: 2019,
        }
    }
}

pub fn synth_multiview(spec: &SynthMultiViewSpec) -> Result<Dataset> {
    if spec.class_skew.len() != spec.classes || spec.classes == 0 {
        return Err(Error::Config("class_skew needs one entry per class".into()));
    }
    if !(0.0..=1.0).contains(&spec.occlusion_rate) || spec.noise < 0.0 {
        return Err(Error::Config("occlusion_rate must be in [0,1], noise ≥ 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_dist = WeightedIndex::new(&spec.class_skew).map_err(|e| Error::Config(format!("class_skew: {e}")))?;
    let noise = Normal::new(0.0, spec.noise).expect("valid std");

    let prototypes: Vec<Vec<Vec<f32>>> = (0..spec.classes)
        .map(|_| (0..spec.views).map(|_| (0..spec.view_dim).map(|_| rng.random::<f32>()).collect()).collect())
        .collect();

    let labels: Vec<usize> = (0..spec.instances).map(|_| class_dist.sample(&mut rng)).collect();
    let mut views: Vec<Array2<f32>> = (0..spec.views).map(|_| Array2::zeros((spec.instances, spec.view_dim))).collect();
    for (i, &label) in labels.iter().enumerate() {
        for (v, view) in views.iter_mut().enumerate() {
            if rng.random_bool(spec.occlusion_rate) {
                continue;
            }
            let proto = &prototypes[label][v];
            let mut row = view.row_mut(i);
            for (px, &p) in row.iter_mut().zip(proto) {
                *px = (p + noise.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
        }
    }
    Dataset::new(views, labels, spec.classes)?.with_splits(SplitMode::PerRow, spec.split_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthMultiViewSpec {
        SynthMultiViewSpec { instances: 200, view_dim: 16, ..Default::default() }
    }

    #[test]
    fn defaults_match_corpus_shape() {
        let d = synth_multiview(&SynthMultiViewSpec::default()).unwrap();
        assert_eq!(d.len(), 1400);
        assert_eq!(d.views.len(), 6);
        assert_eq!(d.view_dim(), 3072);
        assert_eq!(d.class_count, 3);
        let counts = d.class_counts(&(0..d.len()).collect::<Vec<_>>());
        assert_eq!(counts.iter().enumerate().max_by_key(|c| c.1).unwrap().0, 1);
    }

    #[test]
    fn zero_occlusion_means_no_blank_views() {
        let spec = SynthMultiViewSpec { occlusion_rate: 0.0, ..small() };
        let d = synth_multiview(&spec).unwrap();
        for view in &d.views {
            assert!(view.rows().into_iter().all(|r| r.iter().any(|&x| x != 0.0)));
        }
        let spec = SynthMultiViewSpec { occlusion_rate: 1.0, ..small() };
        let d = synth_multiview(&spec).unwrap();
        assert!(d.views.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        assert_eq!(synth_multiview(&small()).unwrap(), synth_multiview(&small()).unwrap());
        let other = SynthMultiViewSpec { seed: 8, ..small() };
        assert_ne!(synth_multiview(&small()).unwrap(), synth_multiview(&other).unwrap());
    }

    #[test]
    fn class_frequencies_follow_skew() {
        let spec = SynthMultiViewSpec { instances: 10_000, view_dim: 1, views: 1, ..Default::default() };
        let d = synth_multiview(&spec).unwrap();
        let counts = d.class_counts(&(0..d.len()).collect::<Vec<_>>());
        let total: f64 = spec.class_skew.iter().sum();
        let chi2: f64 = counts
            .iter()
            .zip(&spec.class_skew)
            .map(|(&o, &p)| {
                let e = 10_000.0 * p / total;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        // 99.9th percentile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 13.82, "chi2 = {chi2}");
    }
}
