//! Fixtures shared by the benchmarks.

use fogguard_core::data::{synth_multiview, SplitMode};
use fogguard_core::topology::{build_distributed, camera_reference_topology, health_reference_topology};
use fogguard_core::{Dataset, DistributedDnn, SkipPolicy, SynthMultiViewSpec};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn health_model(policy: &SkipPolicy) -> DistributedDnn<f32> {
    let (spec, nodes, partition) = health_reference_topology();
    DistributedDnn::initialize(build_distributed(&spec, &nodes, &partition, policy).unwrap(), 0)
}

pub fn camera_model(policy: &SkipPolicy) -> DistributedDnn<f32> {
    let (spec, nodes, partition) = camera_reference_topology();
    DistributedDnn::initialize(build_distributed(&spec, &nodes, &partition, policy).unwrap(), 0)
}

/// Uniform noise shaped like the health sensor windows.
pub fn health_data(rows: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Array2::from_shape_fn((rows, 23), |_| rng.random_range(-1.0f32..1.0));
    let labels = (0..rows).map(|_| rng.random_range(0..12)).collect();
    Dataset::new(vec![x], labels, 12).unwrap().with_splits(SplitMode::PerRow, 0).unwrap()
}

pub fn camera_data() -> Dataset {
    synth_multiview(&SynthMultiViewSpec::default()).unwrap()
}

pub fn random_vector(len: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}
