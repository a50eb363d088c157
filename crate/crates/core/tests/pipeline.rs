use std::path::Path;
use std::sync::Arc;

use fogguard_core::experiment::evaluate_settings;
use fogguard_core::inference::accuracy;
use fogguard_core::resiliency::tier_settings;
use fogguard_core::runtime::{compare_with_simulator, run_pipeline, RuntimeOptions, ThreadLauncher, Timeouts};
use fogguard_core::{
    average_accuracy, ChaosPlan, Dataset, DistributedDnn, Experiment, GuessMode, LoadedConfig, Prediction,
    ReliabilityTier, SplitKind, Variant,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(name: &str) -> LoadedConfig {
    LoadedConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)).unwrap()
}

fn noise(rows: usize, views: usize, dim: usize, classes: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(rows as u64);
    let x: Vec<Array2<f32>> =
        (0..views).map(|_| Array2::from_shape_fn((rows, dim), |_| rng.random_range(-1.0..1.0))).collect();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(x, labels, classes).unwrap().with_splits(fogguard_core::data::SplitMode::PerRow, 0).unwrap()
}

#[test]
fn shipped_configs_build_both_variants() {
    for (name, skips) in [("health.toml", 3), ("camera.toml", 7)] {
        let loaded = config(name);
        loaded.config.validate().unwrap();
        assert_eq!(loaded.config.graph(Variant::Vanilla).unwrap().skip_count(), 0);
        let dfg = loaded.config.graph(Variant::Deepfogguard).unwrap();
        assert_eq!(dfg.skip_count(), skips, "{name}");
        assert_eq!(loaded.config.reliability_settings(&dfg).unwrap().len(), 4);
    }
}

#[test]
fn average_accuracy_is_the_weighted_sum_over_failure_masks() {
    let cfg = config("health.toml").config;
    let data = noise(600, 1, 23, 12);
    for variant in Variant::BOTH {
        let dnn = DistributedDnn::<f32>::initialize(cfg.graph(variant).unwrap(), 4);
        for tier in ReliabilityTier::ALL {
            let setting = tier_settings(Experiment::Health, tier);
            let report = average_accuracy(&dnn, &data, SplitKind::Test, &setting, GuessMode::Expectation).unwrap();
            let index: Vec<usize> = setting.nodes.iter().map(|id| dnn.graph.node_index(id).unwrap()).collect();
            let mut expected = 0.0;
            for mask in 0u32..1 << setting.len() {
                let mut alive = vec![true; dnn.graph.nodes.len()];
                let mut p = 1.0;
                for (k, (&n, &r)) in index.iter().zip(&setting.survival).enumerate() {
                    let up = mask >> k & 1 == 1;
                    alive[n] = up;
                    p *= if up { r } else { 1.0 - r };
                }
                expected += p * accuracy(&dnn, &data, SplitKind::Test, &alive, GuessMode::Expectation).unwrap();
            }
            assert!((report.average_accuracy - expected).abs() < 1e-12, "{variant} {tier:?}");
        }
        // The shared mask cache must not leak results between settings.
        let settings = cfg.reliability_settings(&dnn.graph).unwrap();
        for (name, shared) in evaluate_settings(&cfg, &dnn, &data, &settings).unwrap() {
            let setting = cfg.setting(&dnn.graph, &name).unwrap();
            let alone = average_accuracy(&dnn, &data, SplitKind::Test, &setting, GuessMode::Expectation).unwrap();
            assert_eq!(shared.average_accuracy, alone.average_accuracy, "{variant} {name}");
        }
    }
}

#[test]
fn threaded_camera_pipeline_survives_an_edge_failure() {
    let cfg = config("camera.toml").config;
    let dnn = Arc::new(DistributedDnn::<f32>::initialize(cfg.graph(Variant::Deepfogguard).unwrap(), 9));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let instances: Vec<Vec<Vec<f32>>> = (0..16)
        .map(|_| (0..6).map(|_| (0..dnn.graph.spec.input_dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect())
        .collect();
    let options = RuntimeOptions {
        timeouts: Timeouts { round_ms: 100, heartbeat_ms: 20, suspicion_ms: 120, connect_retry_ms: 10 },
        ..RuntimeOptions::default()
    };
    let mut launcher = ThreadLauncher::new(dnn.clone());
    let plan = ChaosPlan::kill_at("e2", 6);
    let transcript = run_pipeline(&dnn, &instances, &plan, &mut launcher, &options).unwrap();
    assert_eq!(transcript.records.len(), 16);
    assert!(transcript.records.iter().all(|r| r.predicted != Prediction::RandomGuess));
    let eq = compare_with_simulator(&dnn, &instances, &transcript, 1e-5).unwrap();
    assert!(eq.pass, "{eq:?}");
}
