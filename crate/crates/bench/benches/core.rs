use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use fogguard_bench::{camera_data, camera_model, health_data, health_model, random_vector};
use fogguard_core::resiliency::tier_settings;
use fogguard_core::runtime::wire::{decode, encode};
use fogguard_core::runtime::MsgType;
use fogguard_core::{
    average_accuracy, distributed_forward, Experiment, GuessMode, ReliabilityTier, SkipPolicy, SplitKind, WireMessage,
};
use ndarray::ArrayView1;

fn forward(c: &mut Criterion) {
    let input = random_vector(23, 3);
    let view = [ArrayView1::from(input.as_slice())];
    for (name, policy) in [("vanilla", SkipPolicy::None), ("deepfogguard", SkipPolicy::skip_one())] {
        let dnn = health_model(&policy);
        let alive = vec![true; dnn.graph.nodes.len()];
        let mut f2_down = alive.clone();
        f2_down[dnn.graph.node_index("f2").unwrap()] = false;
        c.bench_function(&format!("forward/health/{name}/all_alive"), |b| {
            b.iter(|| distributed_forward(&dnn, black_box(&view), &alive).unwrap())
        });
        c.bench_function(&format!("forward/health/{name}/f2_down"), |b| {
            b.iter(|| distributed_forward(&dnn, black_box(&view), &f2_down).unwrap())
        });
    }
}

fn resiliency(c: &mut Criterion) {
    let mut group = c.benchmark_group("average_accuracy");
    group.sample_size(10);
    let data = health_data(4000);
    let dnn = health_model(&SkipPolicy::skip_one());
    let setting = tier_settings(Experiment::Health, ReliabilityTier::Hazardous);
    group.bench_function("health/exact", |b| {
        b.iter(|| average_accuracy(&dnn, &data, SplitKind::Test, &setting, GuessMode::Expectation).unwrap())
    });
    let data = camera_data();
    let dnn = camera_model(&SkipPolicy::SkipOne { from_iot: false });
    let setting = tier_settings(Experiment::Camera, ReliabilityTier::Hazardous);
    group.bench_function("camera/exact", |b| {
        b.iter(|| average_accuracy(&dnn, &data, SplitKind::Test, &setting, GuessMode::Expectation).unwrap())
    });
    group.finish();
}

fn codec(c: &mut Criterion) {
    for dim in [64, 4096] {
        let msg = WireMessage {
            msg_type: MsgType::Data,
            source_node: 3,
            inference_id: 42,
            payload: Some(random_vector(dim, 5)),
        };
        c.bench_function(&format!("codec/round_trip/{dim}"), |b| b.iter(|| decode(&encode(black_box(&msg))).unwrap()));
    }
}

criterion_group!(benches, forward, resiliency, codec);
criterion_main!(benches);
