use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng as _;

use jpop_core::eval::{bootstrap_ci, BootstrapConfig, Metric, PredictionSet};
use jpop_core::imaging::Gray;
use jpop_core::models::{PretextModel, PretextModelConfig};
use jpop_core::par::{self, ExecMode};
use jpop_core::patchgen::{make_jumbled_sample_seeded, Frame, JumbledSample, PatchGeometry};
use jpop_core::permset::{generate_candidate_pool, sample_class_set};
use jpop_core::seed;

const MODES: [ExecMode; 2] = [ExecMode::Sequential, ExecMode::Parallel];

fn frames(n: usize, size: usize) -> Vec<Frame> {
    let mut rng = seed::rng(1);
    (0..n)
        .map(|i| {
            let data = (0..size * size).map(|_| rng.random::<f32>()).collect();
            Frame::new(Gray::from_vec(size, size, data).unwrap(), "bench", i)
        })
        .collect()
}

fn jumbled_batches(c: &mut Criterion) {
    let pset = sample_class_set(&generate_candidate_pool(9, 4, false).unwrap(), 100, 0).unwrap();
    let geo = PatchGeometry::default();
    let batch = frames(32, geo.frame_size);
    let mut g = c.benchmark_group("jumbled_batch_32");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| {
                par::map_range(mode, batch.len(), |i| {
                    make_jumbled_sample_seeded(&batch[i], &pset, &geo, i as u64).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn pretext_forward(c: &mut Criterion) {
    let cfg = PretextModelConfig {
        patch_size: 32,
        class_count: 100,
        ..Default::default()
    }
    .scaled(8);
    let model = PretextModel::<f32>::build_init(&cfg, 0).unwrap();
    let pset = sample_class_set(&generate_candidate_pool(9, 4, false).unwrap(), 100, 0).unwrap();
    let geo = PatchGeometry::new(128, 32).unwrap();
    let samples: Vec<JumbledSample> = frames(16, 128)
        .iter()
        .enumerate()
        .map(|(i, f)| make_jumbled_sample_seeded(f, &pset, &geo, i as u64).unwrap())
        .collect();
    let refs: Vec<&JumbledSample> = samples.iter().collect();
    let x = model.input_tensor(&refs);
    let mut g = c.benchmark_group("pretext_forward_16");
    g.sample_size(10);
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            par::set_global_mode(mode);
            b.iter(|| model.forward(&x));
        });
    }
    par::set_global_mode(ExecMode::Parallel);
    g.finish();
}

fn bootstrap(c: &mut Criterion) {
    let mut rng = seed::rng(2);
    let labels: Vec<u8> = (0..120).map(|i| (i % 3 == 0) as u8).collect();
    let scores: Vec<f64> = (0..120).map(|_| rng.random()).collect();
    let preds = PredictionSet::from_pairs(&labels, &scores).unwrap();
    let cfg = BootstrapConfig::default();
    let mut g = c.benchmark_group("bootstrap_auc_1000");
    for mode in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{mode:?}")), &mode, |b, &mode| {
            b.iter(|| bootstrap_ci(&preds, Metric::Auc, &cfg, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, jumbled_batches, pretext_forward, bootstrap);
criterion_main!(benches);
