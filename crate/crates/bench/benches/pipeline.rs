use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tadet_bench::{assignment_fixture, candidates, model_fixture, random_signal, videos_fixture};
use tadet_core::dataset::Dataset;
use tadet_core::diff::dft;
use tadet_core::evaluation::{map_report, EvalProtocol};
use tadet_core::inference::{infer, infer_all, soft_nms};
use tadet_core::model;
use tadet_core::training::trainer::loss_and_grads;

fn kernels(c: &mut Criterion) {
    let x = random_signal(64, 256, 1);
    c.bench_function("dft_64x256", |b| b.iter(|| dft(black_box(&x))));
    let cands = candidates(200, 5, 2);
    c.bench_function("soft_nms_200", |b| {
        b.iter(|| soft_nms(black_box(&cands), 0.5, 0.001))
    });
}

fn model_passes(c: &mut Criterion) {
    let (cfg, params) = model_fixture(0);
    let ds = videos_fixture(2, 0);
    let v = &ds.videos[0];
    let assign = assignment_fixture(&ds, 0, &cfg);
    let mut group = c.benchmark_group("model_t256");
    group.sample_size(10);
    group.bench_function("forward", |b| {
        b.iter(|| model::predict(&params, &cfg.model(), black_box(&v.features)).unwrap())
    });
    group.bench_function("train_step_grads", |b| {
        b.iter(|| loss_and_grads(&params, &cfg, black_box(&v.features), &assign).unwrap())
    });
    group.bench_function("infer", |b| {
        b.iter(|| infer(black_box(v), &params, &cfg).unwrap())
    });
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let (cfg, params) = model_fixture(0);
    let ds = videos_fixture(8, 3);
    let videos: Vec<_> = ds.videos.iter().collect();
    let dets = infer_all(&videos, &params, &cfg).unwrap();
    let gts = Dataset::ground_truth(videos.iter().copied());
    let protocol = EvalProtocol::new(cfg.eval.thresholds.clone(), ds.classes.clone()).unwrap();
    c.bench_function("map_report_8_videos", |b| {
        b.iter(|| map_report(black_box(&dets), &gts, &protocol))
    });
}

criterion_group!(benches, kernels, model_passes, evaluation);
criterion_main!(benches);
