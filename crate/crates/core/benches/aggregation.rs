use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use daam::fixture::RandomFixture;
use daam::seg_eval::{evaluate, random_baseline, EvalConfig, EvalPair, GroundTruthSegment, Method, Restriction};
use daam::{token_heat_maps, AttributionConfig, Execution, UpscaleMode};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn heat_maps(c: &mut Criterion) {
    let dump = RandomFixture {
        layers: 5,
        steps: 10,
        tokens: 32,
        seed: 1,
        latent: 32,
        pixel_ratio: 8,
    }
    .build()
    .unwrap();
    let tokens: Vec<usize> = (0..32).collect();
    let mut group = c.benchmark_group("token_heat_maps");
    group.sample_size(20);
    for upscale in [UpscaleMode::SumPreservingDeconv, UpscaleMode::Bicubic] {
        for (name, execution) in MODES {
            let cfg = AttributionConfig {
                mode: upscale,
                execution,
                ..Default::default()
            };
            group.bench_with_input(BenchmarkId::new(name, upscale), &cfg, |b, cfg| {
                b.iter(|| token_heat_maps(black_box(&dump), &tokens, cfg).unwrap())
            });
        }
    }
    group.finish();
}

fn scoring(c: &mut Criterion) {
    let pairs: Vec<EvalPair> = (0..256)
        .map(|i| EvalPair {
            method: Method::Random,
            prediction: random_baseline(256, 256, i),
            truth: GroundTruthSegment {
                image_id: format!("img{i}"),
                noun: "cat".into(),
                class_label: Some("cat".into()),
                mask: random_baseline(256, 256, i + 1000),
            },
        })
        .collect();
    let mut group = c.benchmark_group("evaluate");
    for (name, execution) in MODES {
        let cfg = EvalConfig {
            restriction: Restriction::Open,
            execution,
        };
        group.bench_function(name, |b| b.iter(|| evaluate(black_box(&pairs), &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, heat_maps, scoring);
criterion_main!(benches);
