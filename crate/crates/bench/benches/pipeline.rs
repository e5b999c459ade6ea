use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use stylemix_bench::{Fixture, SENTENCE};
use stylemix_core::math::SeededRng;
use stylemix_core::metrics::{meaning_score, style_embed};
use stylemix_core::mixing::{merge_into_base, mix_layerwise};
use stylemix_core::model::{decode, decode_group, forward_logits, Decoding};
use stylemix_core::optim::grpo_weight_gradient;

const SAMPLE: Decoding = Decoding::Sample {
    temperature: 1.0,
    top_p: 0.95,
};

fn model(c: &mut Criterion) {
    let fx = Fixture::new(2);
    c.bench_function("forward_prompt", |b| {
        b.iter(|| forward_logits(&fx.model, &[], black_box(&fx.prompt)).unwrap())
    });
    c.bench_function("decode_48", |b| {
        b.iter(|| {
            let mut rng = SeededRng::new(1);
            decode(&fx.model, &fx.prompt, SAMPLE, 48, Some(&mut rng)).unwrap()
        })
    });
    c.bench_function("decode_group_8x48", |b| {
        b.iter(|| {
            let mut rngs: Vec<SeededRng> = (0..8).map(SeededRng::new).collect();
            decode_group(&fx.model, &fx.prompt, SAMPLE, 48, &mut rngs).unwrap()
        })
    });
}

fn mixing(c: &mut Criterion) {
    let fx = Fixture::new(3);
    c.bench_function("mix_and_merge_k3", |b| {
        b.iter(|| merge_into_base(&fx.model, &mix_layerwise(&fx.adapters, black_box(&fx.weights)).unwrap()).unwrap())
    });
}

fn gradient(c: &mut Criterion) {
    let fx = Fixture::new(2);
    let mut rngs: Vec<SeededRng> = (0..8).map(SeededRng::new).collect();
    let group = decode_group(&fx.model, &fx.prompt, SAMPLE, 48, &mut rngs).unwrap();
    let completions: Vec<Vec<usize>> = group.iter().map(|s| s.completion()).filter(|c| !c.is_empty()).collect();
    let advantages: Vec<f64> = (0..completions.len())
        .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let mut g = c.benchmark_group("grpo");
    g.sample_size(10);
    g.bench_function("weight_gradient_g8", |b| {
        b.iter(|| {
            grpo_weight_gradient(
                &fx.model,
                &fx.expanded,
                &fx.weights,
                &fx.prompt,
                &completions,
                &advantages,
            )
            .unwrap()
        })
    });
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let rewrite = "Lo, the olde hound seeth a quiet hill nigh the river and the miller waiteth!";
    c.bench_function("style_embed", |b| b.iter(|| style_embed(black_box(rewrite)).unwrap()));
    c.bench_function("meaning_score", |b| {
        b.iter(|| meaning_score(black_box(SENTENCE), black_box(rewrite)))
    });
}

criterion_group!(benches, model, mixing, gradient, metrics);
criterion_main!(benches);
