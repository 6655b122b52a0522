use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use kinetok::lm::{LanguageModel, LmConfig};
use kinetok::nn::{ops, Tensor};
use kinetok::tokenizer::{nearest, VqConfig, VqVae};
use kinetok::motion::{Embodiment, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn gemm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("linear");
    for &d in &[64usize, 128, 256] {
        let x = random(64 * d, &mut rng);
        let w = random(d * d, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(d), &d, |b, &d| {
            b.iter(|| ops::linear(black_box(&x), 64, black_box(&w), d, d, None))
        });
    }
    group.finish();
}

fn attention(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (t, d) = (128, 128);
    let q = random(t * d, &mut rng);
    let k = random(t * d, &mut rng);
    let v = random(t * d, &mut rng);
    c.bench_function("causal_attention_128x128", |b| {
        b.iter(|| ops::causal_attention(black_box(&q), &k, &v, t, d, 4))
    });
}

fn quantize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let entries = Tensor::new(vec![512, 64], random(512 * 64, &mut rng)).unwrap();
    let z = random(64, &mut rng);
    c.bench_function("nearest_code_512x64", |b| b.iter(|| nearest(black_box(&entries), black_box(&z))));
}

fn tokenizer_encode(c: &mut Criterion) {
    let vq = VqVae::new(VqConfig { code_dim: 64, ..VqConfig::robot() }, 0.1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let poses = (0..80).map(|_| (0..3).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
    let traj = Trajectory::new(Embodiment::Robot, 0.1, poses).unwrap();
    c.bench_function("vq_encode_80_frames", |b| b.iter(|| vq.encode_trajectory(black_box(&traj)).unwrap()));
}

fn decode_step(c: &mut Criterion) {
    let lm = LanguageModel::new(
        LmConfig {
            d_model: 128,
            ..LmConfig::default()
        },
        0,
    )
    .unwrap();
    let prompt: Vec<usize> = (0..48).map(|i| (i * 31) % 1693).collect();
    c.bench_function("lm_cached_decode_48_tokens", |b| {
        b.iter(|| {
            let mut cache = lm.new_cache();
            for &t in &prompt {
                black_box(lm.step(&mut cache, t).unwrap());
            }
        })
    });
}

criterion_group!(benches, gemm, attention, quantize, tokenizer_encode, decode_step);
criterion_main!(benches);
