use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tapsense_core::audio::{DescriptorExtractor, DescriptorParams, MelExtractor, StrikeClip, CLIP_LEN};
use tapsense_core::exec::Exec;
use tapsense_core::geometry::Vec3;
use tapsense_core::refine::{refine, RefineConfig};
use tapsense_core::shape::{chamfer, ChamferVariant};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn clips(n: usize) -> Vec<StrikeClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|_| {
            let f = rng.random_range(200.0..5000.0);
            let s = (0..CLIP_LEN)
                .map(|t| {
                    let t = t as f64 / 44100.0;
                    (0.5 * (-20.0 * t).exp() * (std::f64::consts::TAU * f * t).sin()) as f32
                })
                .collect();
            StrikeClip::from_samples(s).unwrap()
        })
        .collect()
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
        .collect()
}

fn bench_audio(c: &mut Criterion) {
    let batch = clips(32);
    let mel = MelExtractor::new(16384.0).unwrap();
    let desc = DescriptorExtractor::new(DescriptorParams::default()).unwrap();
    let mut g = c.benchmark_group("audio_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::new("mel", name), &exec, |b, &e| b.iter(|| mel.extract_batch(e, &batch)));
        g.bench_with_input(BenchmarkId::new("descriptors", name), &exec, |b, &e| {
            b.iter(|| desc.extract_batch(e, &batch))
        });
    }
    g.finish();
}

fn bench_chamfer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Vec<Vec3>, Vec<Vec3>)> = (0..64).map(|_| (cloud(&mut rng, 2000), cloud(&mut rng, 2000))).collect();
    let mut g = c.benchmark_group("chamfer_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| e.map(&pairs, |(a, p)| chamfer(a, p, ChamferVariant::L1).unwrap()))
        });
    }
    g.finish();
}

fn bench_refine(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pts = cloud(&mut rng, 5000);
    let labels: Vec<u8> = pts.iter().map(|p| if rng.random::<f64>() < 0.3 { rng.random_range(0..9) } else { (p.x * 3.0) as u8 }).collect();
    let cfg = RefineConfig::new(8, 3, 25).unwrap();
    let mut g = c.benchmark_group("refine");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| refine(&pts, &labels, &cfg, e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_audio, bench_chamfer, bench_refine);
criterion_main!(benches);
