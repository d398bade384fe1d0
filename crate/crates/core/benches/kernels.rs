use caranet::data::{batch, synthesize, SyntheticSpec};
use caranet::model::{CaraNet, CaraNetConfig};
use caranet::par::set_parallel;
use caranet::train::{train_step, Adam, AdamConfig};
use caranet::{Tape, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

fn modes() -> [(&'static str, bool); 2] {
    [("parallel", true), ("sequential", false)]
}

fn conv(c: &mut Criterion) {
    let x = Tensor::<f32>::from_fn(&[4, 16, 64, 64], |i| (i % 7) as f32 * 0.1);
    let w = Tensor::<f32>::from_fn(&[16, 16, 3, 3], |i| (i % 5) as f32 * 0.01);
    let mut g = c.benchmark_group("conv3x3_fwd_bwd");
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_parallel(on);
            b.iter(|| {
                let tape = Tape::new();
                let xv = tape.var(x.clone());
                let wv = tape.var(w.clone());
                let y = xv.conv2d(wv, None, 1, 1, 1).unwrap().sum().unwrap();
                black_box(y.backward().unwrap());
            })
        });
    }
    g.finish();
    set_parallel(true);
}

fn step(c: &mut Criterion) {
    let spec = SyntheticSpec::default();
    let samples: Vec<_> = (0..4).map(|i| synthesize(&spec, i).unwrap()).collect();
    let refs: Vec<_> = samples.iter().collect();
    let (x, y) = batch(&refs).unwrap();
    let mut g = c.benchmark_group("train_step_64px_batch4");
    g.sample_size(10);
    for (name, on) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_parallel(on);
            let mut net = CaraNet::<f32>::new(CaraNetConfig::default()).unwrap();
            let mut opt = Adam::new(AdamConfig::default(), &net.params);
            b.iter(|| black_box(train_step(&mut net, &mut opt, &x, &y).unwrap()))
        });
    }
    g.finish();
    set_parallel(true);
}

criterion_group!(benches, conv, step);
criterion_main!(benches);
