use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use maxca_bench::{input, param};
use maxca_core::backward;
use maxca_core::nn::conv3d;
use maxca_core::ops::sum;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d_forward");
    for (cin, cout, r) in [(2usize, 8usize, 32usize), (8, 8, 32), (16, 16, 16), (32, 32, 8)] {
        let x = input(&[cin, r, r, r], 0.1);
        let w = input(&[cout, cin, 3, 3, 3], 0.2);
        let id = format!("{cin}x{cout}@{r}");
        g.bench_with_input(BenchmarkId::from_parameter(id), &r, |b, _| {
            b.iter(|| conv3d(&x, &w, None, 1, 1).unwrap())
        });
    }
    g.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d_backward");
    g.sample_size(20);
    for (ch, r) in [(8usize, 32usize), (16, 16)] {
        let x = param(&[ch, r, r, r], 0.3);
        let w = param(&[ch, ch, 3, 3, 3], 0.4);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{ch}@{r}")), &r, |b, _| {
            b.iter(|| {
                let y = conv3d(&x, &w, None, 1, 1).unwrap();
                backward(&sum(&y).unwrap()).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, forward_backward);
criterion_main!(benches);
