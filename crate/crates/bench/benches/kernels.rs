use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use irsim::asymptotics::{det_sinr_de, det_sinr_onoff};
use irsim::montecarlo::run_trial;
use irsim::phase_opt::sum_rate_gradient;
use irsim::Stream;
use irsim_bench::{context, PROTOCOLS};

fn det_equivalents(c: &mut Criterion) {
    let mut group = c.benchmark_group("det_equivalent");
    for size in [16, 48] {
        let ctx = context(size);
        let v = ctx.v.clone().expect("fixed phases");
        let onoff = ctx.onoff.as_ref().unwrap();
        let de = ctx.de.as_ref().unwrap();
        group.bench_with_input(BenchmarkId::new("onoff", size), &size, |b, _| {
            b.iter(|| det_sinr_onoff(onoff, &v, &ctx.config))
        });
        group.bench_with_input(BenchmarkId::new("de", size), &size, |b, _| b.iter(|| det_sinr_de(de, &ctx.config)));
    }
    group.finish();
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("sum_rate_gradient");
    for size in [16, 48] {
        let ctx = context(size);
        let v = ctx.v.clone().expect("fixed phases");
        let onoff = ctx.onoff.as_ref().unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| sum_rate_gradient(onoff, &v, &ctx.config))
        });
    }
    group.finish();
}

fn trial(c: &mut Criterion) {
    let mut group = c.benchmark_group("trial");
    group.sample_size(20);
    for size in [16, 48] {
        let ctx = context(size);
        let mut i = 0u64;
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| {
                i += 1;
                run_trial(&ctx, &PROTOCOLS, Stream::new(7).path(&[0, i]))
            })
        });
    }
    group.finish();
}

criterion_group!(benches, det_equivalents, gradient, trial);
criterion_main!(benches);
