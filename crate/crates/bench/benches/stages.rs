use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use octds_core::phantom::{build_phantom, simulate_oct, AcquisitionConfig, PhantomModel};
use octds_core::undistort::{enhance, fit_sine, EnhanceParams, RansacParams, SineModel};
use octds_core::{li_threshold_u16, simulate_endo_frames, stitch, unroll_frame, EndoConfig};

fn desk_single_slice() -> AcquisitionConfig {
    let mut cfg = AcquisitionConfig::desk_default();
    cfg.pullback_length_um = cfg.pullback_step_um; // one slice
    cfg
}

fn bench_simulate(c: &mut Criterion) {
    let geom = build_phantom(&PhantomModel::default()).unwrap();
    let cfg = desk_single_slice();
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("slice_1024x512", |b| {
        b.iter(|| simulate_oct(black_box(&geom), black_box(&cfg)).unwrap())
    });
    g.finish();
}

fn bench_enhance(c: &mut Criterion) {
    let geom = build_phantom(&PhantomModel::default()).unwrap();
    let (stack, _) = simulate_oct(&geom, &desk_single_slice()).unwrap();
    let slice = &stack.slices[0];
    let params = EnhanceParams::default();
    let mut g = c.benchmark_group("enhance");
    g.sample_size(10);
    g.bench_function("slice_1024x512", |b| {
        b.iter(|| enhance(black_box(slice), black_box(&params)).unwrap())
    });
    g.finish();
}

fn bench_fit_sine(c: &mut Criterion) {
    let truth = SineModel { a: 14.0, omega: std::f64::consts::TAU / 1024.0, phi: 0.9, d: 90.0 };
    let points: Vec<(f64, f64)> = (0..1024)
        .map(|u| {
            let x = u as f64;
            // Deterministic sub-row jitter stands in for detection error.
            let jitter = ((u * 37 + 11) % 17) as f64 / 17.0 - 0.5;
            (x, truth.eval(x) + jitter)
        })
        .collect();
    let params = RansacParams::default();
    c.bench_function("fit_sine/1024_points", |b| {
        b.iter(|| fit_sine(black_box(&points), 1024, black_box(&params)).unwrap())
    });
}

fn bench_li_threshold(c: &mut Criterion) {
    let values: Vec<u16> = (0..1_000_000u32)
        .map(|i| if i % 7 == 0 { 52_000 } else { (i % 9_000) as u16 })
        .collect();
    c.bench_function("li_threshold/1M_u16", |b| {
        b.iter(|| li_threshold_u16(black_box(&values)).unwrap())
    });
}

fn bench_unroll_stitch(c: &mut Criterion) {
    let geom = build_phantom(&PhantomModel::default()).unwrap();
    let frames = simulate_endo_frames(&geom, &EndoConfig::default()).unwrap();
    c.bench_function("unroll_frame/256px_to_720", |b| {
        b.iter(|| unroll_frame(black_box(&frames[0]), 720).unwrap())
    });
    let stripes: Vec<_> = frames.iter().map(|f| unroll_frame(f, 720).unwrap()).collect();
    let um_per_row = frames[0].axial_window_um / (stripes[0].height() - 1) as f64;
    c.bench_function("stitch/11_stripes", |b| {
        b.iter(|| stitch(black_box(&stripes), 400.0, um_per_row).unwrap())
    });
}

criterion_group!(
    benches,
    bench_simulate,
    bench_enhance,
    bench_fit_sine,
    bench_li_threshold,
    bench_unroll_stitch
);
criterion_main!(benches);
