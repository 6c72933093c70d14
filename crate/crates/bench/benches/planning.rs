use std::hint::black_box;
use std::path::Path;

use cdkf_sched::pipeline;
use cdkf_sched::quantize::{quantize_times, select_count};
use cdkf_sched::{InputPlan, IntensityProfile, RatePlan, Scenario, ScenarioConfig, TimeGrid};
use criterion::{criterion_group, criterion_main, Criterion};

fn shipped(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    Scenario::from_config(&ScenarioConfig::load(&path).unwrap()).unwrap()
}

fn quantizer(c: &mut Criterion) {
    let grid = TimeGrid::uniform(0.0, 10.0, 1001).unwrap();
    let rates: Vec<f64> = (0..1000)
        .map(|k| 5.0 + 4.0 * (k as f64 * 0.013).sin())
        .collect();
    let profile = IntensityProfile::new(&grid, rates).unwrap();
    let n = select_count(profile.total());
    c.bench_function("quantize 1000 intervals", |b| {
        b.iter(|| quantize_times(black_box(&profile), n).unwrap())
    });
}

fn scalar_plan(c: &mut Criterion) {
    let sc = shipped("scalar.json");
    c.bench_function("plan scalar", |b| {
        b.iter(|| pipeline::plan(black_box(&sc)).unwrap())
    });
}

fn water_pipeline(c: &mut Criterion) {
    let sc = shipped("water.json");
    let sol = pipeline::plan(&sc).unwrap();
    let (rates, inputs) = pipeline::plans(&sol);
    let schedule = pipeline::quantized_schedule(&rates).unwrap();
    let mut group = c.benchmark_group("water");
    group.sample_size(10);
    group.bench_function("plan", |b| {
        b.iter(|| pipeline::plan(black_box(&sc)).unwrap())
    });
    group.bench_function("simulate + filter + smooth", |b| {
        b.iter(|| pipeline::simulate(&sc, &inputs, black_box(&schedule), 3).unwrap())
    });
    group.bench_function("bound propagation", |b| {
        b.iter(|| pipeline::bounds_for(&sc, black_box(&rates), &inputs).unwrap())
    });
    group.finish();
}

fn scalar_monte_carlo(c: &mut Criterion) {
    let sc = shipped("scalar.json");
    let rates = RatePlan::constant(sc.grid.clone(), &[2.0]).unwrap();
    let inputs = InputPlan::empty(sc.grid.num_intervals());
    let mut group = c.benchmark_group("scalar");
    group.sample_size(10);
    group.bench_function("verify 200 replications", |b| {
        b.iter(|| pipeline::verify(&sc, black_box(&rates), &inputs, 200, 1).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    quantizer,
    scalar_plan,
    water_pipeline,
    scalar_monte_carlo
);
criterion_main!(benches);
