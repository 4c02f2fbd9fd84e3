use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use robust_credit::hjm::{martingale_test_discounted_bond, ForwardCurveModel, LambdaStar, MartingaleSettings};
use robust_credit::measures::{verify_unit_expectation_with, IntensitySpec};
use robust_credit::pricing::{mc_price, McSettings};
use robust_credit::{Execution, JacobiParams, TimeGrid};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn jacobi_bond(c: &mut Criterion) {
    let params = JacobiParams::new(0.01, 0.10, 1.0, 0.3, 0.04, 0.04).unwrap();
    let mut group = c.benchmark_group("mc_price");
    group.sample_size(10);
    for (name, execution) in MODES {
        let settings = McSettings {
            n_paths: 20_000,
            steps_per_year: 250,
            seed: 1,
            execution,
        };
        group.bench_with_input(BenchmarkId::new(name, "20k paths x 250 steps"), &settings, |b, s| {
            b.iter(|| mc_price(black_box(&params), 0.0, 1.0, s).unwrap())
        });
    }
    group.finish();
}

fn unit_expectation(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 200).unwrap();
    let lambda = IntensitySpec::Constant(2.0);
    let mut group = c.benchmark_group("verify_unit_expectation");
    group.sample_size(10);
    for (name, execution) in MODES {
        group.bench_function(BenchmarkId::new(name, "20k paths"), |b| {
            b.iter(|| verify_unit_expectation_with(black_box(&lambda), grid, 20_000, 3, execution).unwrap())
        });
    }
    group.finish();
}

fn martingale(c: &mut Criterion) {
    let model = ForwardCurveModel::flat_constant_vol(0.04, 0.01);
    let mut group = c.benchmark_group("martingale_test");
    group.sample_size(10);
    for (name, execution) in MODES {
        let settings = MartingaleSettings {
            n_paths: 20_000,
            steps_per_year: 100,
            seed: 5,
            execution,
            ..Default::default()
        };
        group.bench_function(BenchmarkId::new(name, "20k paths"), |b| {
            b.iter(|| martingale_test_discounted_bond(&model, &LambdaStar::Constant { value: 0.03 }, 1.0, &settings).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, jacobi_bond, unit_expectation, martingale);
criterion_main!(benches);
