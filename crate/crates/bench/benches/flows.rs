use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mono_ph::flows::{FlowMap, PlantSpec};
use mono_ph::monotone::{BoxSet, Resolvent};
use mono_ph::{solve_kkt, CostSpec, GridFunction, Layout, MonotoneMap, OcpSpec, OracleOptions, SystemMatrices, TimeGrid};
use nalgebra::DMatrix;

fn example(intervals: usize, bound: Option<f64>) -> OcpSpec {
    let sys = SystemMatrices::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, intervals).unwrap();
    let f = GridFunction::zeros(Layout::Intervals, 2, &grid);
    let bx = bound.map(|b| BoxSet::symmetric(vec![b]).unwrap());
    OcpSpec::new(sys, grid, f, vec![-0.5, -3.0], CostSpec::quadratic(1.5).unwrap(), bx).unwrap()
}

fn rhs(c: &mut Criterion) {
    let free = example(200, None);
    let boxed = example(200, Some(1.0));
    let plant = PlantSpec::conserving_2d();
    let maps = [
        FlowMap::open_unconstrained(&free).unwrap(),
        FlowMap::open_constrained(&boxed).unwrap(),
        FlowMap::closed_unconstrained(&free, &plant).unwrap(),
        FlowMap::closed_constrained(&boxed, &plant).unwrap(),
    ];
    let mut g = c.benchmark_group("rhs_n200");
    for map in &maps {
        let v: Vec<f64> = (0..map.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; map.dim()];
        g.bench_function(map.variant().key(), |b| b.iter(|| map.apply_into(black_box(&v), &mut out)));
    }
    g.finish();
}

fn resolvent(c: &mut Criterion) {
    let map = FlowMap::open_unconstrained(&example(200, None)).unwrap();
    let v: Vec<f64> = (0..map.dim()).map(|i| (i as f64 * 0.11).cos()).collect();
    c.bench_function("resolvent_factor_n200", |b| b.iter(|| Resolvent::new(&map, black_box(0.1)).unwrap()));
    let res = Resolvent::new(&map, 0.1).unwrap();
    c.bench_function("resolvent_apply_n200", |b| b.iter(|| res.apply(black_box(&v)).unwrap()));
}

fn oracle(c: &mut Criterion) {
    let free = example(200, None);
    let boxed = example(200, Some(1.0));
    let opts = OracleOptions::default();
    c.bench_function("oracle_unconstrained_n200", |b| {
        b.iter_batched(|| free.clone(), |s| solve_kkt(&s, &opts).unwrap(), BatchSize::SmallInput)
    });
    c.bench_function("oracle_box_n200", |b| {
        b.iter_batched(|| boxed.clone(), |s| solve_kkt(&s, &opts).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, rhs, resolvent, oracle);
criterion_main!(benches);
