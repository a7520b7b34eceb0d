#![allow(dead_code)]

use mono_ph::monotone::BoxSet;
use mono_ph::{CostSpec, GridFunction, Layout, OcpSpec, SystemMatrices, TimeGrid};
use nalgebra::DMatrix;

pub fn rotation_system() -> SystemMatrices {
    SystemMatrices::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]),
        DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap()
}

/// The rotation example with `α = 1.5` and `x₀ = (−0.5, −3)`.
pub fn example(intervals: usize, bound: Option<f64>) -> OcpSpec {
    let grid = TimeGrid::new(1.0, intervals).unwrap();
    let f = GridFunction::zeros(Layout::Intervals, 2, &grid);
    let bx = bound.map(|b| BoxSet::symmetric(vec![b]).unwrap());
    OcpSpec::new(rotation_system(), grid, f, vec![-0.5, -3.0], CostSpec::quadratic(1.5).unwrap(), bx).unwrap()
}

/// Same problem with a smooth nonzero forcing.
pub fn forced_example(intervals: usize, bound: Option<f64>) -> OcpSpec {
    let base = example(intervals, bound);
    let f = GridFunction::from_fn(Layout::Intervals, 2, base.grid(), |t, o| {
        o[0] = (3.0 * t).sin();
        o[1] = 0.5 - t;
    })
    .unwrap();
    base.with_input(f, vec![1.0, -2.0]).unwrap()
}

pub fn dist(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - y) * (x - y)).sum::<f64>().sqrt()
}
