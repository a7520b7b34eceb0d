//! Uniform time grids on the optimal-control horizon and the grid functions
//! living on them.
//!
//! States and adjoints are sampled on nodes `0..=N`, controls on intervals
//! `1..=N` (piecewise constant, interval `k` is `(τ_{k-1}, τ_k]`). Every
//! time-indexed sample carries the quadrature weight `dt`; finite-dimensional
//! blocks such as `λ0` or the plant state carry weight 1.

use std::io::Write;

use crate::error::{shape_err, Error, Result};
use crate::fmt::fixed_sig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    intervals: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, intervals: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Invalid(format!("horizon must be positive, got {horizon}")));
        }
        if intervals < 2 {
            return Err(Error::Invalid(format!("need at least 2 intervals, got {intervals}")));
        }
        Ok(Self { horizon, intervals })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Number of intervals `N`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.intervals as f64
    }

    /// `τ_k = k t_f / N`; exact at both ends.
    pub fn node_time(&self, k: usize) -> f64 {
        if k == self.intervals {
            return self.horizon;
        }
        self.horizon * k as f64 / self.intervals as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// `N + 1` samples at `τ_0..=τ_N`.
    Nodes,
    /// `N` samples, sample `i` belongs to interval `i + 1` and sits at its
    /// right endpoint `τ_{i+1}`.
    Intervals,
}

impl Layout {
    pub fn samples(self, grid: &TimeGrid) -> usize {
        match self {
            Layout::Nodes => grid.intervals() + 1,
            Layout::Intervals => grid.intervals(),
        }
    }

    /// Grid node index of sample position `i`.
    pub fn node_of(self, i: usize) -> usize {
        match self {
            Layout::Nodes => i,
            Layout::Intervals => i + 1,
        }
    }
}

/// Time-indexed array of vectors, stored sample-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    layout: Layout,
    dim: usize,
    samples: usize,
    data: Vec<f64>,
}

impl GridFunction {
    pub fn new(layout: Layout, dim: usize, grid: &TimeGrid, data: Vec<f64>) -> Result<Self> {
        let samples = layout.samples(grid);
        if data.len() != samples * dim {
            return shape_err(format!(
                "{layout:?} function of dim {dim} needs {} entries, got {}",
                samples * dim,
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite entry at flat index {i}")));
        }
        Ok(Self { layout, dim, samples, data })
    }

    pub fn zeros(layout: Layout, dim: usize, grid: &TimeGrid) -> Self {
        let samples = layout.samples(grid);
        Self { layout, dim, samples, data: vec![0.0; samples * dim] }
    }

    pub fn constant(layout: Layout, grid: &TimeGrid, value: &[f64]) -> Result<Self> {
        let samples = layout.samples(grid);
        let data = value.iter().copied().cycle().take(samples * value.len()).collect();
        Self::new(layout, value.len(), grid, data)
    }

    /// Samples `f(τ, out)` at every sample time of the layout.
    pub fn from_fn(
        layout: Layout,
        dim: usize,
        grid: &TimeGrid,
        mut f: impl FnMut(f64, &mut [f64]),
    ) -> Result<Self> {
        let samples = layout.samples(grid);
        let mut data = vec![0.0; samples * dim];
        for (i, chunk) in data.chunks_exact_mut(dim.max(1)).enumerate().take(samples) {
            f(grid.node_time(layout.node_of(i)), chunk);
        }
        Self::new(layout, dim, grid, data)
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// One CSV row per sample: `tau,component_0,..`.
    pub fn write_csv<W: Write>(&self, grid: &TimeGrid, mut out: W) -> Result<()> {
        let mut header = String::from("tau");
        for c in 0..self.dim {
            header.push_str(&format!(",component_{c}"));
        }
        writeln!(out, "{header}")?;
        for i in 0..self.samples {
            let mut line = fixed_sig(grid.node_time(self.layout.node_of(i)), 12);
            for v in self.sample(i) {
                line.push(',');
                line.push_str(&format!("{:.14e}", v));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

fn check_compatible(a: &GridFunction, b: &GridFunction) -> Result<()> {
    if a.layout != b.layout || a.dim != b.dim || a.samples != b.samples {
        return shape_err(format!(
            "cannot pair {:?}/dim {} with {:?}/dim {}",
            a.layout, a.dim, b.layout, b.dim
        ));
    }
    Ok(())
}

/// Discrete L² pairing `dt Σ_k a_kᵀ b_k`.
pub fn inner_product(a: &GridFunction, b: &GridFunction, grid: &TimeGrid) -> Result<f64> {
    check_compatible(a, b)?;
    if a.samples != a.layout.samples(grid) {
        return shape_err("grid function does not belong to this grid");
    }
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
    Ok(grid.dt() * s)
}

pub fn norm(a: &GridFunction, grid: &TimeGrid) -> Result<f64> {
    Ok(inner_product(a, a, grid)?.sqrt())
}

/// One block of a product-space element.
#[derive(Clone, Copy, Debug)]
pub enum StackPart<'a> {
    Grid(&'a GridFunction),
    /// Finite-dimensional block with unit weight.
    Vector(&'a [f64]),
}

/// Inner product on a product of grid-function and Euclidean blocks.
pub fn stack_inner(a: &[StackPart<'_>], b: &[StackPart<'_>], grid: &TimeGrid) -> Result<f64> {
    if a.is_empty() {
        return shape_err("empty stack");
    }
    if a.len() != b.len() {
        return shape_err(format!("stacks have {} and {} parts", a.len(), b.len()));
    }
    let mut total = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        total += match (pa, pb) {
            (StackPart::Grid(x), StackPart::Grid(y)) => inner_product(x, y, grid)?,
            (StackPart::Vector(x), StackPart::Vector(y)) => {
                if x.len() != y.len() {
                    return shape_err(format!("vector blocks of length {} and {}", x.len(), y.len()));
                }
                x.iter().zip(y.iter()).map(|(p, q)| p * q).sum()
            }
            _ => return shape_err("grid block paired with vector block"),
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_one_integrates_to_horizon() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let one = GridFunction::constant(Layout::Intervals, &g, &[1.0]).unwrap();
        assert!((inner_product(&one, &one, &g).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_annihilates() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        let z = GridFunction::zeros(Layout::Nodes, 2, &g);
        let b = GridFunction::from_fn(Layout::Nodes, 2, &g, |t, o| {
            o[0] = t.cos();
            o[1] = 3.0;
        })
        .unwrap();
        assert_eq!(inner_product(&z, &b, &g).unwrap(), 0.0);
        assert_eq!(norm(&z, &g).unwrap(), 0.0);
    }

    #[test]
    fn sine_squared_matches_closed_form() {
        let g = TimeGrid::new(PI, 1000).unwrap();
        let s = GridFunction::from_fn(Layout::Nodes, 1, &g, |t, o| o[0] = t.sin()).unwrap();
        let v = inner_product(&s, &s, &g).unwrap();
        assert!((v - PI / 2.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn norm_of_constant() {
        let g = TimeGrid::new(2.0, 40).unwrap();
        let c = GridFunction::constant(Layout::Intervals, &g, &[-3.0]).unwrap();
        assert!((norm(&c, &g).unwrap() - 3.0 * 2f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn shape_errors() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let a = GridFunction::zeros(Layout::Nodes, 1, &g);
        let b = GridFunction::zeros(Layout::Intervals, 1, &g);
        assert!(matches!(inner_product(&a, &b, &g), Err(Error::Shape(_))));
        assert!(GridFunction::new(Layout::Nodes, 2, &g, vec![0.0; 3]).is_err());
        assert!(GridFunction::new(Layout::Intervals, 1, &g, vec![f64::NAN; 4]).is_err());
        assert!(matches!(stack_inner(&[], &[], &g), Err(Error::Shape(_))));
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(-1.0, 5).is_err());
    }

    #[test]
    fn stack_blocks() {
        let g = TimeGrid::new(1.5, 6).unwrap();
        let v = [1.0, -2.0, 0.5];
        let single = stack_inner(&[StackPart::Vector(&v)], &[StackPart::Vector(&v)], &g).unwrap();
        assert_eq!(single, 5.25);
        let f = GridFunction::from_fn(Layout::Nodes, 2, &g, |t, o| {
            o[0] = t;
            o[1] = 1.0 - t;
        })
        .unwrap();
        let parts = [StackPart::Grid(&f), StackPart::Vector(&v)];
        let mixed = stack_inner(&parts, &parts, &g).unwrap();
        assert!((mixed - (inner_product(&f, &f, &g).unwrap() + 5.25)).abs() < 1e-14);
    }

    #[test]
    fn grid_step_is_consistent() {
        for n in [2, 3, 7, 200, 999] {
            let g = TimeGrid::new(0.7, n).unwrap();
            assert!((g.dt() * n as f64 - 0.7).abs() < 1e-15);
            assert_eq!(g.node_time(n), 0.7);
        }
    }

    #[test]
    fn csv_rows() {
        let g = TimeGrid::new(1.0, 2).unwrap();
        let f = GridFunction::new(Layout::Intervals, 1, &g, vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "tau,component_0");
        assert_eq!(lines[1], "0.500000000000,1.00000000000000e0");
        assert_eq!(lines[2], "1.00000000000,2.00000000000000e0");
    }
}
