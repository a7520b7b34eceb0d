//! The discretized optimal control problem
//!
//! `min J(x, u) = ∫ ℓ(x) + (α/2)|u|² dt` s.t. `ẋ = Ax + Bu + f`, `x(0) = x₀`, `u(t) ∈ F`,
//!
//! its cost gradient, and an independent oracle for the KKT point.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::banded::BandedLu;
use crate::discrete_ops::{ConstraintOps, SystemMatrices};
use crate::error::{shape_err, Error, Result};
use crate::flows::FlowMap;
use crate::fmt::sci15;
use crate::linear_op::{weighted_dot, weighted_norm, LinearOp};
use crate::monotone::{BoxSet, MonotoneMap, PropertyReport};
use crate::timegrid::{GridFunction, Layout, TimeGrid};

/// A smooth convex function on ℝⁿ with its gradient.
pub trait SmoothConvex: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone)]
pub enum StateCost {
    /// `½|x|²`
    Identity,
    /// `½|C x|²`
    Output(DMatrix<f64>),
    Custom(Arc<dyn SmoothConvex>),
}

impl std::fmt::Debug for StateCost {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateCost::Identity => write!(f, "Identity"),
            StateCost::Output(c) => write!(f, "Output({}x{})", c.nrows(), c.ncols()),
            StateCost::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl StateCost {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            StateCost::Identity => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            StateCost::Output(c) => {
                let y = c * DVector::from_column_slice(x);
                0.5 * y.norm_squared()
            }
            StateCost::Custom(g) => g.value(x),
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            StateCost::Identity => out.copy_from_slice(x),
            StateCost::Output(c) => {
                let g = c.tr_mul(&(c * DVector::from_column_slice(x)));
                out.copy_from_slice(g.as_slice());
            }
            StateCost::Custom(g) => g.gradient(x, out),
        }
    }

    /// The constant Hessian of the quadratic forms.
    pub fn hessian(&self, n: usize) -> Option<DMatrix<f64>> {
        match self {
            StateCost::Identity => Some(DMatrix::identity(n, n)),
            StateCost::Output(c) => Some(c.tr_mul(c)),
            StateCost::Custom(_) => None,
        }
    }

    pub fn is_quadratic(&self) -> bool {
        !matches!(self, StateCost::Custom(_))
    }
}

#[derive(Clone, Debug)]
pub struct CostSpec {
    pub state: StateCost,
    pub alpha: f64,
}

impl CostSpec {
    pub fn new(state: StateCost, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Invalid(format!("control weight alpha must be positive, got {alpha}")));
        }
        Ok(Self { state, alpha })
    }

    pub fn quadratic(alpha: f64) -> Result<Self> {
        Self::new(StateCost::Identity, alpha)
    }
}

/// Sampled midpoint convexity `ℓ((a+b)/2) ≤ (ℓ(a)+ℓ(b))/2`.
pub fn check_midpoint_convexity<R: Rng + ?Sized>(
    cost: &StateCost,
    n: usize,
    rng: &mut R,
    samples: usize,
    radius: f64,
) -> PropertyReport {
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..radius)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-radius..radius)).collect();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
        worst = worst.min(0.5 * (cost.value(&a) + cost.value(&b)) - cost.value(&mid));
    }
    PropertyReport::new("state cost", "midpoint convex", samples, worst, 1e-12)
}

#[derive(Clone, Debug)]
pub struct OcpSpec {
    sys: SystemMatrices,
    grid: TimeGrid,
    forcing: GridFunction,
    x0: Vec<f64>,
    cost: CostSpec,
    bounds: Option<BoxSet>,
    ops: Arc<ConstraintOps>,
}

impl OcpSpec {
    pub fn new(
        sys: SystemMatrices,
        grid: TimeGrid,
        forcing: GridFunction,
        x0: Vec<f64>,
        cost: CostSpec,
        bounds: Option<BoxSet>,
    ) -> Result<Self> {
        let n = sys.state_dim();
        let m = sys.control_dim();
        if forcing.layout() != Layout::Intervals || forcing.dim() != n || forcing.samples() != grid.intervals() {
            return shape_err(format!(
                "forcing must be an Intervals function of dim {n} with {} samples",
                grid.intervals()
            ));
        }
        if x0.len() != n {
            return shape_err(format!("x0 has length {}, state dimension is {n}", x0.len()));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("x0 has non-finite entries".into()));
        }
        if let StateCost::Output(c) = &cost.state {
            if c.ncols() != n {
                return shape_err(format!("output matrix has {} columns, state dimension is {n}", c.ncols()));
            }
        }
        if let Some(bx) = &bounds {
            if bx.dim() != m {
                return shape_err(format!("box has dimension {}, control dimension is {m}", bx.dim()));
            }
            if !bx.contains_origin_in_interior() {
                return Err(Error::Invalid("the box must contain 0 in its interior".into()));
            }
        }
        let ops = Arc::new(ConstraintOps::new(&sys, &grid)?);
        Ok(Self { sys, grid, forcing, x0, cost, bounds, ops })
    }

    /// Zero forcing, zero initial value, no box.
    pub fn homogeneous(sys: SystemMatrices, grid: TimeGrid, cost: CostSpec) -> Result<Self> {
        let n = sys.state_dim();
        let f = GridFunction::zeros(Layout::Intervals, n, &grid);
        Self::new(sys, grid, f, vec![0.0; n], cost, None)
    }

    pub fn with_input(&self, forcing: GridFunction, x0: Vec<f64>) -> Result<Self> {
        Self::new(self.sys.clone(), self.grid, forcing, x0, self.cost.clone(), self.bounds.clone())
    }

    pub fn with_bounds(&self, bounds: Option<BoxSet>) -> Result<Self> {
        Self::new(self.sys.clone(), self.grid, self.forcing.clone(), self.x0.clone(), self.cost.clone(), bounds)
    }

    pub fn sys(&self) -> &SystemMatrices {
        &self.sys
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn forcing(&self) -> &GridFunction {
        &self.forcing
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn alpha(&self) -> f64 {
        self.cost.alpha
    }

    pub fn bounds(&self) -> Option<&BoxSet> {
        self.bounds.as_ref()
    }

    pub fn ops(&self) -> &ConstraintOps {
        &self.ops
    }

    pub fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.sys.control_dim()
    }

    /// The constant input `(f, x₀)` in the range space of `C`.
    pub fn input_vector(&self) -> Vec<f64> {
        [self.forcing.as_slice(), &self.x0].concat()
    }

    pub(crate) fn grad_x_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        for (xs, os) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
            self.cost.state.gradient(xs, os);
        }
    }
}

fn check_pair(spec: &OcpSpec, x: &GridFunction, u: &GridFunction) -> Result<()> {
    let g = spec.grid();
    if x.layout() != Layout::Nodes || x.dim() != spec.state_dim() || x.samples() != g.intervals() + 1 {
        return shape_err("x must be a Nodes function of the state dimension");
    }
    if u.layout() != Layout::Intervals || u.dim() != spec.control_dim() || u.samples() != g.intervals() {
        return shape_err("u must be an Intervals function of the control dimension");
    }
    Ok(())
}

/// The gradient of `J` in the discrete `L²` inner product: `(∇ℓ(x), αu)`.
pub fn grad_j(spec: &OcpSpec, x: &GridFunction, u: &GridFunction) -> Result<(GridFunction, GridFunction)> {
    check_pair(spec, x, u)?;
    let mut gx = vec![0.0; x.as_slice().len()];
    spec.grad_x_into(x.as_slice(), &mut gx);
    let gu = u.as_slice().iter().map(|v| spec.alpha() * v).collect();
    Ok((
        GridFunction::new(Layout::Nodes, spec.state_dim(), spec.grid(), gx)?,
        GridFunction::new(Layout::Intervals, spec.control_dim(), spec.grid(), gu)?,
    ))
}

/// `J(x, u) = Σ dt ℓ(x_k) + Σ dt (α/2)|u_k|²`, with the same weights as the
/// inner product so that `grad_j` is its gradient.
pub fn cost_value(spec: &OcpSpec, x: &GridFunction, u: &GridFunction) -> Result<f64> {
    check_pair(spec, x, u)?;
    Ok(cost_flat(spec, x.as_slice(), u.as_slice()))
}

fn cost_flat(spec: &OcpSpec, x: &[f64], u: &[f64]) -> f64 {
    let dt = spec.grid().dt();
    let state: f64 = x.chunks_exact(spec.state_dim()).map(|xs| spec.cost.state.value(xs)).sum();
    let control: f64 = u.iter().map(|v| v * v).sum();
    dt * (state + 0.5 * spec.alpha() * control)
}

/// The KKT operator as a monotone map: the affine map on `(x, u, λ, λ₀)` without
/// a box, the control-reduced map on `(x, λ, λ₀)` with one.
pub fn assemble_m_opt(spec: &OcpSpec) -> Result<FlowMap> {
    match spec.bounds() {
        None => FlowMap::open_unconstrained(spec),
        Some(_) => FlowMap::open_constrained(spec),
    }
}

#[derive(Clone, Debug)]
pub struct OracleOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub initial_u: Option<Vec<f64>>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { max_iter: 1_000_000, tol: 1e-10, initial_u: None }
    }
}

#[derive(Clone, Debug)]
pub struct KktPoint {
    pub x_star: GridFunction,
    pub u_star: GridFunction,
    /// `λ` at nodes `1..=N`, stored with the Intervals layout.
    pub lambda: GridFunction,
    pub lambda0: Vec<f64>,
    pub mu: GridFunction,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KktResidual {
    pub adjoint: f64,
    pub state: f64,
    pub complementarity: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleSummary {
    pub residual: f64,
    pub iterations: usize,
    pub active_set_fraction: f64,
}

impl KktPoint {
    /// `(x, u, λ, λ₀)` in the flat OpenU ordering.
    pub fn open_u_state(&self) -> Vec<f64> {
        [self.x_star.as_slice(), self.u_star.as_slice(), self.lambda.as_slice(), &self.lambda0].concat()
    }

    /// `(x, λ, λ₀)` in the flat OpenC ordering.
    pub fn open_c_state(&self) -> Vec<f64> {
        [self.x_star.as_slice(), self.lambda.as_slice(), &self.lambda0].concat()
    }

    /// Fraction of control components sitting on a bound.
    pub fn active_set_fraction(&self, bounds: Option<&BoxSet>) -> f64 {
        let Some(bx) = bounds else { return 0.0 };
        let m = bx.dim();
        let u = self.u_star.as_slice();
        if u.is_empty() {
            return 0.0;
        }
        let active = u
            .iter()
            .enumerate()
            .filter(|(i, v)| {
                let k = i % m;
                (**v - bx.lower()[k]).abs() <= 1e-12 || (bx.upper()[k] - **v).abs() <= 1e-12
            })
            .count();
        active as f64 / u.len() as f64
    }

    pub fn summary(&self, spec: &OcpSpec) -> OracleSummary {
        OracleSummary {
            residual: kkt_residual(spec, self),
            iterations: self.iterations,
            active_set_fraction: self.active_set_fraction(spec.bounds()),
        }
    }

    /// Writes `x_star.csv`, `u_star.csv`, `lambda.csv`, `lambda0.csv`,
    /// `mu.csv` and `summary.json` into `dir`.
    pub fn write_dir(&self, spec: &OcpSpec, dir: &Path) -> Result<OracleSummary> {
        std::fs::create_dir_all(dir)?;
        let grid = spec.grid();
        for (name, g) in [("x_star", &self.x_star), ("u_star", &self.u_star), ("lambda", &self.lambda), ("mu", &self.mu)] {
            g.write_csv(grid, BufWriter::new(File::create(dir.join(format!("{name}.csv")))?))?;
        }
        let mut w = BufWriter::new(File::create(dir.join("lambda0.csv"))?);
        let header: Vec<String> = (0..self.lambda0.len()).map(|k| format!("component_{k}")).collect();
        writeln!(w, "{}", header.join(","))?;
        let row: Vec<String> = self.lambda0.iter().map(|v| sci15(*v)).collect();
        writeln!(w, "{}", row.join(","))?;
        w.flush()?;
        let summary = self.summary(spec);
        let mut s = serde_json::to_string_pretty(&summary)?;
        s.push('\n');
        std::fs::write(dir.join("summary.json"), s)?;
        Ok(summary)
    }
}

/// Computes the KKT point by a route independent of the flows: a direct
/// banded solve without a box, projected gradient on the reduced problem with one.
pub fn solve_kkt(spec: &OcpSpec, opts: &OracleOptions) -> Result<KktPoint> {
    if !spec.cost().state.is_quadratic() {
        return Err(Error::Unsupported("the KKT oracle needs a quadratic state cost".into()));
    }
    match spec.bounds() {
        None => solve_unconstrained(spec),
        Some(bx) => solve_projected_gradient(spec, bx, opts),
    }
}

fn split_open_u(spec: &OcpSpec, w: &[f64], iterations: usize) -> Result<KktPoint> {
    let (n, m, g) = (spec.state_dim(), spec.control_dim(), spec.grid());
    let big_n = g.intervals();
    let nx = (big_n + 1) * n;
    let nu = big_n * m;
    let nl = big_n * n;
    let x = GridFunction::new(Layout::Nodes, n, g, w[..nx].to_vec())?;
    let u = GridFunction::new(Layout::Intervals, m, g, w[nx..nx + nu].to_vec())?;
    let lambda = GridFunction::new(Layout::Intervals, n, g, w[nx + nu..nx + nu + nl].to_vec())?;
    let lambda0 = w[nx + nu + nl..].to_vec();
    let mu = GridFunction::zeros(Layout::Intervals, m, g);
    Ok(KktPoint { x_star: x, u_star: u, lambda, lambda0, mu, iterations })
}

fn solve_unconstrained(spec: &OcpSpec) -> Result<KktPoint> {
    let map = FlowMap::open_unconstrained(spec)?;
    let affine = map.affine().expect("quadratic cost gives an affine map");
    let keys = map.time_keys().expect("flow maps carry time keys");
    let lu = BandedLu::factor(affine.linear, 0.0, keys)?;
    let rhs: Vec<f64> = affine.offset.iter().map(|b| -b).collect();
    let w = lu.solve(&rhs)?;
    split_open_u(spec, &w, 1)
}

/// Forward and adjoint sweeps of the implicit-Euler stencil for the
/// reduced problem `φ(u) = J(x(u), u)`.
struct Sweeps<'a> {
    spec: &'a OcpSpec,
    fwd: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    bwd: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl<'a> Sweeps<'a> {
    fn new(spec: &'a OcpSpec) -> Result<Self> {
        let n = spec.state_dim();
        let inv_dt = 1.0 / spec.grid().dt();
        let shifted = DMatrix::identity(n, n) * inv_dt - spec.sys().a();
        let fwd = shifted.clone().lu();
        let bwd = shifted.transpose().lu();
        if !fwd.is_invertible() {
            return Err(Error::Solver("I/dt - A is singular; refine the grid".into()));
        }
        Ok(Self { spec, fwd, bwd })
    }

    /// `(I/dt − A) x_k = x_{k−1}/dt + B u_k + f_k`.
    fn state(&self, u: &[f64]) -> Vec<f64> {
        let spec = self.spec;
        let (n, m) = (spec.state_dim(), spec.control_dim());
        let big_n = spec.grid().intervals();
        let inv_dt = 1.0 / spec.grid().dt();
        let b = spec.sys().b();
        let f = spec.forcing().as_slice();
        let mut x = vec![0.0; (big_n + 1) * n];
        x[..n].copy_from_slice(spec.x0());
        for k in 1..=big_n {
            let uk = DVector::from_column_slice(&u[(k - 1) * m..k * m]);
            let mut rhs = b * uk;
            for i in 0..n {
                rhs[i] += x[(k - 1) * n + i] * inv_dt + f[(k - 1) * n + i];
            }
            let xk = self.fwd.solve(&rhs).expect("factor checked at construction");
            x[k * n..(k + 1) * n].copy_from_slice(xk.as_slice());
        }
        x
    }

    /// Adjoint `(λ₁..λ_N, λ₀)` of a state trajectory.
    fn adjoint(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let spec = self.spec;
        let n = spec.state_dim();
        let big_n = spec.grid().intervals();
        let dt = spec.grid().dt();
        let mut grad = vec![0.0; x.len()];
        spec.grad_x_into(x, &mut grad);
        let mut lam = vec![0.0; big_n * n];
        let mut next = DVector::zeros(n);
        for j in (1..=big_n).rev() {
            let mut rhs = &next / dt;
            for i in 0..n {
                rhs[i] -= grad[j * n + i];
            }
            let lj = self.bwd.solve(&rhs).expect("factor checked at construction");
            lam[(j - 1) * n..j * n].copy_from_slice(lj.as_slice());
            next = lj;
        }
        let lambda0 = (0..n).map(|i| next[i] - dt * grad[i]).collect();
        (lam, lambda0)
    }

    /// `Bᵀλ_k` per interval.
    fn bt_lambda(&self, lam: &[f64]) -> Vec<f64> {
        let spec = self.spec;
        let (n, m) = (spec.state_dim(), spec.control_dim());
        let b = spec.sys().b();
        let mut out = vec![0.0; spec.grid().intervals() * m];
        for (lk, ok) in lam.chunks_exact(n).zip(out.chunks_exact_mut(m)) {
            let v = b.tr_mul(&DVector::from_column_slice(lk));
            ok.copy_from_slice(v.as_slice());
        }
        out
    }

    fn value_and_gradient(&self, u: &[f64]) -> (f64, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let x = self.state(u);
        let (lam, lambda0) = self.adjoint(&x);
        let btl = self.bt_lambda(&lam);
        let alpha = self.spec.alpha();
        let grad = u.iter().zip(&btl).map(|(a, b)| alpha * a - b).collect();
        (cost_flat(self.spec, &x, u), grad, x, lam, lambda0)
    }
}

fn solve_projected_gradient(spec: &OcpSpec, bx: &BoxSet, opts: &OracleOptions) -> Result<KktPoint> {
    let (n, m, g) = (spec.state_dim(), spec.control_dim(), spec.grid());
    let nu = g.intervals() * m;
    let dt = g.dt();
    let w = vec![dt; nu];
    let sweeps = Sweeps::new(spec)?;
    let mut u = match &opts.initial_u {
        Some(u0) if u0.len() == nu => u0.clone(),
        Some(u0) => return shape_err(format!("initial control of length {}, expected {nu}", u0.len())),
        None => vec![0.0; nu],
    };
    bx.project_in_place(&mut u);

    let stationarity = |u: &[f64], grad: &[f64]| {
        let mut p: Vec<f64> = u.iter().zip(grad).map(|(a, b)| a - b).collect();
        bx.project_in_place(&mut p);
        let d: Vec<f64> = u.iter().zip(&p).map(|(a, b)| a - b).collect();
        weighted_norm(&d, &w)
    };

    let (mut phi, mut grad, mut x, mut lam, mut lambda0) = sweeps.value_and_gradient(&u);
    let mut step = 1.0 / spec.alpha();
    let mut residual = stationarity(&u, &grad);
    let mut iterations = 0;
    let mut history: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(10);
    while residual > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::Convergence { iterations, residual });
        }
        iterations += 1;
        let mut accepted = None;
        let mut s = step;
        for _ in 0..60 {
            let mut trial: Vec<f64> = u.iter().zip(&grad).map(|(a, b)| a - s * b).collect();
            bx.project_in_place(&mut trial);
            let du: Vec<f64> = trial.iter().zip(&u).map(|(a, b)| a - b).collect();
            let eval = sweeps.value_and_gradient(&trial);
            let reference = history.iter().copied().fold(phi, f64::max);
            let slack = 16.0 * f64::EPSILON * reference.abs();
            if eval.0 <= reference + 1e-4 * weighted_dot(&grad, &du, &w) + slack || weighted_norm(&du, &w) == 0.0 {
                accepted = Some((trial, du, eval));
                break;
            }
            s *= 0.5;
        }
        let Some((trial, du, eval)) = accepted else {
            return Err(Error::Convergence { iterations, residual });
        };
        let dg: Vec<f64> = eval.1.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let curvature = weighted_dot(&du, &dg, &w);
        step = if curvature > 0.0 { weighted_dot(&du, &du, &w) / curvature } else { 1.0 / spec.alpha() };
        if history.len() == 10 {
            history.pop_front();
        }
        history.push_back(phi);
        u = trial;
        (phi, grad, x, lam, lambda0) = eval;
        let previous = residual;
        residual = stationarity(&u, &grad);
        if residual == previous && du.iter().all(|v| *v == 0.0) {
            return Err(Error::Convergence { iterations, residual });
        }
    }
    let btl = sweeps.bt_lambda(&lam);
    let mu: Vec<f64> = btl.iter().zip(&u).map(|(b, a)| b - spec.alpha() * a).collect();
    Ok(KktPoint {
        x_star: GridFunction::new(Layout::Nodes, n, g, x)?,
        u_star: GridFunction::new(Layout::Intervals, m, g, u)?,
        lambda: GridFunction::new(Layout::Intervals, n, g, lam)?,
        lambda0,
        mu: GridFunction::new(Layout::Intervals, m, g, mu)?,
        iterations,
    })
}

/// Block norms of the optimality system at `p`.
pub fn kkt_residual_parts(spec: &OcpSpec, p: &KktPoint) -> Result<KktResidual> {
    check_pair(spec, &p.x_star, &p.u_star)?;
    let ops = spec.ops();
    let (n, m) = (spec.state_dim(), spec.control_dim());
    let big_n = spec.grid().intervals();
    if p.lambda.as_slice().len() != big_n * n || p.lambda0.len() != n || p.mu.as_slice().len() != big_n * m {
        return shape_err("multiplier blocks do not match the problem");
    }
    let xu = [p.x_star.as_slice(), p.u_star.as_slice()].concat();
    let lam = [p.lambda.as_slice(), &p.lambda0].concat();
    let c_star: &LinearOp = &ops.c_star;
    let c: &LinearOp = &ops.c;

    let mut adj = vec![0.0; xu.len()];
    let nx = (big_n + 1) * n;
    spec.grad_x_into(p.x_star.as_slice(), &mut adj[..nx]);
    for (o, (u, mu)) in adj[nx..].iter_mut().zip(p.u_star.as_slice().iter().zip(p.mu.as_slice())) {
        *o = spec.alpha() * u + mu;
    }
    c_star.apply_add(1.0, &lam, &mut adj);

    let mut st = spec.input_vector();
    c.apply_add(-1.0, &xu, &mut st);

    let u = p.u_star.as_slice();
    let mut comp: Vec<f64> = u.iter().zip(p.mu.as_slice()).map(|(a, b)| a + b).collect();
    if let Some(bx) = spec.bounds() {
        bx.project_in_place(&mut comp);
    }
    let comp: Vec<f64> = u.iter().zip(&comp).map(|(a, b)| a - b).collect();

    let adjoint = weighted_norm(&adj, c.in_weights());
    let state = weighted_norm(&st, c.out_weights());
    let complementarity = weighted_norm(&comp, &vec![spec.grid().dt(); comp.len()]);
    let total = (adjoint * adjoint + state * state + complementarity * complementarity).sqrt();
    Ok(KktResidual { adjoint, state, complementarity, total })
}

/// Norm of the stacked adjoint, state and complementarity residuals.
pub fn kkt_residual(spec: &OcpSpec, p: &KktPoint) -> f64 {
    kkt_residual_parts(spec, p).map(|r| r.total).unwrap_or(f64::INFINITY)
}

/// The reduced control `P_F(Bᵀλ/α)` per interval, or `Bᵀλ/α` without a box.
pub fn reduced_control(spec: &OcpSpec, lambda: &[f64]) -> Vec<f64> {
    let (n, m) = (spec.state_dim(), spec.control_dim());
    let b = spec.sys().b();
    let mut out = vec![0.0; lambda.len() / n * m];
    for (lk, ok) in lambda.chunks_exact(n).zip(out.chunks_exact_mut(m)) {
        let v = b.tr_mul(&DVector::from_column_slice(lk)) / spec.alpha();
        ok.copy_from_slice(v.as_slice());
    }
    if let Some(bx) = spec.bounds() {
        bx.project_in_place(&mut out);
    }
    out
}
