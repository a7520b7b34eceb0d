//! The four governing vector fields `v̇ = −M(v)`:
//!
//! | variant   | state                  | map                                        |
//! |-----------|------------------------|--------------------------------------------|
//! | `OpenU`   | `(x, u, λ, λ₀)`        | primal-dual gradient flow of the OCP       |
//! | `OpenC`   | `(x, λ, λ₀)`           | the same with `u = P_F(Bᵀλ/α)` eliminated   |
//! | `ClosedU` | `(x_p, x, u, λ, λ₀)`   | optimizer coupled to the plant             |
//! | `ClosedC` | `(x_p, x, λ, λ₀)`      | control-reduced optimizer with saturation  |

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::integrator::Observer;
use crate::linear_op::LinearOp;
use crate::monotone::{check_monotone, Affine, FnMap, MonotoneMap, ProxCoupling};
use crate::ocp::{reduced_control, OcpSpec};
use crate::timegrid::{GridFunction, Layout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    OpenU,
    OpenC,
    ClosedU,
    ClosedC,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::OpenU, Variant::OpenC, Variant::ClosedU, Variant::ClosedC];

    pub fn key(self) -> &'static str {
        match self {
            Variant::OpenU => "open_u",
            Variant::OpenC => "open_c",
            Variant::ClosedU => "closed_u",
            Variant::ClosedC => "closed_c",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown flow `{s}` (expected open_u, open_c, closed_u or closed_c)")))
    }

    pub fn is_closed(self) -> bool {
        matches!(self, Variant::ClosedU | Variant::ClosedC)
    }

    pub fn has_control(self) -> bool {
        matches!(self, Variant::OpenU | Variant::ClosedU)
    }
}

type PlantFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub enum PlantDynamics {
    /// `M_p(z) = J₂(1 + |z|²)z` with `J₂ = [[0, 1], [−1, 0]]`.
    Conserving2d,
    Linear(DMatrix<f64>),
    Custom(PlantFn),
}

/// Plant `ẋ_p = −M_p(x_p) + B_p u_p`.
#[derive(Clone)]
pub struct PlantSpec {
    dynamics: PlantDynamics,
    b_p: DMatrix<f64>,
    dim: usize,
}

impl std::fmt::Debug for PlantSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.dynamics {
            PlantDynamics::Conserving2d => "conserving2d",
            PlantDynamics::Linear(_) => "linear",
            PlantDynamics::Custom(_) => "custom",
        };
        write!(f, "PlantSpec({kind}, dim {}, inputs {})", self.dim, self.b_p.ncols())
    }
}

impl PlantSpec {
    pub fn conserving_2d() -> Self {
        Self { dynamics: PlantDynamics::Conserving2d, b_p: DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), dim: 2 }
    }

    /// Same nonlinearity with another input matrix.
    pub fn conserving_2d_with_input(b_p: DMatrix<f64>) -> Result<Self> {
        if b_p.nrows() != 2 {
            return shape_err(format!("B_p must have 2 rows, got {}", b_p.nrows()));
        }
        Ok(Self { dynamics: PlantDynamics::Conserving2d, b_p, dim: 2 })
    }

    /// `M_p(z) = Mz`; requires `M + Mᵀ ⪰ 0`.
    pub fn linear(m: DMatrix<f64>, b_p: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n || b_p.nrows() != n {
            return shape_err(format!("plant matrix {}x{} with B_p {}x{}", n, m.ncols(), b_p.nrows(), b_p.ncols()));
        }
        let sym = &m + m.transpose();
        let scale = sym.norm().max(1.0);
        if sym.symmetric_eigenvalues().iter().any(|l| *l < -1e-12 * scale) {
            return Err(Error::Invalid("linear plant is not monotone: M + Mᵀ has a negative eigenvalue".into()));
        }
        Ok(Self { dynamics: PlantDynamics::Linear(m), b_p, dim: n })
    }

    /// Custom `M_p`, checked for `M_p(0) = 0` and sampled monotonicity.
    pub fn custom(dim: usize, f: PlantFn, b_p: DMatrix<f64>) -> Result<Self> {
        if b_p.nrows() != dim {
            return shape_err(format!("B_p has {} rows, plant dimension is {dim}", b_p.nrows()));
        }
        let mut at_zero = vec![0.0; dim];
        f(&vec![0.0; dim], &mut at_zero);
        if at_zero.iter().any(|v| *v != 0.0) {
            return Err(Error::Invalid("custom plant must satisfy M_p(0) = 0".into()));
        }
        let g = f.clone();
        let probe = FnMap::new("custom plant", vec![1.0; dim], move |z: &[f64], o: &mut [f64]| g(z, o));
        let report = check_monotone(&probe, &mut ChaCha8Rng::seed_from_u64(0), 1000, 10.0, 1e-10);
        if !report.passed {
            return Err(Error::Invalid(format!("custom plant failed the monotonicity check: {}", report.to_text())));
        }
        Ok(Self { dynamics: PlantDynamics::Custom(f), b_p, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input_dim(&self) -> usize {
        self.b_p.ncols()
    }

    pub fn b_p(&self) -> &DMatrix<f64> {
        &self.b_p
    }

    pub fn dynamics(&self) -> &PlantDynamics {
        &self.dynamics
    }

    pub fn apply_mp(&self, z: &[f64], out: &mut [f64]) {
        match &self.dynamics {
            PlantDynamics::Conserving2d => {
                let s = 1.0 + z[0] * z[0] + z[1] * z[1];
                out[0] = s * z[1];
                out[1] = -s * z[0];
            }
            PlantDynamics::Linear(m) => {
                for i in 0..self.dim {
                    out[i] = (0..self.dim).map(|j| m[(i, j)] * z[j]).sum();
                }
            }
            PlantDynamics::Custom(f) => f(z, out),
        }
    }

    pub fn mp(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return shape_err(format!("plant state of length {}, expected {}", z.len(), self.dim));
        }
        let mut out = vec![0.0; self.dim];
        self.apply_mp(z, &mut out);
        Ok(out)
    }

    /// `B_p u` added into `out`, scaled.
    fn add_input(&self, scale: f64, u: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            out[i] += scale * (0..u.len()).map(|j| self.b_p[(i, j)] * u[j]).sum::<f64>();
        }
    }

    /// `B_pᵀ z`.
    fn output(&self, z: &[f64]) -> Vec<f64> {
        (0..self.input_dim()).map(|j| (0..self.dim).map(|i| self.b_p[(i, j)] * z[i]).sum()).collect()
    }
}

/// `−M_p(z) + B_p u_p`.
pub fn plant_rhs(plant: &PlantSpec, z: &[f64], u_p: &[f64]) -> Result<Vec<f64>> {
    if u_p.len() != plant.input_dim() {
        return shape_err(format!("plant input of length {}, expected {}", u_p.len(), plant.input_dim()));
    }
    let mut out = plant.mp(z)?;
    out.iter_mut().for_each(|v| *v = -*v);
    plant.add_input(1.0, u_p, &mut out);
    Ok(out)
}

/// Sizes and block offsets of a flow state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateLayout {
    pub variant: Variant,
    pub n: usize,
    pub m: usize,
    pub n_p: usize,
    pub intervals: usize,
    pub dt: f64,
}

impl StateLayout {
    pub fn new(variant: Variant, spec: &OcpSpec, n_p: usize) -> Self {
        Self {
            variant,
            n: spec.state_dim(),
            m: spec.control_dim(),
            n_p: if variant.is_closed() { n_p } else { 0 },
            intervals: spec.grid().intervals(),
            dt: spec.grid().dt(),
        }
    }

    pub fn plant(&self) -> std::ops::Range<usize> {
        0..self.n_p
    }

    pub fn x(&self) -> std::ops::Range<usize> {
        let s = self.n_p;
        s..s + (self.intervals + 1) * self.n
    }

    /// Empty for the control-reduced variants.
    pub fn u(&self) -> std::ops::Range<usize> {
        let s = self.x().end;
        let len = if self.variant.has_control() { self.intervals * self.m } else { 0 };
        s..s + len
    }

    pub fn lambda(&self) -> std::ops::Range<usize> {
        let s = self.u().end;
        s..s + self.intervals * self.n
    }

    pub fn lambda0(&self) -> std::ops::Range<usize> {
        let s = self.lambda().end;
        s..s + self.n
    }

    /// `(λ, λ₀)` together.
    pub fn multipliers(&self) -> std::ops::Range<usize> {
        self.lambda().start..self.lambda0().end
    }

    /// `(x, u)` together.
    pub fn primal(&self) -> std::ops::Range<usize> {
        self.x().start..self.u().end
    }

    pub fn len(&self) -> usize {
        self.lambda0().end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![1.0; self.n_p];
        w.resize(self.lambda().end, self.dt);
        w.resize(self.len(), 1.0);
        w
    }

    /// Ordering keys: samples at node or right endpoint `k` get key `k`,
    /// `x_p` and `λ₀` get 0.
    pub fn time_keys(&self) -> Vec<usize> {
        let mut keys = vec![0; self.n_p];
        keys.extend((0..=self.intervals).flat_map(|k| std::iter::repeat(k).take(self.n)));
        if self.variant.has_control() {
            keys.extend((1..=self.intervals).flat_map(|k| std::iter::repeat(k).take(self.m)));
        }
        keys.extend((1..=self.intervals).flat_map(|k| std::iter::repeat(k).take(self.n)));
        keys.extend(std::iter::repeat(0).take(self.n));
        keys
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    layout: StateLayout,
    data: Vec<f64>,
}

impl FlowState {
    pub fn new(layout: StateLayout, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return shape_err(format!("{} state needs {} entries, got {}", layout.variant.key(), layout.len(), data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("flow state has non-finite entries".into()));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros(layout: StateLayout) -> Self {
        Self { layout, data: vec![0.0; layout.len()] }
    }

    pub fn with_plant(layout: StateLayout, plant_state: &[f64]) -> Result<Self> {
        if plant_state.len() != layout.n_p {
            return shape_err(format!("plant state of length {}, expected {}", plant_state.len(), layout.n_p));
        }
        let mut s = Self::zeros(layout);
        s.data[layout.plant()].copy_from_slice(plant_state);
        Ok(s)
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn variant(&self) -> Variant {
        self.layout.variant
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn plant(&self) -> &[f64] {
        &self.data[self.layout.plant()]
    }

    pub fn x(&self) -> &[f64] {
        &self.data[self.layout.x()]
    }

    pub fn u(&self) -> &[f64] {
        &self.data[self.layout.u()]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.data[self.layout.lambda()]
    }

    pub fn lambda0(&self) -> &[f64] {
        &self.data[self.layout.lambda0()]
    }

    pub fn norm(&self) -> f64 {
        crate::linear_op::weighted_norm(&self.data, &self.layout.weights())
    }

    pub fn x_grid(&self, spec: &OcpSpec) -> Result<GridFunction> {
        GridFunction::new(Layout::Nodes, self.layout.n, spec.grid(), self.x().to_vec())
    }
}

/// One of the four assembled maps, split as `M(v) = K v + N(v) + b` with `K`
/// skew-adjoint.
#[derive(Clone, Debug)]
pub struct FlowMap {
    layout: StateLayout,
    label: String,
    weights: Vec<f64>,
    keys: Vec<usize>,
    spec: OcpSpec,
    plant: Option<PlantSpec>,
    skew: LinearOp,
    offset: Vec<f64>,
    linear: Option<LinearOp>,
    c_u: Option<LinearOp>,
    coupling: Option<ProxCoupling>,
}

fn embed_lambda0(layout: &StateLayout, target: &[f64], b: &DMatrix<f64>, scale: f64) -> Result<LinearOp> {
    let start = layout.lambda0().start - layout.multipliers().start;
    let mut t = Vec::new();
    for i in 0..b.nrows() {
        for j in 0..b.ncols() {
            if b[(i, j)] != 0.0 {
                t.push((start + i, j, scale * b[(i, j)]));
            }
        }
    }
    LinearOp::from_triplets(target.len(), b.ncols(), &t, vec![1.0; b.ncols()], target.to_vec())
}

impl FlowMap {
    pub fn new(variant: Variant, spec: &OcpSpec, plant: Option<&PlantSpec>) -> Result<Self> {
        let (n, m) = (spec.state_dim(), spec.control_dim());
        let alpha = spec.alpha();
        let plant = match (variant.is_closed(), plant) {
            (true, None) => return Err(Error::Usage(format!("{} needs a plant", variant.key()))),
            (true, Some(p)) => {
                if p.input_dim() != m {
                    return shape_err(format!(
                        "plant has {} inputs, the optimizer has {m} controls",
                        p.input_dim()
                    ));
                }
                Some(p.clone())
            }
            (false, _) => None,
        };
        let reduced = !variant.has_control();
        if reduced {
            let Some(bx) = spec.bounds() else {
                return Err(Error::Usage(format!("{} needs a control box", variant.key())));
            };
            if variant == Variant::ClosedC && !bx.is_symmetric() {
                return Err(Error::Usage("closed_c needs a symmetric box (lower = -upper)".into()));
            }
        }
        let layout = StateLayout::new(variant, spec, plant.as_ref().map_or(0, |p| p.dim()));
        let weights = layout.weights();
        let keys = layout.time_keys();
        let ops = spec.ops();
        let c_x = ops.c_x();
        let c_u = ops.c_u();
        let cs_x = ops.c_star_x();
        let cs_u = ops.c_star_u();

        let wp = &weights[layout.plant()];
        let wx = &weights[layout.x()];
        let wu = &weights[layout.u()];
        let wl = &weights[layout.multipliers()];

        let mut spaces: Vec<&[f64]> = Vec::new();
        let ip = if variant.is_closed() {
            spaces.push(wp);
            Some(0)
        } else {
            None
        };
        let ix = spaces.len();
        spaces.push(wx);
        let iu = if variant.has_control() {
            spaces.push(wu);
            Some(spaces.len() - 1)
        } else {
            None
        };
        let il = spaces.len();
        spaces.push(wl);

        let mut blocks: Vec<(usize, usize, &LinearOp, f64)> = vec![(ix, il, &cs_x, 1.0), (il, ix, &c_x, -1.0)];
        if let Some(iu) = iu {
            blocks.push((iu, il, &cs_u, 1.0));
            blocks.push((il, iu, &c_u, -1.0));
        }

        let mut coupling_blocks = Vec::new();
        let mut coupling = None;
        if let (Some(p), Some(ip)) = (&plant, ip) {
            let b1 = LinearOp::from_dense(p.b_p());
            match variant {
                Variant::ClosedU => {
                    let b2 = embed_lambda0(&layout, wl, spec.sys().b(), 1.0)?;
                    let e = LinearOp::identity(vec![1.0; m])?.scaled(1.0 / alpha);
                    let k0 = crate::discrete_ops::build_skew_coupling(&b1, &b2, &e)?;
                    let np = p.dim();
                    coupling_blocks.push((ip, il, k0.row_block(0, np)?.column_block(np, wl.len())?));
                    coupling_blocks.push((il, ip, k0.row_block(np, wl.len())?.column_block(0, np)?));
                }
                Variant::ClosedC => {
                    let rest: Vec<f64> = weights[layout.x().start..].to_vec();
                    let mut b2t = Vec::new();
                    let lam0 = layout.lambda0().start - layout.x().start;
                    let b = spec.sys().b();
                    for i in 0..n {
                        for j in 0..m {
                            if b[(i, j)] != 0.0 {
                                b2t.push((lam0 + i, j, b[(i, j)] / alpha));
                            }
                        }
                    }
                    let b2 = LinearOp::from_triplets(rest.len(), m, &b2t, vec![1.0; m], rest)?;
                    let id = LinearOp::identity(vec![1.0; m])?;
                    let bx = spec.bounds().expect("checked above").clone();
                    coupling = Some(ProxCoupling::new(b1, b2, id.clone(), id, bx, 0.5)?);
                }
                _ => {}
            }
        }
        for (bi, bj, op) in &coupling_blocks {
            blocks.push((*bi, *bj, op, 1.0));
        }
        let skew = LinearOp::assemble(&spaces, &spaces, &blocks)?;

        let mut offset = vec![0.0; layout.len()];
        if !variant.is_closed() {
            offset[layout.multipliers()].copy_from_slice(&spec.input_vector());
        }

        let linear_plant = match plant.as_ref().map(|p| p.dynamics()) {
            None => Some(None),
            Some(PlantDynamics::Linear(mp)) => Some(Some(mp.clone())),
            Some(_) => None,
        };
        let linear = match (spec.cost().state.hessian(n), linear_plant, reduced) {
            (Some(h), Some(mp), false) => {
                let mut t = Vec::new();
                if let Some(mp) = mp {
                    for i in 0..mp.nrows() {
                        for j in 0..mp.ncols() {
                            if mp[(i, j)] != 0.0 {
                                t.push((i, j, mp[(i, j)]));
                            }
                        }
                    }
                }
                let x0 = layout.x().start;
                for k in 0..=layout.intervals {
                    for i in 0..n {
                        for j in 0..n {
                            if h[(i, j)] != 0.0 {
                                t.push((x0 + k * n + i, x0 + k * n + j, h[(i, j)]));
                            }
                        }
                    }
                }
                t.extend(layout.u().map(|i| (i, i, alpha)));
                t.extend(skew.triplets());
                Some(LinearOp::from_triplets(layout.len(), layout.len(), &t, weights.clone(), weights.clone())?)
            }
            _ => None,
        };

        let label = match &plant {
            Some(p) => format!("{} ({:?})", variant.key(), p),
            None => variant.key().to_string(),
        };
        Ok(Self {
            layout,
            label,
            weights,
            keys,
            spec: spec.clone(),
            plant,
            skew,
            offset,
            linear,
            c_u: reduced.then_some(c_u),
            coupling,
        })
    }

    pub fn open_unconstrained(spec: &OcpSpec) -> Result<Self> {
        Self::new(Variant::OpenU, spec, None)
    }

    pub fn open_constrained(spec: &OcpSpec) -> Result<Self> {
        Self::new(Variant::OpenC, spec, None)
    }

    pub fn closed_unconstrained(spec: &OcpSpec, plant: &PlantSpec) -> Result<Self> {
        Self::new(Variant::ClosedU, spec, Some(plant))
    }

    pub fn closed_constrained(spec: &OcpSpec, plant: &PlantSpec) -> Result<Self> {
        Self::new(Variant::ClosedC, spec, Some(plant))
    }

    pub fn variant(&self) -> Variant {
        self.layout.variant
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn spec(&self) -> &OcpSpec {
        &self.spec
    }

    pub fn plant(&self) -> Option<&PlantSpec> {
        self.plant.as_ref()
    }

    /// The skew-adjoint linear part `K`.
    pub fn skew(&self) -> &LinearOp {
        &self.skew
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Input operator `𝓑 = (0; −I)` of the open-loop flows: the map built
    /// with zero data, driven by `(f, x₀)`, is `v̇ = −M(v) + 𝓑(f, x₀)`.
    pub fn input_operator(&self) -> Result<LinearOp> {
        if self.variant().is_closed() {
            return Err(Error::Usage("closed-loop flows have no external input".into()));
        }
        let range = self.layout.multipliers();
        let t: Vec<_> = range.clone().enumerate().map(|(j, i)| (i, j, -1.0)).collect();
        LinearOp::from_triplets(self.layout.len(), range.len(), &t, self.weights[range].to_vec(), self.weights.clone())
    }

    /// Adds `N(v)` (the non-skew part without the offset) to `out`.
    fn add_nonlinear(&self, v: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        if let Some(p) = &self.plant {
            let r = l.plant();
            let mut mp = vec![0.0; r.len()];
            p.apply_mp(&v[r.clone()], &mut mp);
            out[r].iter_mut().zip(&mp).for_each(|(o, m)| *o += m);
        }
        let n = l.n;
        let xr = l.x();
        let mut g = vec![0.0; n];
        for (xs, os) in v[xr.clone()].chunks_exact(n).zip(out[xr].chunks_exact_mut(n)) {
            self.spec.cost().state.gradient(xs, &mut g);
            os.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi);
        }
        let alpha = self.spec.alpha();
        for i in l.u() {
            out[i] += alpha * v[i];
        }
        if let Some(c_u) = &self.c_u {
            let u = reduced_control(&self.spec, &v[l.lambda()]);
            c_u.apply_add(-1.0, &u, &mut out[l.multipliers()]);
        }
        if let Some(k) = &self.coupling {
            k.apply_add(v, out);
        }
    }

    /// The plant input implied by the interconnection.
    pub fn feedback(&self, v: &[f64]) -> Result<Vec<f64>> {
        let l = &self.layout;
        if v.len() != l.len() {
            return shape_err(format!("state of length {}, expected {}", v.len(), l.len()));
        }
        let alpha = self.spec.alpha();
        let b = self.spec.sys().b();
        let lam0 = &v[l.lambda0()];
        let bt_l0: Vec<f64> = (0..l.m).map(|j| (0..l.n).map(|i| b[(i, j)] * lam0[i]).sum::<f64>() / alpha).collect();
        match self.variant() {
            Variant::ClosedU => Ok(bt_l0),
            Variant::ClosedC => {
                let k = self.coupling.as_ref().expect("closed_c carries its coupling");
                let bx = k.box_set();
                let mut a = bt_l0;
                bx.project_in_place(&mut a);
                let mut y = self.plant.as_ref().expect("closed").output(&v[l.plant()]);
                bx.project_in_place(&mut y);
                Ok(a.iter().zip(&y).map(|(p, q)| 0.5 * p - 0.5 * q).collect())
            }
            v => Err(Error::Usage(format!("{} has no plant feedback", v.key()))),
        }
    }

    pub fn state(&self, data: Vec<f64>) -> Result<FlowState> {
        FlowState::new(self.layout, data)
    }
}

impl MonotoneMap for FlowMap {
    fn label(&self) -> &str {
        &self.label
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        if let Some(l) = &self.linear {
            out.copy_from_slice(&self.offset);
            l.apply_add(1.0, v, out);
            return;
        }
        out.copy_from_slice(&self.offset);
        self.skew.apply_add(1.0, v, out);
        self.add_nonlinear(v, out);
    }

    fn dissipative_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.offset);
        self.add_nonlinear(v, out);
    }

    fn affine(&self) -> Option<Affine<'_>> {
        self.linear.as_ref().map(|l| Affine { linear: l, offset: &self.offset })
    }

    fn time_keys(&self) -> Option<&[usize]> {
        Some(&self.keys)
    }
}

impl Observer for FlowMap {
    fn plant_norm(&self, v: &[f64]) -> Option<f64> {
        self.plant.as_ref()?;
        Some(v[self.layout.plant()].iter().map(|z| z * z).sum::<f64>().sqrt())
    }

    fn feedback(&self, v: &[f64]) -> Option<Vec<f64>> {
        if !self.variant().is_closed() {
            return None;
        }
        FlowMap::feedback(self, v).ok()
    }

    fn feasibility_margin(&self, v: &[f64]) -> Option<f64> {
        let k = self.coupling.as_ref()?;
        let u = FlowMap::feedback(self, v).ok()?;
        Some(k.box_set().margin(&u))
    }
}

/// The plant input of a closed-loop state.
pub fn feedback_u_p(map: &FlowMap, v: &FlowState) -> Result<Vec<f64>> {
    if v.variant() != map.variant() {
        return Err(Error::Usage(format!("{} state for a {} map", v.variant().key(), map.variant().key())));
    }
    map.feedback(v.as_slice())
}

fn rhs(map: &FlowMap, v: &FlowState) -> Result<FlowState> {
    if v.layout() != map.layout() {
        return shape_err(format!("state layout {:?} does not match the flow {:?}", v.layout(), map.layout()));
    }
    let mut out = map.eval(v.as_slice())?;
    out.iter_mut().for_each(|x| *x = -*x);
    Ok(FlowState { layout: *map.layout(), data: out })
}

/// `ẇ` of the open-loop flow driven by the constant input `(f, x₀)`.
pub fn rhs_open_unconstrained(spec: &OcpSpec, w: &FlowState, f: &GridFunction, x0: &[f64]) -> Result<FlowState> {
    rhs(&FlowMap::open_unconstrained(&spec.with_input(f.clone(), x0.to_vec())?)?, w)
}

pub fn rhs_open_constrained(spec: &OcpSpec, w: &FlowState, f: &GridFunction, x0: &[f64]) -> Result<FlowState> {
    rhs(&FlowMap::open_constrained(&spec.with_input(f.clone(), x0.to_vec())?)?, w)
}

/// Closed-loop flows ignore `f` and `x₀` of `spec`: the plant is the input.
pub fn rhs_closed_unconstrained(spec: &OcpSpec, plant: &PlantSpec, v: &FlowState) -> Result<FlowState> {
    rhs(&FlowMap::closed_unconstrained(spec, plant)?, v)
}

pub fn rhs_closed_constrained(spec: &OcpSpec, plant: &PlantSpec, v: &FlowState) -> Result<FlowState> {
    rhs(&FlowMap::closed_constrained(spec, plant)?, v)
}
