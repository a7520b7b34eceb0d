//! Monotone operators as single-valued maps on weighted coordinate spaces,
//! the box projection, firmly nonexpansive couplings, resolvent steps, and
//! sampled certificates for the structural properties.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::banded::BandedLu;
use crate::error::{shape_err, Error, Result};
use crate::integrator::Trajectory;
use crate::linear_op::{weighted_dot, weighted_norm, LinearOp};
use crate::timegrid::GridFunction;

/// Linear-plus-constant structure `M(v) = L v + b`.
#[derive(Clone, Copy, Debug)]
pub struct Affine<'a> {
    pub linear: &'a LinearOp,
    pub offset: &'a [f64],
}

/// A monotone map `M` on a space with diagonal inner-product weights.
/// Flows integrate `v̇ = −M(v)`.
pub trait MonotoneMap: Send + Sync {
    fn label(&self) -> &str;

    fn weights(&self) -> &[f64];

    fn dim(&self) -> usize {
        self.weights().len()
    }

    /// `out = M(v)`; `v` and `out` must have length `dim()`.
    fn apply_into(&self, v: &[f64], out: &mut [f64]);

    /// `M(v) − K v`, where `K` is the skew-adjoint linear part of `M`.
    fn dissipative_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_into(v, out)
    }

    fn affine(&self) -> Option<Affine<'_>> {
        None
    }

    /// Ordering keys that make the linear part banded.
    fn time_keys(&self) -> Option<&[usize]> {
        None
    }

    fn eval(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return shape_err(format!("{} acts on length {}, got {}", self.label(), self.dim(), v.len()));
        }
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out);
        Ok(out)
    }

    fn dissipative(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return shape_err(format!("{} acts on length {}, got {}", self.label(), self.dim(), v.len()));
        }
        let mut out = vec![0.0; v.len()];
        self.dissipative_into(v, &mut out);
        Ok(out)
    }
}

/// Affine monotone map given by an operator and an offset.
#[derive(Clone, Debug)]
pub struct AffineMap {
    label: String,
    linear: LinearOp,
    offset: Vec<f64>,
    skew: Option<LinearOp>,
    keys: Option<Vec<usize>>,
}

impl AffineMap {
    pub fn new(label: impl Into<String>, linear: LinearOp, offset: Vec<f64>) -> Result<Self> {
        if linear.rows() != linear.cols() || offset.len() != linear.rows() {
            return shape_err("affine map needs a square operator and matching offset");
        }
        if linear.in_weights() != linear.out_weights() {
            return shape_err("affine map must act within one space");
        }
        Ok(Self { label: label.into(), linear, offset, skew: None, keys: None })
    }

    /// Registers the skew part used by the dissipation monitors.
    pub fn with_skew(mut self, skew: LinearOp) -> Self {
        self.skew = Some(skew);
        self
    }

    pub fn with_time_keys(mut self, keys: Vec<usize>) -> Self {
        self.keys = Some(keys);
        self
    }

    pub fn linear(&self) -> &LinearOp {
        &self.linear
    }
}

impl MonotoneMap for AffineMap {
    fn label(&self) -> &str {
        &self.label
    }

    fn weights(&self) -> &[f64] {
        self.linear.in_weights()
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.offset);
        self.linear.apply_add(1.0, v, out);
    }

    fn dissipative_into(&self, v: &[f64], out: &mut [f64]) {
        self.apply_into(v, out);
        if let Some(k) = &self.skew {
            k.apply_add(-1.0, v, out);
        }
    }

    fn affine(&self) -> Option<Affine<'_>> {
        Some(Affine { linear: &self.linear, offset: &self.offset })
    }

    fn time_keys(&self) -> Option<&[usize]> {
        self.keys.as_deref()
    }
}

/// Closure-backed map for ad-hoc operators and tests.
pub struct FnMap<F> {
    label: String,
    weights: Vec<f64>,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(label: impl Into<String>, weights: Vec<f64>, f: F) -> Self {
        Self { label: label.into(), weights, f }
    }
}

impl<F> MonotoneMap for FnMap<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn label(&self) -> &str {
        &self.label
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        (self.f)(v, out)
    }
}

/// Componentwise bounds `lower < upper`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return shape_err(format!("box bounds of length {} and {}", lower.len(), upper.len()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l >= u {
                return Err(Error::Invalid(format!("box component {i}: need lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(bound: Vec<f64>) -> Result<Self> {
        Self::new(bound.iter().map(|b| -b).collect(), bound)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains_origin_in_interior(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| *l < 0.0 && *u > 0.0)
    }

    pub fn is_symmetric(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| *l == -*u)
    }

    /// Clamps `v` (a stack of `m`-vectors) in place.
    pub fn project_in_place(&self, v: &mut [f64]) {
        let m = self.dim();
        for (i, x) in v.iter_mut().enumerate() {
            let k = i % m;
            *x = x.clamp(self.lower[k], self.upper[k]);
        }
    }

    /// Smallest distance of `u` to the boundary; negative when outside.
    pub fn margin(&self, u: &[f64]) -> f64 {
        let m = self.dim();
        u.iter()
            .enumerate()
            .map(|(i, x)| (x - self.lower[i % m]).min(self.upper[i % m] - x))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Projection onto the box, pointwise in time for stacked samples.
pub fn project_box(v: &[f64], bx: &BoxSet) -> Result<Vec<f64>> {
    if v.len() % bx.dim() != 0 {
        return shape_err(format!("length {} is not a multiple of {}", v.len(), bx.dim()));
    }
    let mut out = v.to_vec();
    bx.project_in_place(&mut out);
    Ok(out)
}

pub fn project_grid(g: &GridFunction, bx: &BoxSet) -> Result<Vec<f64>> {
    if g.dim() != bx.dim() {
        return shape_err(format!("grid function of dim {} vs box of dim {}", g.dim(), bx.dim()));
    }
    project_box(g.as_slice(), bx)
}

/// `v − P_F(v)`, the proximal map of the support function of the box.
pub fn moreau_complement(v: &[f64], bx: &BoxSet) -> Result<Vec<f64>> {
    let p = project_box(v, bx)?;
    Ok(v.iter().zip(&p).map(|(a, b)| a - b).collect())
}

/// Saturated coupling between two relative monotone systems:
///
/// `K(x₁, x₂) = ( c B₁F₁*(d), −c B₂F₂*(d) )`, `d = P(F₁B₁*x₁) − P(F₂B₂*x₂)`
///
/// with `b_i: U_i → X_i`, `f_i: U_i → H` and `P` the box projection on `H`.
#[derive(Clone, Debug)]
pub struct ProxCoupling {
    b1: LinearOp,
    b2: LinearOp,
    b1_adj: LinearOp,
    b2_adj: LinearOp,
    f1: LinearOp,
    f2: LinearOp,
    f1_adj: LinearOp,
    f2_adj: LinearOp,
    bx: BoxSet,
    c: f64,
    weights: Vec<f64>,
}

impl ProxCoupling {
    pub fn new(b1: LinearOp, b2: LinearOp, f1: LinearOp, f2: LinearOp, bx: BoxSet, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Invalid(format!("coupling gain must be positive, got {c}")));
        }
        if f1.cols() != b1.cols() || f2.cols() != b2.cols() {
            return shape_err("F_i must act on the input space of system i");
        }
        if f1.rows() != bx.dim() || f2.rows() != bx.dim() {
            return shape_err(format!("F_i must map into the {}-dimensional box space", bx.dim()));
        }
        if f1.out_weights() != f2.out_weights() {
            return shape_err("F_1 and F_2 must share the target space");
        }
        let weights = [b1.out_weights(), b2.out_weights()].concat();
        Ok(Self {
            b1_adj: b1.adjoint(),
            b2_adj: b2.adjoint(),
            f1_adj: f1.adjoint(),
            f2_adj: f2.adjoint(),
            b1,
            b2,
            f1,
            f2,
            bx,
            c,
            weights,
        })
    }

    pub fn split(&self) -> usize {
        self.b1.rows()
    }

    /// `(P(F₁B₁*x₁), P(F₂B₂*x₂))`.
    pub fn saturated_outputs(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (x1, x2) = v.split_at(self.split());
        let mut a = vec![0.0; self.bx.dim()];
        let mut b = vec![0.0; self.bx.dim()];
        let y1 = self.b1_adj.apply(x1).expect("shape");
        let y2 = self.b2_adj.apply(x2).expect("shape");
        self.f1.apply_add(1.0, &y1, &mut a);
        self.f2.apply_add(1.0, &y2, &mut b);
        self.bx.project_in_place(&mut a);
        self.bx.project_in_place(&mut b);
        (a, b)
    }

    /// Adds `K(v)` to `out`.
    pub fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        let (a, b) = self.saturated_outputs(v);
        let d: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
        let (o1, o2) = out.split_at_mut(self.split());
        let g1 = self.f1_adj.apply(&d).expect("shape");
        let g2 = self.f2_adj.apply(&d).expect("shape");
        self.b1.apply_add(self.c, &g1, o1);
        self.b2.apply_add(-self.c, &g2, o2);
    }

    pub fn gain(&self) -> f64 {
        self.c
    }

    pub fn box_set(&self) -> &BoxSet {
        &self.bx
    }
}

impl MonotoneMap for ProxCoupling {
    fn label(&self) -> &str {
        "prox coupling"
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        self.apply_add(v, out);
    }
}

/// Factored resolvent `(I + hL)⁻¹` of an affine monotone map.
#[derive(Clone, Debug)]
pub struct Resolvent {
    lu: BandedLu,
    step: f64,
    offset: Vec<f64>,
}

impl Resolvent {
    pub fn new(map: &dyn MonotoneMap, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Invalid(format!("resolvent step must be positive, got {h}")));
        }
        let affine = map.affine().ok_or_else(|| {
            Error::Unsupported(format!("{} has no affine structure; resolvent steps need one", map.label()))
        })?;
        let identity_keys: Vec<usize>;
        let keys = match map.time_keys() {
            Some(k) => k,
            None => {
                identity_keys = (0..map.dim()).collect();
                &identity_keys
            }
        };
        let lu = BandedLu::factor(&affine.linear.scaled(h), 1.0, keys)?;
        Ok(Self { lu, step: h, offset: affine.offset.to_vec() })
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// Solves `(I + hL) w = v − h b + h·forcing`.
    pub fn apply_forced(&self, v: &[f64], forcing: Option<&[f64]>) -> Result<Vec<f64>> {
        let h = self.step;
        let mut rhs: Vec<f64> = v.iter().zip(&self.offset).map(|(x, b)| x - h * b).collect();
        if let Some(f) = forcing {
            rhs.iter_mut().zip(f).for_each(|(r, g)| *r += h * g);
        }
        self.lu.solve(&rhs)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.apply_forced(v, None)
    }
}

/// One implicit-Euler step of `v̇ = −M(v)` for affine `M`.
pub fn resolvent_step(map: &dyn MonotoneMap, v: &[f64], h: f64) -> Result<Vec<f64>> {
    if v.len() != map.dim() {
        return shape_err(format!("state of length {} for map of dim {}", v.len(), map.dim()));
    }
    Resolvent::new(map, h)?.apply(v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyReport {
    pub label: String,
    pub property: String,
    pub samples: usize,
    /// Smallest normalized slack seen; the property holds when this is
    /// at least `-tolerance`.
    pub worst_slack: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyReport {
    pub fn new(label: &str, property: &str, samples: usize, worst_slack: f64, tolerance: f64) -> Self {
        Self {
            label: label.to_string(),
            property: property.to_string(),
            samples,
            worst_slack,
            tolerance,
            passed: worst_slack >= -tolerance && worst_slack.is_finite(),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "{:<6} {:<40} {:<28} n={:<6} worst slack {:+.3e} (tol {:.1e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.property,
            self.samples,
            self.worst_slack,
            self.tolerance
        )
    }
}

/// Uniform sample from the weighted ball of the given radius.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], radius: f64) -> Vec<f64> {
    let d = weights.len();
    let mut v: Vec<f64> = weights.iter().map(|w| rng.sample::<f64, _>(StandardNormal) / w.sqrt()).collect();
    let norm = weighted_norm(&v, weights);
    let r = radius * rng.gen::<f64>().powf(1.0 / d as f64);
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x *= r / norm);
    }
    v
}

/// Sampled certificate of `⟨M(v₁) − M(v₂), v₁ − v₂⟩ ≥ 0`, normalized by
/// `‖M(v₁) − M(v₂)‖‖v₁ − v₂‖`.
pub fn check_monotone<R: Rng + ?Sized>(
    map: &dyn MonotoneMap,
    rng: &mut R,
    pairs: usize,
    radius: f64,
    tol: f64,
) -> PropertyReport {
    let w = map.weights();
    let mut worst = f64::INFINITY;
    let mut m1 = vec![0.0; map.dim()];
    let mut m2 = vec![0.0; map.dim()];
    for _ in 0..pairs {
        let v1 = sample_ball(rng, w, radius);
        let v2 = sample_ball(rng, w, radius);
        map.apply_into(&v1, &mut m1);
        map.apply_into(&v2, &mut m2);
        worst = worst.min(normalized_pairing(&m1, &m2, &v1, &v2, w));
    }
    PropertyReport::new(map.label(), "monotone", pairs, worst, tol)
}

/// Sampled certificate of `⟨M(v), v⟩ ≥ ⟨M(0), 0⟩ = 0` relative to the origin.
pub fn check_relative_monotone<R: Rng + ?Sized>(
    map: &dyn MonotoneMap,
    rng: &mut R,
    samples: usize,
    radius: f64,
    tol: f64,
) -> PropertyReport {
    let w = map.weights();
    let zero = vec![0.0; map.dim()];
    let m0 = map.eval(&zero).expect("dimension");
    let mut worst = f64::INFINITY;
    let mut m1 = vec![0.0; map.dim()];
    for _ in 0..samples {
        let v = sample_ball(rng, w, radius);
        map.apply_into(&v, &mut m1);
        worst = worst.min(normalized_pairing(&m1, &m0, &v, &zero, w));
    }
    PropertyReport::new(map.label(), "relative monotone at 0", samples, worst, tol)
}

fn normalized_pairing(m1: &[f64], m2: &[f64], v1: &[f64], v2: &[f64], w: &[f64]) -> f64 {
    let dm: Vec<f64> = m1.iter().zip(m2).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a - b).collect();
    let pairing = weighted_dot(&dm, &dv, w);
    let scale = weighted_norm(&dm, w) * weighted_norm(&dv, w);
    if scale == 0.0 {
        pairing
    } else {
        pairing / scale
    }
}

/// Sampled certificate of `⟨T(x) − T(y), x − y⟩ ≥ ‖T(x) − T(y)‖²`,
/// normalized by `‖x − y‖²`. `sample` draws one point.
pub fn check_firmly_nonexpansive<R: Rng + ?Sized>(
    label: &str,
    map: &dyn Fn(&[f64]) -> Vec<f64>,
    weights: &[f64],
    rng: &mut R,
    pairs: usize,
    sample: &dyn Fn(&mut R) -> Vec<f64>,
    tol: f64,
) -> PropertyReport {
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let x = sample(rng);
        let y = sample(rng);
        let tx = map(&x);
        let ty = map(&y);
        let dt: Vec<f64> = tx.iter().zip(&ty).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let slack = weighted_dot(&dt, &dv, weights) - weighted_dot(&dt, &dt, weights);
        let scale = weighted_dot(&dv, &dv, weights);
        worst = worst.min(if scale > 0.0 { slack / scale } else { slack });
    }
    PropertyReport::new(label, "firmly nonexpansive", pairs, worst, tol)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivativeReport {
    pub label: String,
    pub samples: usize,
    /// Largest raw violation of the inequality or identity.
    pub max_violation: f64,
    /// Largest violation minus its pointwise tolerance.
    pub max_excess: f64,
    pub passed: bool,
}

impl DerivativeReport {
    fn new(label: &str, violations: &[(f64, f64)]) -> Self {
        let max_violation = violations.iter().map(|v| v.0).fold(0.0, f64::max);
        let max_excess = violations.iter().map(|v| v.0 - v.1).fold(f64::NEG_INFINITY, f64::max);
        Self {
            label: label.to_string(),
            samples: violations.len(),
            max_violation,
            max_excess,
            passed: violations.iter().all(|(v, t)| v <= t),
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "{:<6} {:<40} n={:<6} max violation {:.3e} (excess over tol {:+.3e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.label,
            self.samples,
            self.max_violation,
            self.max_excess
        )
    }
}

/// Centered derivative of `values` at interior records, with the tolerance
/// `10 (fd_err + scale_i · local_err_i / dt_int)`.
fn centered_derivative(traj: &Trajectory, values: &[f64], scale: &[f64]) -> Vec<(usize, f64, f64)> {
    let t = &traj.times;
    let mut out = Vec::new();
    for i in 2..values.len().saturating_sub(2) {
        let d = t[i + 1] - t[i - 1];
        let hl = t[i] - t[i - 1];
        let hr = t[i + 1] - t[i];
        if (hl - hr).abs() > 1e-9 * hl || (t[i - 1] - t[i - 2] - hl).abs() > 1e-9 * hl || (t[i + 2] - t[i + 1] - hr).abs() > 1e-9 * hl {
            continue;
        }
        let deriv = (values[i + 1] - values[i - 1]) / d;
        let third = values[i + 2] - 2.0 * values[i + 1] + 2.0 * values[i - 1] - values[i - 2];
        let fd_err = third.abs() / (12.0 * hl);
        let rounding = 4.0 * f64::EPSILON * values[i].abs().max(1.0) / hl;
        let tol = 10.0 * (fd_err + scale[i] * traj.local_error[i] / traj.dt_int) + rounding;
        out.push((i, deriv, tol));
    }
    out
}

/// Shifted passivity `d/dt ½‖v − v̄‖² ≤ ⟨y − ȳ, u − ū⟩` with `y = B_in* v`, along
/// a trajectory with recorded inputs and states.
pub fn check_shifted_passivity(
    map: &dyn MonotoneMap,
    traj: &Trajectory,
    steady: (&[f64], &[f64]),
    b_in: &LinearOp,
) -> Result<DerivativeReport> {
    let inputs = traj
        .inputs
        .as_ref()
        .ok_or_else(|| Error::Usage("passivity check needs a trajectory with recorded inputs".into()))?;
    if traj.states.len() != traj.len() {
        return Err(Error::Usage("passivity check needs recorded states".into()));
    }
    let (v_bar, u_bar) = steady;
    if v_bar.len() != map.dim() || b_in.rows() != map.dim() || b_in.cols() != u_bar.len() {
        return shape_err("steady pair does not match the map and input operator");
    }
    let w = map.weights();
    let mut energy = Vec::with_capacity(traj.len());
    let mut dist = Vec::with_capacity(traj.len());
    for s in &traj.states {
        let d: Vec<f64> = s.iter().zip(v_bar).map(|(a, b)| a - b).collect();
        let n = weighted_norm(&d, w);
        energy.push(0.5 * n * n);
        dist.push(n);
    }
    let mut violations = Vec::new();
    for (i, deriv, tol) in centered_derivative(traj, &energy, &dist) {
        let du: Vec<f64> = inputs[i].iter().zip(u_bar).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = traj.states[i].iter().zip(v_bar).map(|(a, b)| a - b).collect();
        let supply = weighted_dot(&dv, &b_in.apply(&du)?, w);
        violations.push((deriv - supply, tol));
    }
    Ok(DerivativeReport::new(&format!("{}: shifted passivity", map.label()), &violations))
}

/// `d/dt ½‖v − s₀‖² = −⟨N(v) − N(s₀), v − s₀⟩` (or the unshifted form when the
/// trajectory has no reference), comparing the norm channel with the recorded
/// dissipation rate.
pub fn check_dissipation_identity(label: &str, traj: &Trajectory) -> Result<DerivativeReport> {
    let norms = match &traj.reference {
        Some(_) => traj.shifted_norm.as_deref().expect("reference implies shifted norm"),
        None => &traj.state_norm,
    };
    if traj.inputs.is_some() {
        return Err(Error::Usage("dissipation identities hold for autonomous runs only".into()));
    }
    let energy: Vec<f64> = norms.iter().map(|n| 0.5 * n * n).collect();
    let violations: Vec<(f64, f64)> = centered_derivative(traj, &energy, norms)
        .into_iter()
        .map(|(i, deriv, tol)| ((deriv - traj.dissipation_rate[i]).abs(), tol))
        .collect();
    let kind = if traj.reference.is_some() { "shifted dissipation identity" } else { "dissipation identity" };
    Ok(DerivativeReport::new(&format!("{label}: {kind}"), &violations))
}
