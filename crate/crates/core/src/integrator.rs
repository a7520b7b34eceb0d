//! Fixed-step integration of `v̇ = −M(v) + B_in s(t)` with monitor channels.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::fmt::sci15;
use crate::linear_op::{weighted_dot, weighted_norm, LinearOp};
use crate::monotone::{MonotoneMap, Resolvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    ImplicitEuler,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Method::Rk4),
            "implicit_euler" => Ok(Method::ImplicitEuler),
            _ => Err(Error::Invalid(format!("unknown method `{s}` (expected rk4 or implicit_euler)"))),
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::ImplicitEuler => "implicit_euler",
        }
    }

    fn order(self) -> i32 {
        match self {
            Method::Rk4 => 4,
            Method::ImplicitEuler => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub dt_int: f64,
    pub t_final: f64,
    pub record_every: usize,
    pub stop_tol: Option<f64>,
    /// Skips the RK4 stability guard.
    pub allow_unstable: bool,
}

impl IntegratorConfig {
    pub fn rk4(dt_int: f64, t_final: f64) -> Self {
        Self { method: Method::Rk4, dt_int, t_final, record_every: 1, stop_tol: None, allow_unstable: false }
    }

    pub fn implicit_euler(dt_int: f64, t_final: f64) -> Self {
        Self { method: Method::ImplicitEuler, ..Self::rk4(dt_int, t_final) }
    }

    pub fn record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }

    pub fn stop_tol(mut self, tol: f64) -> Self {
        self.stop_tol = Some(tol);
        self
    }

    pub fn allow_unstable(mut self, yes: bool) -> Self {
        self.allow_unstable = yes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_int > 0.0 && self.dt_int.is_finite()) {
            return Err(Error::Invalid(format!("dt_int must be positive, got {}", self.dt_int)));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::Invalid(format!("T must be positive, got {}", self.t_final)));
        }
        if self.record_every == 0 {
            return Err(Error::Invalid("record_every must be at least 1".into()));
        }
        if let Some(t) = self.stop_tol {
            if !(t > 0.0) {
                return Err(Error::Invalid(format!("stop_tol must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.t_final / self.dt_int) - 1e-9).ceil().max(1.0) as usize
    }
}

/// Quantities recorded alongside the state.
pub trait Observer {
    fn plant_norm(&self, _v: &[f64]) -> Option<f64> {
        None
    }

    fn feedback(&self, _v: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn feasibility_margin(&self, _v: &[f64]) -> Option<f64> {
        None
    }
}

/// External input `B_in s(t)`.
pub struct InputSignal<'a> {
    pub op: &'a LinearOp,
    pub signal: &'a dyn Fn(f64) -> Vec<f64>,
}

type ChannelFn<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;

pub struct RunOptions<'a> {
    reference: Option<&'a [f64]>,
    input: Option<InputSignal<'a>>,
    observer: Option<&'a dyn Observer>,
    channels: Vec<(String, ChannelFn<'a>)>,
    keep_states: bool,
}

impl Default for RunOptions<'_> {
    fn default() -> Self {
        Self { reference: None, input: None, observer: None, channels: Vec::new(), keep_states: true }
    }
}

impl<'a> RunOptions<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Point used for `shifted_norm` and the shifted dissipation rate.
    pub fn reference(mut self, r: &'a [f64]) -> Self {
        self.reference = Some(r);
        self
    }

    pub fn input(mut self, op: &'a LinearOp, signal: &'a dyn Fn(f64) -> Vec<f64>) -> Self {
        self.input = Some(InputSignal { op, signal });
        self
    }

    pub fn observer(mut self, o: &'a dyn Observer) -> Self {
        self.observer = Some(o);
        self
    }

    pub fn channel(mut self, name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + 'a) -> Self {
        self.channels.push((name.into(), Box::new(f)));
        self
    }

    pub fn keep_states(mut self, yes: bool) -> Self {
        self.keep_states = yes;
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Empty when states were not kept.
    pub states: Vec<Vec<f64>>,
    pub inputs: Option<Vec<Vec<f64>>>,
    /// Step-doubling estimate of the one-step error at each record.
    pub local_error: Vec<f64>,
    pub state_norm: Vec<f64>,
    pub shifted_norm: Option<Vec<f64>>,
    /// `−⟨N(v) − N(s₀), v − s₀⟩`, or `−⟨N(v), v⟩` without a reference.
    pub dissipation_rate: Vec<f64>,
    pub rhs_norm: Vec<f64>,
    pub plant_norm: Option<Vec<f64>>,
    pub feedback: Option<Vec<Vec<f64>>>,
    pub feasibility_margin: Option<Vec<f64>>,
    pub extra: Vec<(String, Vec<f64>)>,
    pub reference: Option<Vec<f64>>,
    pub weights: Vec<f64>,
    pub method: Option<Method>,
    pub dt_int: f64,
    pub record_every: usize,
    pub steps: usize,
    pub stopped_early: bool,
    pub final_state: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        match name {
            "state_norm" => Some(&self.state_norm),
            "shifted_norm" => self.shifted_norm.as_deref(),
            "dissipation_rate" => Some(&self.dissipation_rate),
            "rhs_norm" => Some(&self.rhs_norm),
            "plant_norm" => self.plant_norm.as_deref(),
            "feasibility_margin" => self.feasibility_margin.as_deref(),
            "local_error" => Some(&self.local_error),
            _ => self.extra.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice()),
        }
    }

    /// Columns `t, state_norm, shifted_norm, plant_norm, dissipation_rate,
    /// u_p_k…, feasibility_margin`, then any extra channels.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let m = self.feedback.as_ref().and_then(|f| f.first()).map_or(0, |u| u.len());
        let mut header = vec!["t", "state_norm", "shifted_norm", "plant_norm", "dissipation_rate"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((0..m).map(|k| format!("u_p_{k}")));
        header.push("feasibility_margin".into());
        header.extend(self.extra.iter().map(|(n, _)| n.clone()));
        writeln!(out, "{}", header.join(","))?;
        let opt = |c: &Option<Vec<f64>>, i: usize| c.as_ref().map_or("nan".to_string(), |v| sci15(v[i]));
        for i in 0..self.len() {
            let mut row = vec![
                sci15(self.times[i]),
                sci15(self.state_norm[i]),
                opt(&self.shifted_norm, i),
                opt(&self.plant_norm, i),
                sci15(self.dissipation_rate[i]),
            ];
            if let Some(f) = &self.feedback {
                row.extend(f[i].iter().map(|v| sci15(*v)));
            }
            row.push(opt(&self.feasibility_margin, i));
            row.extend(self.extra.iter().map(|(_, v)| sci15(v[i])));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

enum Stepper {
    Rk4 { k: [Vec<f64>; 4], tmp: Vec<f64>, forcing: Vec<f64> },
    Implicit { full: Resolvent, half: Resolvent },
}

struct System<'m, 'a> {
    map: &'m dyn MonotoneMap,
    input: Option<&'m InputSignal<'a>>,
}

impl System<'_, '_> {
    fn forcing(&self, t: f64) -> Option<Vec<f64>> {
        self.input.map(|inp| {
            let s = (inp.signal)(t);
            inp.op.apply(&s).expect("input signal matches the input operator")
        })
    }

    fn rhs(&self, t: f64, v: &[f64], out: &mut [f64], forcing: &mut [f64]) {
        self.map.apply_into(v, out);
        out.iter_mut().for_each(|o| *o = -*o);
        if let Some(inp) = self.input {
            forcing.iter_mut().for_each(|f| *f = 0.0);
            inp.op.apply_add(1.0, &(inp.signal)(t), forcing);
            out.iter_mut().zip(forcing.iter()).for_each(|(o, f)| *o += f);
        }
    }
}

impl Stepper {
    fn step(&mut self, sys: &System<'_, '_>, t: f64, h: f64, v: &[f64], out: &mut Vec<f64>) -> Result<()> {
        match self {
            Stepper::Rk4 { k, tmp, forcing } => {
                let [k1, k2, k3, k4] = k;
                sys.rhs(t, v, k1, forcing);
                for i in 0..v.len() {
                    tmp[i] = v[i] + 0.5 * h * k1[i];
                }
                sys.rhs(t + 0.5 * h, tmp, k2, forcing);
                for i in 0..v.len() {
                    tmp[i] = v[i] + 0.5 * h * k2[i];
                }
                sys.rhs(t + 0.5 * h, tmp, k3, forcing);
                for i in 0..v.len() {
                    tmp[i] = v[i] + h * k3[i];
                }
                sys.rhs(t + h, tmp, k4, forcing);
                out.clear();
                out.extend((0..v.len()).map(|i| v[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])));
                Ok(())
            }
            Stepper::Implicit { full, half } => {
                let r = if (h - full.step_size()).abs() <= 1e-15 * h { &*full } else { &*half };
                *out = r.apply_forced(v, sys.forcing(t + h).as_deref())?;
                Ok(())
            }
        }
    }
}

/// Integrates from `v0` to `cfg.t_final` with a fixed step.
pub fn integrate(map: &dyn MonotoneMap, v0: &[f64], cfg: &IntegratorConfig, opts: RunOptions<'_>) -> Result<Trajectory> {
    cfg.validate()?;
    let dim = map.dim();
    if v0.len() != dim {
        return shape_err(format!("initial state of length {}, {} acts on {dim}", v0.len(), map.label()));
    }
    if let Some(r) = opts.reference {
        if r.len() != dim {
            return shape_err(format!("reference of length {}, expected {dim}", r.len()));
        }
    }
    if let Some(inp) = &opts.input {
        if inp.op.rows() != dim {
            return shape_err(format!("input operator has {} rows, expected {dim}", inp.op.rows()));
        }
    }
    let h = cfg.dt_int;
    let mut stepper = match cfg.method {
        Method::Rk4 => {
            if !cfg.allow_unstable {
                let bound = spectral_step_bound(map, v0);
                if h > bound.cap {
                    return Err(Error::Invalid(format!(
                        "dt_int = {h} exceeds the RK4 stability cap {:.3e} (Jacobian norm ~ {:.3e}); \
                         reduce dt_int or allow unstable steps",
                        bound.cap, bound.jacobian_norm
                    )));
                }
            }
            Stepper::Rk4 { k: std::array::from_fn(|_| vec![0.0; dim]), tmp: vec![0.0; dim], forcing: vec![0.0; dim] }
        }
        Method::ImplicitEuler => {
            if map.affine().is_none() {
                return Err(Error::Unsupported(format!(
                    "implicit Euler needs an affine flow; {} is nonlinear",
                    map.label()
                )));
            }
            Stepper::Implicit { full: Resolvent::new(map, h)?, half: Resolvent::new(map, 0.5 * h)? }
        }
    };
    let sys = System { map, input: opts.input.as_ref() };
    let w = map.weights().to_vec();
    let steps = cfg.steps();
    let richardson = {
        let p = 2f64.powi(cfg.method.order());
        p / (p - 1.0)
    };

    let mut traj = Trajectory {
        reference: opts.reference.map(|r| r.to_vec()),
        weights: w.clone(),
        method: Some(cfg.method),
        dt_int: h,
        record_every: cfg.record_every,
        shifted_norm: opts.reference.map(|_| Vec::new()),
        inputs: opts.input.as_ref().map(|_| Vec::new()),
        extra: opts.channels.iter().map(|(n, _)| (n.clone(), Vec::new())).collect(),
        ..Default::default()
    };
    let n_ref = opts.reference.map(|r| {
        let mut out = vec![0.0; dim];
        map.dissipative_into(r, &mut out);
        out
    });

    let mut scratch = vec![0.0; dim];
    let mut a = Vec::with_capacity(dim);
    let mut b = Vec::with_capacity(dim);
    let mut c = Vec::with_capacity(dim);

    let mut record = |traj: &mut Trajectory, stepper: &mut Stepper, t: f64, v: &[f64]| -> Result<f64> {
        traj.times.push(t);
        if opts.keep_states {
            traj.states.push(v.to_vec());
        }
        traj.state_norm.push(weighted_norm(v, &w));
        let mut rhs = vec![0.0; dim];
        sys.rhs(t, v, &mut rhs, &mut scratch);
        let rhs_norm = weighted_norm(&rhs, &w);
        traj.rhs_norm.push(rhs_norm);
        map.dissipative_into(v, &mut rhs);
        let rate = match (opts.reference, &n_ref) {
            (Some(r), Some(nr)) => {
                let dv: Vec<f64> = v.iter().zip(r).map(|(x, y)| x - y).collect();
                let dn: Vec<f64> = rhs.iter().zip(nr).map(|(x, y)| x - y).collect();
                traj.shifted_norm.as_mut().expect("reference set").push(weighted_norm(&dv, &w));
                -weighted_dot(&dn, &dv, &w)
            }
            _ => -weighted_dot(&rhs, v, &w),
        };
        traj.dissipation_rate.push(rate);
        if let Some(inp) = &opts.input {
            traj.inputs.as_mut().expect("input set").push((inp.signal)(t));
        }
        if let Some(o) = opts.observer {
            if let Some(pn) = o.plant_norm(v) {
                traj.plant_norm.get_or_insert_with(Vec::new).push(pn);
            }
            if let Some(u) = o.feedback(v) {
                traj.feedback.get_or_insert_with(Vec::new).push(u);
            }
            if let Some(fm) = o.feasibility_margin(v) {
                traj.feasibility_margin.get_or_insert_with(Vec::new).push(fm);
            }
        }
        for ((_, f), (_, ch)) in opts.channels.iter().zip(traj.extra.iter_mut()) {
            ch.push(f(v));
        }
        stepper.step(&sys, t, h, v, &mut a)?;
        stepper.step(&sys, t, 0.5 * h, v, &mut b)?;
        stepper.step(&sys, t + 0.5 * h, 0.5 * h, &b.clone(), &mut c)?;
        let diff: Vec<f64> = a.iter().zip(&c).map(|(x, y)| x - y).collect();
        traj.local_error.push(richardson * weighted_norm(&diff, &w));
        Ok(rhs_norm)
    };

    let mut v = v0.to_vec();
    let mut next = Vec::with_capacity(dim);
    let mut rhs_norm = record(&mut traj, &mut stepper, 0.0, &v)?;
    let mut k = 0;
    while k < steps {
        if let Some(tol) = cfg.stop_tol {
            if rhs_norm <= tol {
                traj.stopped_early = true;
                break;
            }
        }
        let t = k as f64 * h;
        stepper.step(&sys, t, h, &v, &mut next)?;
        k += 1;
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence { step: k, time: k as f64 * h });
        }
        std::mem::swap(&mut v, &mut next);
        if k % cfg.record_every == 0 || k == steps {
            rhs_norm = record(&mut traj, &mut stepper, k as f64 * h, &v)?;
        }
    }
    traj.steps = k;
    traj.final_state = v;
    Ok(traj)
}

/// Least-squares slope of `log(values)` against `times` over `[t_a, t_b]`.
pub fn fit_decay_rate(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<f64> {
    if times.len() != values.len() {
        return shape_err("times and values differ in length");
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Domain(format!("fewer than two samples in [{}, {}]", window.0, window.1)));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Domain(format!("channel value {v} at t = {t} is not positive")));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, v)| (t - tm) * (v.ln() - lm)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - tm) * (t - tm)).sum();
    Ok(sxy / sxx)
}

pub fn estimate_decay_rate(traj: &Trajectory, channel: &str, window: (f64, f64)) -> Result<f64> {
    let values = traj
        .channel(channel)
        .ok_or_else(|| Error::Usage(format!("trajectory has no channel `{channel}`")))?;
    fit_decay_rate(&traj.times, values, window)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepBound {
    /// Suggested RK4 step, `2.5 / jacobian_norm`.
    pub cap: f64,
    pub jacobian_norm: f64,
    /// Set when the Jacobian estimate vanished and `cap` is a placeholder.
    pub degenerate: bool,
}

/// Power iteration on finite-difference Jacobian-vector products of `M`
/// at `v_probe`.
pub fn spectral_step_bound(map: &dyn MonotoneMap, v_probe: &[f64]) -> StepBound {
    const ITERATIONS: usize = 20;
    const STEP: f64 = 1e-6;
    const FLOOR: f64 = 2.5e-6;
    let w = map.weights();
    let dim = map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut base = vec![0.0; dim];
    map.apply_into(v_probe, &mut base);
    let scale = STEP * weighted_norm(v_probe, w).max(1.0);
    let mut estimate: f64 = 0.0;
    let mut shifted = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    for _ in 0..ITERATIONS {
        let nx = weighted_norm(&x, w);
        if !(nx > 0.0 && nx.is_finite()) {
            break;
        }
        x.iter_mut().for_each(|xi| *xi /= nx);
        for i in 0..dim {
            shifted[i] = v_probe[i] + scale * x[i];
        }
        map.apply_into(&shifted, &mut out);
        for i in 0..dim {
            x[i] = (out[i] - base[i]) / scale;
        }
        let ratio = weighted_norm(&x, w);
        if !ratio.is_finite() {
            break;
        }
        estimate = estimate.max(ratio);
    }
    if estimate <= FLOOR {
        StepBound { cap: 1e6, jacobian_norm: estimate, degenerate: true }
    } else {
        StepBound { cap: 2.5 / estimate, jacobian_norm: estimate, degenerate: false }
    }
}

/// `min(0.1·dt_grid, spectral_step_bound)`.
pub fn default_step(map: &dyn MonotoneMap, v0: &[f64], dt_grid: f64) -> f64 {
    (0.1 * dt_grid).min(spectral_step_bound(map, v0).cap)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormReport {
    pub channel: String,
    pub samples: usize,
    /// Largest increase between consecutive records.
    pub max_increase: f64,
    /// Largest increase minus its tolerance.
    pub max_excess: f64,
    pub passed: bool,
}

/// Checks that a norm channel never grows between records by more than
/// `10 × record_every × local error`.
pub fn check_norm_nonincreasing(traj: &Trajectory, channel: &str) -> Result<NormReport> {
    let values = traj
        .channel(channel)
        .ok_or_else(|| Error::Usage(format!("trajectory has no channel `{channel}`")))?;
    let mut max_increase = f64::NEG_INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    for i in 1..values.len() {
        let inc = values[i] - values[i - 1];
        let tol = 10.0 * traj.record_every as f64 * traj.local_error[i - 1].max(traj.local_error[i])
            + 4.0 * f64::EPSILON * values[i - 1].abs();
        max_increase = max_increase.max(inc);
        max_excess = max_excess.max(inc - tol);
    }
    Ok(NormReport {
        channel: channel.to_string(),
        samples: values.len(),
        max_increase,
        max_excess,
        passed: values.len() < 2 || max_excess <= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monotone::{AffineMap, FnMap};

    fn scalar_decay() -> AffineMap {
        AffineMap::new("v", LinearOp::identity(vec![1.0]).unwrap(), vec![0.0]).unwrap()
    }

    #[test]
    fn zero_rhs_is_constant() {
        let zero = FnMap::new("zero", vec![1.0; 3], |_: &[f64], o: &mut [f64]| o.fill(0.0));
        let cfg = IntegratorConfig::rk4(0.1, 1.0);
        let t = integrate(&zero, &[1.0, 2.0, 3.0], &cfg, RunOptions::new()).unwrap();
        assert!(t.states.iter().all(|s| s == &[1.0, 2.0, 3.0]));
        assert_eq!(t.times.len(), 11);
    }

    #[test]
    fn exponential_decay() {
        let cfg = IntegratorConfig::rk4(1e-3, 1.0).record_every(100);
        let t = integrate(&scalar_decay(), &[1.0], &cfg, RunOptions::new()).unwrap();
        assert!((t.final_state[0] - (-1.0f64).exp()).abs() < 1e-8);
        assert_eq!(*t.times.last().unwrap(), 1.0);
    }

    #[test]
    fn rk4_order() {
        let err = |h: f64| {
            let cfg = IntegratorConfig::rk4(h, 1.0).record_every(1000);
            let t = integrate(&scalar_decay(), &[1.0], &cfg, RunOptions::new()).unwrap();
            (t.final_state[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn implicit_euler_step() {
        let cfg = IntegratorConfig::implicit_euler(1.0, 1.0);
        let t = integrate(&scalar_decay(), &[4.0], &cfg, RunOptions::new()).unwrap();
        assert_eq!(t.final_state, vec![2.0]);
        let cubic = FnMap::new("cubic", vec![1.0], |v: &[f64], o: &mut [f64]| o[0] = v[0].powi(3));
        assert!(matches!(
            integrate(&cubic, &[1.0], &cfg, RunOptions::new()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let blow = FnMap::new("blow", vec![1.0], |v: &[f64], o: &mut [f64]| o[0] = -v[0] * v[0] * v[0].abs());
        let cfg = IntegratorConfig::rk4(0.5, 100.0).allow_unstable(true);
        match integrate(&blow, &[10.0], &cfg, RunOptions::new()) {
            Err(Error::Divergence { step, .. }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn stability_guard() {
        let stiff = AffineMap::new("stiff", LinearOp::identity(vec![1.0]).unwrap().scaled(1000.0), vec![0.0]).unwrap();
        let cfg = IntegratorConfig::rk4(0.01, 1.0);
        assert!(matches!(integrate(&stiff, &[1.0], &cfg, RunOptions::new()), Err(Error::Invalid(_))));
    }

    #[test]
    fn decay_rate_fit() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let vals: Vec<f64> = times.iter().map(|t| (-2.0 * t).exp()).collect();
        assert!((fit_decay_rate(&times, &vals, (0.0, 5.0)).unwrap() + 2.0).abs() < 1e-3);
        let flat = vec![3.0; 100];
        assert!(fit_decay_rate(&times, &flat, (0.0, 5.0)).unwrap().abs() < 1e-14);
        let mut bad = vals.clone();
        bad[10] = 0.0;
        assert!(matches!(fit_decay_rate(&times, &bad, (0.0, 5.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn step_bounds() {
        let neg = AffineMap::new("I", LinearOp::identity(vec![1.0; 2]).unwrap(), vec![0.0; 2]).unwrap();
        let b = spectral_step_bound(&neg, &[0.3, -0.2]);
        assert!((b.cap - 2.5).abs() < 1e-3, "{b:?}");
        let diag = LinearOp::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 5.0), (2, 2, 40.0)], vec![1.0; 3], vec![1.0; 3]).unwrap();
        let stiff = AffineMap::new("diag", diag, vec![0.0; 3]).unwrap();
        let b = spectral_step_bound(&stiff, &[0.0; 3]);
        assert!((b.cap / (2.5 / 40.0) - 1.0).abs() < 0.2, "{b:?}");
        let zero = FnMap::new("zero", vec![1.0; 2], |_: &[f64], o: &mut [f64]| o.fill(0.0));
        let b = spectral_step_bound(&zero, &[1.0, 1.0]);
        assert!(b.degenerate && b.cap >= 1e6);
    }

    #[test]
    fn deterministic_csv() {
        let cfg = IntegratorConfig::rk4(0.01, 1.0).record_every(10);
        let run = || {
            let t = integrate(&scalar_decay(), &[1.0], &cfg, RunOptions::new().reference(&[0.0])).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf).unwrap();
            buf
        };
        let a = run();
        assert_eq!(a, run());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("t,state_norm,shifted_norm,plant_norm,dissipation_rate,feasibility_margin\n"));
        assert_eq!(text.lines().count(), 12);
    }
}
