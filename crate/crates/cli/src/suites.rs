//! Property suites behind `mono-ph verify`.

use mono_ph::flows::{FlowMap, PlantDynamics, PlantSpec, Variant};
use mono_ph::integrator::{check_norm_nonincreasing, integrate, IntegratorConfig, RunOptions};
use mono_ph::linear_op::{weighted_dot, weighted_norm};
use mono_ph::monotone::{
    check_dissipation_identity, check_firmly_nonexpansive, check_monotone, check_relative_monotone,
    check_shifted_passivity, moreau_complement, project_box, sample_ball, BoxSet, DerivativeReport, FnMap,
    PropertyReport, Resolvent,
};
use mono_ph::ocp::{kkt_residual, OracleOptions};
use mono_ph::{build_skew_coupling, solve_kkt, AffineMap, GridFunction, Layout, LinearOp, MonotoneMap, OcpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::runner::{CliError, RunConfig};

pub const NAMES: &[&str] = &["structural", "monotonicity", "resolvent", "passivity", "oracle", "integrator"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub suite: String,
    pub check: String,
    pub samples: usize,
    /// Worst observed quantity; see `relation`.
    pub value: f64,
    pub bound: f64,
    /// `"<="` when `value` must not exceed `bound`, `">=-"` when the slack
    /// `value` must not drop below `-bound`.
    pub relation: &'static str,
    pub passed: bool,
}

impl CheckRow {
    fn upper(suite: &str, check: impl Into<String>, samples: usize, value: f64, bound: f64) -> Self {
        Self {
            suite: suite.into(),
            check: check.into(),
            samples,
            value,
            bound,
            relation: "<=",
            passed: value <= bound,
        }
    }

    fn property(suite: &str, r: &PropertyReport) -> Self {
        Self {
            suite: suite.into(),
            check: format!("{}: {}", r.label, r.property),
            samples: r.samples,
            value: r.worst_slack,
            bound: r.tolerance,
            relation: ">=-",
            passed: r.passed,
        }
    }

    fn derivative(suite: &str, r: &DerivativeReport) -> Self {
        Self {
            suite: suite.into(),
            check: format!("{} (excess over 10x local error)", r.label),
            samples: r.samples,
            value: r.max_excess,
            bound: 0.0,
            relation: "<=",
            passed: r.passed,
        }
    }

    pub fn to_text(&self) -> String {
        let rel = match self.relation {
            ">=-" => ">= -",
            r => r,
        };
        format!(
            "{:<4} {:<12} {:<64} n={:<6} {:+.3e} {} {:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite,
            self.check,
            self.samples,
            self.value,
            rel,
            self.bound
        )
    }
}

/// Seed for suite `index`, derived from the master seed.
pub fn suite_seed(master: u64, index: usize) -> u64 {
    let mut z = master ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Ctx<'a> {
    free: OcpSpec,
    boxed: OcpSpec,
    plant: Option<PlantSpec>,
    samples: usize,
    broken_adjoint: bool,
    cfg: &'a RunConfig,
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self, CliError> {
        let m = cfg.spec.control_dim();
        let bx = match cfg.spec.bounds() {
            Some(b) => b.clone(),
            None => BoxSet::symmetric(vec![1.0; m])?,
        };
        let plant = match &cfg.plant {
            Some(p) => Some(p.clone()),
            None if m == 1 => Some(PlantSpec::conserving_2d()),
            None => None,
        };
        Ok(Self {
            free: cfg.spec.with_bounds(None)?,
            boxed: cfg.spec.with_bounds(Some(bx))?,
            plant,
            samples: cfg.samples,
            broken_adjoint: cfg.broken_adjoint,
            cfg,
        })
    }

    fn maps(&self) -> Result<Vec<FlowMap>, CliError> {
        let mut maps = vec![FlowMap::open_unconstrained(&self.free)?, FlowMap::open_constrained(&self.boxed)?];
        if let Some(p) = &self.plant {
            maps.push(FlowMap::closed_unconstrained(&self.free, p)?);
            if self.boxed.bounds().is_some_and(|b| b.is_symmetric()) {
                maps.push(FlowMap::closed_constrained(&self.boxed, p)?);
            }
        }
        Ok(maps)
    }
}

/// Runs the named suites in parallel and returns their rows in suite order.
pub fn run(cfg: &RunConfig, names: &[&str]) -> Result<Vec<CheckRow>, CliError> {
    let ctx = Ctx::new(cfg)?;
    let results: Vec<Result<Vec<CheckRow>, CliError>> = std::thread::scope(|s| {
        let handles: Vec<_> = names
            .iter()
            .map(|name| {
                let idx = NAMES.iter().position(|n| n == name).expect("validated suite name");
                let seed = suite_seed(cfg.seed, idx);
                let ctx = &ctx;
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    match *name {
                        "structural" => structural(ctx, &mut rng),
                        "monotonicity" => monotonicity(ctx, &mut rng),
                        "resolvent" => resolvent(ctx, &mut rng),
                        "passivity" => passivity(ctx, &mut rng),
                        "oracle" => oracle(ctx, &mut rng),
                        "integrator" => integrator(ctx, &mut rng),
                        _ => unreachable!(),
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Other("suite thread panicked".into()))))
            .collect()
    });
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    Ok(rows)
}

fn uniform(rng: &mut ChaCha8Rng, len: usize, radius: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-radius..radius)).collect()
}

fn structural(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRow>, CliError> {
    const S: &str = "structural";
    let mut rows = Vec::new();
    let ops = ctx.free.ops();
    let c = &ops.c;
    let c_star = if ctx.broken_adjoint { c.unweighted_transpose() } else { c.adjoint() };
    let mut worst = 0.0f64;
    for _ in 0..ctx.samples {
        let z = uniform(rng, c.cols(), 1.0);
        let l = uniform(rng, c.rows(), 1.0);
        let cz = c.apply(&z)?;
        let csl = c_star.apply(&l)?;
        let lhs = weighted_dot(&cz, &l, c.out_weights());
        let rhs = weighted_dot(&z, &csl, c.in_weights());
        let scale = weighted_norm(&cz, c.out_weights()) * weighted_norm(&l, c.out_weights());
        worst = worst.max((lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE));
    }
    rows.push(CheckRow::upper(S, "discrete adjointness <Cz,l> = <z,C*l> (relative)", ctx.samples, worst, 1e-12));

    let mut skews: Vec<(String, LinearOp)> =
        ctx.maps()?.iter().map(|m| (m.variant().key().to_string(), m.skew().clone())).collect();
    let n1 = 3;
    let n2 = 4;
    let b1 = LinearOp::from_dense_weighted(&random_dense(rng, n1, 2), vec![0.5; 2], vec![0.25; n1])?;
    let b2 = LinearOp::from_dense_weighted(&random_dense(rng, n2, 3), vec![2.0; 3], vec![1.5; n2])?;
    let e = LinearOp::from_dense_weighted(&random_dense(rng, 2, 3), vec![2.0; 3], vec![0.5; 2])?;
    skews.push(("random coupling".into(), build_skew_coupling(&b1, &b2, &e)?));
    for (label, k) in &skews {
        let w = k.in_weights();
        let mut worst = 0.0f64;
        for _ in 0..ctx.samples {
            let v = sample_ball(rng, w, 10.0);
            let kv = k.apply(&v)?;
            let scale = weighted_norm(&kv, w) * weighted_norm(&v, w);
            if scale > 0.0 {
                worst = worst.max(weighted_dot(&kv, &v, w).abs() / scale);
            }
        }
        rows.push(CheckRow::upper(S, format!("{label}: skew part power-neutral (relative)"), ctx.samples, worst, 1e-12));
    }

    let bx = ctx.boxed.bounds().expect("boxed spec").clone();
    let m = bx.dim();
    let span: f64 = bx.upper().iter().zip(bx.lower()).map(|(u, l)| u - l).fold(0.0, f64::max);
    let w = vec![1.0; m];
    let sampler = |r: &mut ChaCha8Rng| uniform(r, m, 3.0 * span);
    let fne = check_firmly_nonexpansive(
        "box projection",
        &|v| project_box(v, &bx).expect("dimension"),
        &w,
        rng,
        ctx.samples,
        &sampler,
        1e-12,
    );
    rows.push(CheckRow::property(S, &fne));
    let mut worst = 0.0f64;
    for _ in 0..ctx.samples {
        let v = sampler(rng);
        let p = project_box(&v, &bx)?;
        let q = moreau_complement(&v, &bx)?;
        let sum_err = v.iter().zip(p.iter().zip(&q)).map(|(a, (b, c))| (a - (b + c)).abs()).fold(0.0, f64::max);
        let vn = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        worst = worst.max(sum_err / vn.max(f64::MIN_POSITIVE));
    }
    rows.push(CheckRow::upper(S, "Moreau decomposition v = P(v) + (v - P(v)) (relative)", ctx.samples, worst, f64::EPSILON));

    if let Some(p) = &ctx.plant {
        if matches!(p.dynamics(), PlantDynamics::Conserving2d) {
            let mut worst = 0.0f64;
            for _ in 0..ctx.samples {
                let z = sample_ball(rng, &[1.0, 1.0], 10.0);
                let mz = p.mp(&z)?;
                let scale = weighted_norm(&mz, &[1.0, 1.0]) * weighted_norm(&z, &[1.0, 1.0]);
                if scale > 0.0 {
                    worst = worst.max(weighted_dot(&mz, &z, &[1.0, 1.0]).abs() / scale);
                }
            }
            rows.push(CheckRow::upper(S, "plant energy neutrality <M_p(z),z> (relative)", ctx.samples, worst, 1e-14));
        }
    }
    Ok(rows)
}

fn random_dense(rng: &mut ChaCha8Rng, r: usize, c: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn monotonicity(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRow>, CliError> {
    const S: &str = "monotonicity";
    let mut rows = Vec::new();
    for map in ctx.maps()? {
        let r = if map.variant() == Variant::ClosedC {
            check_relative_monotone(&map, rng, ctx.samples, 10.0, 1e-10)
        } else {
            check_monotone(&map, rng, ctx.samples, 10.0, 1e-10)
        };
        rows.push(CheckRow::property(S, &r));
    }
    if let Some(p) = &ctx.plant {
        let pm = p.clone();
        let f = FnMap::new("plant M_p", vec![1.0; p.dim()], move |z: &[f64], o: &mut [f64]| pm.apply_mp(z, o));
        rows.push(CheckRow::property(S, &check_relative_monotone(&f, rng, ctx.samples, 10.0, 1e-10)));
    }
    Ok(rows)
}

fn resolvent(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRow>, CliError> {
    const S: &str = "resolvent";
    let map = FlowMap::open_unconstrained(&ctx.free)?;
    let w = map.weights().to_vec();
    let pairs = ctx.samples.min(300);
    let mut rows = Vec::new();
    for h in [0.01, 0.1, 1.0] {
        let res = Resolvent::new(&map, h)?;
        let r = check_firmly_nonexpansive(
            &format!("open_u resolvent, h = {h}"),
            &|v| res.apply(v).expect("dimension"),
            &w,
            rng,
            pairs,
            &|r: &mut ChaCha8Rng| sample_ball(r, &w, 10.0),
            1e-10,
        );
        rows.push(CheckRow::property(S, &r));
    }
    Ok(rows)
}

fn near(rng: &mut ChaCha8Rng, center: &[f64], w: &[f64], radius: f64) -> Vec<f64> {
    let d = sample_ball(rng, w, radius);
    center.iter().zip(&d).map(|(a, b)| a + b).collect()
}

fn passivity(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRow>, CliError> {
    const S: &str = "passivity";
    let mut rows = Vec::new();
    let n = ctx.free.state_dim();
    let grid = ctx.free.grid().clone();
    let p_free = solve_kkt(&ctx.free, &OracleOptions::default())?;
    let star = p_free.open_u_state();

    let unforced = ctx.free.with_input(GridFunction::zeros(Layout::Intervals, n, &grid), vec![0.0; n])?;
    let map = FlowMap::open_unconstrained(&unforced)?;
    let b_in = map.input_operator()?;
    let u_bar = ctx.free.input_vector();
    let modes: Vec<(f64, f64, f64)> = (0..u_bar.len())
        .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..3.0), rng.gen_range(0.0..std::f64::consts::TAU)))
        .collect();
    let signal = |t: f64| u_bar.iter().zip(&modes).map(|(u, (a, f, p))| u + a * (f * t + p).sin()).collect::<Vec<_>>();
    let v0 = near(rng, &star, map.weights(), 2.0);
    let cfg = IntegratorConfig::rk4(1e-4, 1.0).record_every(5);
    let traj = integrate(&map, &v0, &cfg, RunOptions::new().input(&b_in, &signal))?;
    rows.push(CheckRow::derivative(S, &check_shifted_passivity(&map, &traj, (&star, &u_bar), &b_in)?));

    let cfg = IntegratorConfig::rk4(5e-4, 1.0).record_every(1);
    let open_u = FlowMap::open_unconstrained(&ctx.free)?;
    let v0 = near(rng, &star, open_u.weights(), 3.0);
    let traj = integrate(&open_u, &v0, &cfg, RunOptions::new().reference(&star).keep_states(false))?;
    rows.push(CheckRow::derivative(S, &check_dissipation_identity("open_u", &traj)?));

    let p_box = solve_kkt(&ctx.boxed, &OracleOptions::default())?;
    let star_c = p_box.open_c_state();
    let open_c = FlowMap::open_constrained(&ctx.boxed)?;
    let v0 = near(rng, &star_c, open_c.weights(), 3.0);
    let traj = integrate(&open_c, &v0, &cfg, RunOptions::new().reference(&star_c).keep_states(false))?;
    rows.push(CheckRow::derivative(S, &check_dissipation_identity("open_c", &traj)?));

    for map in ctx.maps()?.into_iter().filter(|m| m.variant().is_closed()) {
        let xp0 = ctx
            .cfg
            .plant_x0
            .clone()
            .filter(|x| x.iter().any(|v| *v != 0.0))
            .unwrap_or_else(|| sample_ball(rng, &vec![1.0; map.layout().n_p], 3.0));
        let mut v0 = vec![0.0; map.dim()];
        v0[map.layout().plant()].copy_from_slice(&xp0);
        let traj = integrate(&map, &v0, &cfg, RunOptions::new().observer(&map).keep_states(false))?;
        rows.push(CheckRow::derivative(S, &check_dissipation_identity(map.variant().key(), &traj)?));
    }
    Ok(rows)
}

fn oracle(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRow>, CliError> {
    const S: &str = "oracle";
    let mut rows = Vec::new();
    let opts = OracleOptions::default();
    let p = solve_kkt(&ctx.free, &opts)?;
    rows.push(CheckRow::upper(S, "unconstrained KKT residual", 1, kkt_residual(&ctx.free, &p), 1e-8));
    let map = FlowMap::open_unconstrained(&ctx.free)?;
    let star = p.open_u_state();
    let rhs = map.eval(&star)?;
    rows.push(CheckRow::upper(S, "open_u right-hand side at the KKT point", 1, weighted_norm(&rhs, map.weights()), 1e-8));
    let mu_max = p.mu.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    rows.push(CheckRow::upper(S, "unconstrained multiplier mu vanishes", 1, mu_max, 0.0));

    let q = solve_kkt(&ctx.boxed, &opts)?;
    rows.push(CheckRow::upper(S, "constrained KKT residual", 1, kkt_residual(&ctx.boxed, &q), 1e-8));
    let map_c = FlowMap::open_constrained(&ctx.boxed)?;
    let rhs = map_c.eval(&q.open_c_state())?;
    rows.push(CheckRow::upper(S, "open_c right-hand side at the KKT point", 1, weighted_norm(&rhs, map_c.weights()), 1e-7));

    let dt = ctx.boxed.grid().dt();
    let uw = vec![dt; q.u_star.as_slice().len()];
    let u0: Vec<f64> = (0..uw.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let q2 = solve_kkt(&ctx.boxed, &OracleOptions { initial_u: Some(u0), ..opts.clone() })?;
    let d: Vec<f64> = q.u_star.as_slice().iter().zip(q2.u_star.as_slice()).map(|(a, b)| a - b).collect();
    rows.push(CheckRow::upper(S, "constrained optimum independent of the start", 1, weighted_norm(&d, &uw), 1e-7));

    let huge = 1e6 + p.u_star.as_slice().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let wide = ctx.free.with_bounds(Some(BoxSet::symmetric(vec![huge; ctx.free.control_dim()])?))?;
    let r = solve_kkt(&wide, &opts)?;
    let d: Vec<f64> = p.u_star.as_slice().iter().zip(r.u_star.as_slice()).map(|(a, b)| a - b).collect();
    rows.push(CheckRow::upper(S, "inactive box reproduces the unconstrained optimum", 1, weighted_norm(&d, &uw), 1e-8));
    Ok(rows)
}

fn integrator(ctx: &Ctx, rng: &mut ChaCha8Rng) -> Result<Vec<CheckRow>, CliError> {
    const S: &str = "integrator";
    let mut rows = Vec::new();
    let decay = AffineMap::new("scalar decay", LinearOp::identity(vec![1.0])?, vec![0.0])?;
    let end = |h: f64| -> Result<f64, CliError> {
        let t = integrate(&decay, &[1.0], &IntegratorConfig::rk4(h, 1.0).record_every(usize::MAX / 2), RunOptions::new())?;
        Ok(t.final_state[0])
    };
    let exact = (-1.0f64).exp();
    let (e1, e2) = ((end(0.1)? - exact).abs(), (end(0.05)? - exact).abs());
    let factor = e1 / e2;
    rows.push(CheckRow {
        suite: S.into(),
        check: "RK4 error ratio when halving the step on v' = -v".into(),
        samples: 2,
        value: factor,
        bound: 16.0,
        relation: "in [12,20]",
        passed: (12.0..=20.0).contains(&factor),
    });

    let p = solve_kkt(&ctx.free, &OracleOptions::default())?;
    let star = p.open_u_state();
    let map = FlowMap::open_unconstrained(&ctx.free)?;
    for h in [0.01, 0.1, 1.0] {
        let v0 = near(rng, &star, map.weights(), 5.0);
        let cfg = IntegratorConfig::implicit_euler(h, 40.0 * h).record_every(1);
        let traj = integrate(&map, &v0, &cfg, RunOptions::new().reference(&star).keep_states(false))?;
        let d = traj.shifted_norm.as_deref().expect("reference set");
        let worst = d.windows(2).map(|w| (w[1] - w[0]) / w[0].max(f64::MIN_POSITIVE)).fold(f64::NEG_INFINITY, f64::max);
        rows.push(CheckRow::upper(
            S,
            format!("implicit Euler shifted norm nonincreasing per step, h = {h} (relative growth)"),
            d.len(),
            worst,
            1e-12,
        ));
    }

    let v0 = near(rng, &star, map.weights(), 2.0);
    let cfg = IntegratorConfig::rk4(0.002, 2.0).record_every(1);
    let traj = integrate(&map, &v0, &cfg, RunOptions::new().reference(&star).keep_states(false))?;
    let nr = check_norm_nonincreasing(&traj, "shifted_norm")?;
    rows.push(CheckRow::upper(S, "RK4 shifted norm nonincreasing (excess over 10x local error)", nr.samples, nr.max_excess, 0.0));
    let again = integrate(&map, &v0, &cfg, RunOptions::new().reference(&star).keep_states(false))?;
    let same = traj.final_state == again.final_state && traj.shifted_norm == again.shifted_norm;
    rows.push(CheckRow::upper(S, "repeat run is bit-identical", 2, if same { 0.0 } else { 1.0 }, 0.0));
    Ok(rows)
}
