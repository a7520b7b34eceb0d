use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mono_ph::flows::FlowMap;
use mono_ph::integrator::{check_norm_nonincreasing, estimate_decay_rate, integrate, IntegratorConfig, RunOptions};
use mono_ph::linear_op::weighted_norm;
use mono_ph::monotone::sample_ball;
use mono_ph::{solve_kkt, MonotoneMap, OracleOptions};
use mono_ph_cli::runner::simulate;
use mono_ph_cli::suites::{self, CheckRow};
use mono_ph_cli::RunConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn config(name: &str) -> RunConfig {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    RunConfig::load(&path, &[]).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn suite(name: &str) -> Outcome {
    let cfg = config("verify_default.conf");
    match suites::run(&cfg, &[name]) {
        Ok(rows) => {
            let failed: Vec<&CheckRow> = rows.iter().filter(|r| !r.passed).collect();
            let detail = if failed.is_empty() {
                format!("{} checks", rows.len())
            } else {
                failed.iter().map(|r| r.to_text()).collect::<Vec<_>>().join(" | ")
            };
            Outcome { passed: failed.is_empty(), detail }
        }
        Err(e) => Outcome { passed: false, detail: e.to_string() },
    }
}

fn structural() -> Outcome {
    suite("structural")
}

fn monotonicity() -> Outcome {
    suite("monotonicity")
}

fn open_loop_unconstrained() -> Outcome {
    let cfg = config("open_loop_unconstrained.conf");
    let spec = &cfg.spec;
    let p = solve_kkt(spec, &OracleOptions::default()).expect("oracle");
    let star = p.open_u_state();
    let map = FlowMap::open_unconstrained(spec).expect("map");
    let w = map.weights().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = sample_ball(&mut rng, &w, 5.0);
    let v0: Vec<f64> = star.iter().zip(&d).map(|(a, b)| a + b).collect();
    let primal = map.layout().primal();
    let (s2, w2) = (star.clone(), w.clone());
    let icfg = IntegratorConfig::rk4(cfg.dt_int.expect("dt in config"), cfg.t_final).record_every(cfg.record_every);
    let traj = integrate(
        &map,
        &v0,
        &icfg,
        RunOptions::new().reference(&star).keep_states(false).channel("primal_error", move |v: &[f64]| {
            let e: Vec<f64> = v[primal.clone()].iter().zip(&s2[primal.clone()]).map(|(a, b)| a - b).collect();
            weighted_norm(&e, &w2[primal.clone()])
        }),
    )
    .expect("integration");
    let start = weighted_norm(&d, &w);
    let dist = *traj.channel("primal_error").unwrap().last().unwrap();
    let norm = check_norm_nonincreasing(&traj, "shifted_norm").expect("channel");
    let rate = estimate_decay_rate(&traj, "primal_error", (10.0, 40.0)).expect("fit");
    let beta = spec.alpha().min(1.0);
    let ok_dist = dist <= 1e-4;
    let ok_rate = rate <= -beta + 0.1;
    Outcome {
        passed: start <= 5.0 && ok_dist && norm.passed && ok_rate,
        detail: format!(
            "|w0-w*| = {start:.3}; |(x,u)(T)-(x*,u*)| = {dist:.3e} ({}); shifted norm nonincreasing: {} (max excess {:.2e}); \
             decay rate {rate:.4} vs required <= {:.2} ({})",
            if ok_dist { "ok" } else { "too large" },
            norm.passed,
            norm.max_excess,
            -beta + 0.1,
            if ok_rate { "ok" } else { "not attained" }
        ),
    }
}

fn open_loop_constrained() -> Outcome {
    let cfg = config("open_loop_constrained.conf");
    match simulate(&cfg) {
        Ok(out) => {
            let r = out.report;
            let dx = r.terminal_state_distance.unwrap_or(f64::INFINITY);
            let du = r.terminal_control_distance.unwrap_or(f64::INFINITY);
            let kkt = r.terminal_kkt_residual.unwrap_or(f64::INFINITY);
            Outcome {
                passed: dx <= 1e-4 && du <= 1e-4 && kkt <= 1e-6,
                detail: format!("|x(T)-x*| = {dx:.3e}, |P(B'l/a)-u*| = {du:.3e}, KKT residual {kkt:.3e}"),
            }
        }
        Err(e) => Outcome { passed: false, detail: e.to_string() },
    }
}

fn closed_loop(name: &str, plant_bound: f64, need_box: bool) -> Outcome {
    let cfg = config(name);
    match simulate(&cfg) {
        Ok(out) => {
            let r = out.report;
            let plant = r.terminal_plant_norm.unwrap_or(f64::INFINITY);
            let in_box = r.feedback_in_box.unwrap_or(!need_box);
            let (lo, hi) = r.feedback_range.unwrap_or((f64::NAN, f64::NAN));
            Outcome {
                passed: plant < plant_bound && r.norm_check.passed && in_box,
                detail: format!(
                    "T = {}; plant norm {plant:.3e} (< {plant_bound:.0e}); state norm nonincreasing: {} (max increase {:.2e}, \
                     max excess {:.2e}); u_p in [{lo:.4}, {hi:.4}]{}",
                    r.t_end,
                    r.norm_check.passed,
                    r.norm_check.max_increase,
                    r.norm_check.max_excess,
                    if need_box { format!(", inside box at every sample: {in_box}") } else { String::new() }
                ),
            }
        }
        Err(e) => Outcome { passed: false, detail: e.to_string() },
    }
}

fn main() {
    let criteria: Vec<(&str, u64, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 structural suite", 10, Box::new(structural)),
        ("2 monotonicity suite", 30, Box::new(monotonicity)),
        ("3 open loop, unconstrained oracle equivalence", 60, Box::new(open_loop_unconstrained)),
        ("4 open loop, constrained oracle equivalence", 120, Box::new(open_loop_constrained)),
        ("5 closed loop, unconstrained", 120, Box::new(|| closed_loop("example_sec6_unconstrained.conf", 1e-3, false))),
        ("6 closed loop, box +-1", 120, Box::new(|| closed_loop("example_sec6_constrained.conf", 1e-2, true))),
        ("7 passivity and dissipation suite", 60, Box::new(|| suite("passivity"))),
        ("8 integrator suite", 10, Box::new(|| suite("integrator"))),
    ];
    let mut failures = 0;
    for (name, limit, run) in &criteria {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let passed = out.passed && in_time;
        if !passed {
            failures += 1;
        }
        println!(
            "{} criterion {name} [{:.2} s of {limit} s]: {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
