use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mono_ph::flows::{FlowMap, FlowState, PlantSpec, Variant};
use mono_ph::integrator::{check_norm_nonincreasing, default_step, integrate, IntegratorConfig, Method, NormReport, RunOptions};
use mono_ph::linear_op::weighted_norm;
use mono_ph::monotone::{sample_ball, BoxSet};
use mono_ph::ocp::{kkt_residual, reduced_control, CostSpec, KktPoint, OcpSpec, OracleOptions, OracleSummary, StateCost};
use mono_ph::{solve_kkt, Error, GridFunction, Layout, MonotoneMap, SystemMatrices, TimeGrid, Trajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ConfigError, RawConfig};
use crate::suites::{self, CheckRow};

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Divergence(String),
    SuiteFailure(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::SuiteFailure(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Divergence(m) => write!(f, "integration diverged: {m}"),
            CliError::SuiteFailure(m) => write!(f, "verification failed: {m}"),
            CliError::Other(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            Error::Shape(_) | Error::Invalid(_) | Error::Usage(_) | Error::Unsupported(_) => {
                CliError::Validation(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

/// Attaches the config line of `key` to a core error.
fn at(raw: &RawConfig, key: &str, e: Error) -> CliError {
    match raw.line(key) {
        0 => CliError::Validation(format!("`{key}`: {e}")),
        line => CliError::Validation(format!("line {line}: `{key}`: {e}")),
    }
}

const KNOWN_KEYS: &[&str] = &[
    "problem.A",
    "problem.B",
    "problem.f",
    "problem.x0",
    "problem.t_f",
    "problem.N",
    "problem.alpha",
    "problem.cost",
    "problem.C_out",
    "problem.box",
    "problem.box.lower",
    "problem.box.upper",
    "flow",
    "plant",
    "plant.M",
    "plant.B_p",
    "plant.x0",
    "init",
    "init.radius",
    "integrator.method",
    "integrator.dt",
    "integrator.T",
    "integrator.record_every",
    "integrator.stop_tol",
    "integrator.allow_unstable",
    "output.dir",
    "seed",
    "verify.suites",
    "verify.samples",
    "debug.broken_adjoint",
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    Oracle,
    Random { radius: f64 },
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub spec: OcpSpec,
    pub flow: Variant,
    pub plant: Option<PlantSpec>,
    pub plant_x0: Option<Vec<f64>>,
    pub init: Init,
    pub method: Method,
    pub dt_int: Option<f64>,
    pub t_final: f64,
    pub record_every: usize,
    pub stop_tol: Option<f64>,
    pub allow_unstable: bool,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub suites: Vec<String>,
    pub samples: usize,
    pub broken_adjoint: bool,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let mut raw = RawConfig::load(path)?;
        for o in overrides {
            raw.apply_override(o)?;
        }
        Self::from_raw(raw)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        if let Some(k) = raw.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            let line = raw.line(k);
            return Err(ConfigError { line, message: format!("unknown key `{k}`") }.into());
        }
        let a = raw.matrix("problem.A")?.ok_or_else(|| CliError::Validation("missing required key `problem.A`".into()))?;
        let b = raw.matrix("problem.B")?.ok_or_else(|| CliError::Validation("missing required key `problem.B`".into()))?;
        let culprit = if a.is_square() { "problem.B" } else { "problem.A" };
        let sys = SystemMatrices::new(a, b).map_err(|e| at(&raw, culprit, e))?;
        let n = sys.state_dim();
        let m = sys.control_dim();

        let t_f = raw.f64_or("problem.t_f", 1.0)?;
        let intervals = raw.usize("problem.N")?.unwrap_or(200);
        let grid = TimeGrid::new(t_f, intervals).map_err(|e| at(&raw, "problem.N", e))?;

        let f_const = raw.vector("problem.f")?.unwrap_or_else(|| vec![0.0; n]);
        if f_const.len() != n {
            return Err(dim_err(&raw, "problem.f", n, f_const.len()));
        }
        let forcing = GridFunction::constant(Layout::Intervals, &grid, &f_const).map_err(|e| at(&raw, "problem.f", e))?;
        let x0 = raw.vector("problem.x0")?.unwrap_or_else(|| vec![0.0; n]);
        if x0.len() != n {
            return Err(dim_err(&raw, "problem.x0", n, x0.len()));
        }

        let alpha = raw.f64_or("problem.alpha", 1.5)?;
        let state_cost = match raw.str_or("problem.cost", "identity") {
            "identity" => StateCost::Identity,
            "output" => {
                let c = raw
                    .matrix("problem.C_out")?
                    .ok_or_else(|| CliError::Validation("`problem.cost = output` needs `problem.C_out`".into()))?;
                if c.ncols() != n {
                    return Err(ConfigError {
                        line: raw.line("problem.C_out"),
                        message: format!("`problem.C_out` has {} columns, expected {n}", c.ncols()),
                    }
                    .into());
                }
                StateCost::Output(c)
            }
            other => {
                return Err(ConfigError {
                    line: raw.line("problem.cost"),
                    message: format!("unknown cost `{other}` (expected identity or output)"),
                }
                .into())
            }
        };
        let cost = CostSpec::new(state_cost, alpha).map_err(|e| at(&raw, "problem.alpha", e))?;

        let bounds = match (raw.vector("problem.box")?, raw.vector("problem.box.lower")?, raw.vector("problem.box.upper")?) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                return Err(CliError::Validation("set either `problem.box` or `problem.box.lower/upper`, not both".into()))
            }
            (Some(b), None, None) => {
                let b = if b.len() == 1 { vec![b[0]; m] } else { b };
                if b.len() != m {
                    return Err(dim_err(&raw, "problem.box", m, b.len()));
                }
                Some(BoxSet::symmetric(b).map_err(|e| at(&raw, "problem.box", e))?)
            }
            (None, Some(lo), Some(hi)) => {
                if lo.len() != m {
                    return Err(dim_err(&raw, "problem.box.lower", m, lo.len()));
                }
                if hi.len() != m {
                    return Err(dim_err(&raw, "problem.box.upper", m, hi.len()));
                }
                Some(BoxSet::new(lo, hi).map_err(|e| at(&raw, "problem.box.lower", e))?)
            }
            (None, None, None) => None,
            _ => return Err(CliError::Validation("`problem.box.lower` and `problem.box.upper` go together".into())),
        };

        let flow = Variant::parse(raw.str_or("flow", "open_u")).map_err(|e| at(&raw, "flow", e))?;
        if !flow.has_control() && bounds.is_none() {
            return Err(CliError::Validation(format!("flow `{}` needs `problem.box`", flow.key())));
        }
        let spec = OcpSpec::new(sys, grid, forcing, x0, cost, bounds).map_err(|e| at(&raw, "problem.box", e))?;

        let (plant, plant_x0) = if flow.is_closed() || raw.contains("plant") {
            let plant = match raw.str_or("plant", "conserving2d") {
                "conserving2d" => match raw.matrix("plant.B_p")? {
                    Some(bp) => PlantSpec::conserving_2d_with_input(bp).map_err(|e| at(&raw, "plant.B_p", e))?,
                    None => PlantSpec::conserving_2d(),
                },
                "linear" => {
                    let mp = raw
                        .matrix("plant.M")?
                        .ok_or_else(|| CliError::Validation("`plant = linear` needs `plant.M`".into()))?;
                    let bp = raw
                        .matrix("plant.B_p")?
                        .ok_or_else(|| CliError::Validation("`plant = linear` needs `plant.B_p`".into()))?;
                    PlantSpec::linear(mp, bp).map_err(|e| at(&raw, "plant.M", e))?
                }
                "custom" => {
                    return Err(ConfigError {
                        line: raw.line("plant"),
                        message: "custom plants are only available through the library API".into(),
                    }
                    .into())
                }
                other => {
                    return Err(ConfigError { line: raw.line("plant"), message: format!("unknown plant `{other}`") }.into())
                }
            };
            if plant.input_dim() != m {
                let key = if raw.contains("plant.B_p") { "plant.B_p" } else { "plant" };
                return Err(ConfigError {
                    line: raw.line(key),
                    message: format!("plant has {} inputs but the optimizer has {m} controls", plant.input_dim()),
                }
                .into());
            }
            let xp0 = raw.vector("plant.x0")?.unwrap_or_else(|| vec![0.0; plant.dim()]);
            if xp0.len() != plant.dim() {
                return Err(dim_err(&raw, "plant.x0", plant.dim(), xp0.len()));
            }
            (Some(plant), Some(xp0))
        } else {
            (None, None)
        };
        if flow == Variant::ClosedC && !spec.bounds().is_some_and(|b| b.is_symmetric()) {
            return Err(CliError::Validation("closed_c needs a symmetric box (lower = -upper)".into()));
        }

        let init = match raw.str_or("init", "zero") {
            "zero" => Init::Zero,
            "oracle" => Init::Oracle,
            "random" => Init::Random { radius: raw.f64_or("init.radius", 1.0)? },
            other => {
                return Err(ConfigError { line: raw.line("init"), message: format!("unknown init `{other}`") }.into())
            }
        };
        if init != Init::Zero && flow.is_closed() {
            return Err(CliError::Validation("closed-loop runs start from `plant.x0` with `init = zero`".into()));
        }

        let method = Method::parse(raw.str_or("integrator.method", "rk4")).map_err(|e| at(&raw, "integrator.method", e))?;
        let dt_int = raw.f64("integrator.dt")?;
        let t_final = raw.f64_or("integrator.T", 10.0)?;
        let record_every = raw.usize("integrator.record_every")?.unwrap_or(10);
        let stop_tol = raw.f64("integrator.stop_tol")?;
        let allow_unstable = raw.bool_or("integrator.allow_unstable", false)?;
        let probe = IntegratorConfig {
            method,
            dt_int: dt_int.unwrap_or(1.0),
            t_final,
            record_every,
            stop_tol,
            allow_unstable,
        };
        probe.validate().map_err(|e| at(&raw, "integrator.T", e))?;

        let suites = raw.list("verify.suites").unwrap_or_else(|| vec!["all".into()]);
        for s in &suites {
            if s != "all" && !suites::NAMES.contains(&s.as_str()) {
                return Err(ConfigError {
                    line: raw.line("verify.suites"),
                    message: format!("unknown suite `{s}` (expected {} or all)", suites::NAMES.join(", ")),
                }
                .into());
            }
        }
        let samples = raw.usize("verify.samples")?.unwrap_or(1000);
        if samples == 0 {
            return Err(CliError::Validation("`verify.samples` must be positive".into()));
        }

        Ok(Self {
            output_dir: PathBuf::from(raw.str_or("output.dir", "out")),
            seed: raw.u64("seed")?.unwrap_or(0),
            broken_adjoint: raw.bool_or("debug.broken_adjoint", false)?,
            spec,
            flow,
            plant,
            plant_x0,
            init,
            method,
            dt_int,
            t_final,
            record_every,
            stop_tol,
            allow_unstable,
            suites,
            samples,
            raw,
        })
    }

    pub fn map(&self) -> Result<FlowMap, CliError> {
        Ok(FlowMap::new(self.flow, &self.spec, self.plant.as_ref())?)
    }

    pub fn selected_suites(&self) -> Vec<&'static str> {
        if self.suites.iter().any(|s| s == "all") {
            suites::NAMES.to_vec()
        } else {
            suites::NAMES.iter().copied().filter(|n| self.suites.iter().any(|s| s == n)).collect()
        }
    }
}

fn dim_err(raw: &RawConfig, key: &str, expected: usize, got: usize) -> CliError {
    ConfigError { line: raw.line(key), message: format!("`{key}` has {got} entries, expected {expected}") }.into()
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: BTreeMap<String, String>,
    pub flow: String,
    pub method: Method,
    pub dt_int: f64,
    pub steps: usize,
    pub t_end: f64,
    pub stopped_early: bool,
    pub terminal_rhs_norm: f64,
    pub terminal_state_norm: f64,
    pub terminal_plant_norm: Option<f64>,
    /// `‖(x, u)(T) − (x*, u*)‖`, with `u = P_F(Bᵀλ/α)` for the reduced flow.
    pub terminal_oracle_distance: Option<f64>,
    pub terminal_state_distance: Option<f64>,
    pub terminal_control_distance: Option<f64>,
    pub terminal_kkt_residual: Option<f64>,
    pub norm_check: NormReport,
    pub feedback_range: Option<(f64, f64)>,
    pub feedback_in_box: Option<bool>,
    pub max_local_error: f64,
}

/// Everything `cmd_run` produces, for callers that want more than files.
pub struct RunOutcome {
    pub report: RunReport,
    pub trajectory: Trajectory,
    pub map: FlowMap,
    pub oracle: Option<KktPoint>,
}

/// Reconstructs `(x, u, λ, λ₀, μ)` from an open-loop flow state.
pub fn kkt_point_of(spec: &OcpSpec, state: &FlowState) -> Result<KktPoint, CliError> {
    let l = *state.layout();
    let g = spec.grid();
    let u = if l.variant.has_control() { state.u().to_vec() } else { reduced_control(spec, state.lambda()) };
    let b = spec.sys().b();
    let mu: Vec<f64> = state
        .lambda()
        .chunks_exact(l.n)
        .zip(u.chunks_exact(l.m))
        .flat_map(|(lk, uk)| {
            (0..l.m).map(move |j| (0..l.n).map(|i| b[(i, j)] * lk[i]).sum::<f64>() - spec.alpha() * uk[j])
        })
        .collect();
    let mu = if spec.bounds().is_some() { mu } else { vec![0.0; mu.len()] };
    Ok(KktPoint {
        x_star: GridFunction::new(Layout::Nodes, l.n, g, state.x().to_vec())?,
        u_star: GridFunction::new(Layout::Intervals, l.m, g, u)?,
        lambda: GridFunction::new(Layout::Intervals, l.n, g, state.lambda().to_vec())?,
        lambda0: state.lambda0().to_vec(),
        mu: GridFunction::new(Layout::Intervals, l.m, g, mu)?,
        iterations: 0,
    })
}

fn initial_state(cfg: &RunConfig, map: &FlowMap, oracle: Option<&KktPoint>) -> Result<Vec<f64>, CliError> {
    let layout = *map.layout();
    if cfg.flow.is_closed() {
        return Ok(FlowState::with_plant(layout, cfg.plant_x0.as_deref().unwrap_or(&[]))?.into_vec());
    }
    let star = oracle.map(|p| if cfg.flow.has_control() { p.open_u_state() } else { p.open_c_state() });
    match cfg.init {
        Init::Zero => Ok(vec![0.0; layout.len()]),
        Init::Oracle => star.ok_or_else(|| CliError::Validation("`init = oracle` needs a quadratic cost".into())),
        Init::Random { radius } => {
            let center = star.ok_or_else(|| CliError::Validation("`init = random` needs a quadratic cost".into()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let d = sample_ball(&mut rng, map.weights(), radius);
            Ok(center.iter().zip(&d).map(|(a, b)| a + b).collect())
        }
    }
}

/// Integrates the configured flow; returns the report and the trajectory
/// without touching the file system.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let map = cfg.map()?;
    let oracle = if cfg.flow.is_closed() || !cfg.spec.cost().state.is_quadratic() {
        None
    } else {
        Some(solve_kkt(&cfg.spec, &OracleOptions::default())?)
    };
    let v0 = initial_state(cfg, &map, oracle.as_ref())?;
    let dt_int = match cfg.dt_int {
        Some(h) => h,
        None => default_step(&map, &v0, cfg.spec.grid().dt()),
    };
    let icfg = IntegratorConfig {
        method: cfg.method,
        dt_int,
        t_final: cfg.t_final,
        record_every: cfg.record_every,
        stop_tol: cfg.stop_tol,
        allow_unstable: cfg.allow_unstable,
    };
    let star = oracle.as_ref().map(|p| if cfg.flow.has_control() { p.open_u_state() } else { p.open_c_state() });
    let mut opts = RunOptions::new().observer(&map).keep_states(false);
    if let Some(s) = &star {
        opts = opts.reference(s);
    }
    let traj = integrate(&map, &v0, &icfg, opts)?;

    let layout = *map.layout();
    let w = map.weights();
    let fin = map.state(traj.final_state.clone())?;
    let mut report = RunReport {
        config: cfg.raw.echo(),
        flow: cfg.flow.key().to_string(),
        method: cfg.method,
        dt_int,
        steps: traj.steps,
        t_end: *traj.times.last().expect("at least one record"),
        stopped_early: traj.stopped_early,
        terminal_rhs_norm: *traj.rhs_norm.last().expect("at least one record"),
        terminal_state_norm: fin.norm(),
        terminal_plant_norm: traj.plant_norm.as_ref().and_then(|p| p.last().copied()),
        terminal_oracle_distance: None,
        terminal_state_distance: None,
        terminal_control_distance: None,
        terminal_kkt_residual: None,
        norm_check: check_norm_nonincreasing(&traj, if star.is_some() { "shifted_norm" } else { "state_norm" })?,
        feedback_range: traj.feedback.as_ref().map(|f| {
            f.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)))
        }),
        feedback_in_box: None,
        max_local_error: traj.local_error.iter().copied().fold(0.0, f64::max),
    };
    if let (Some(bx), Some(f)) = (cfg.spec.bounds(), &traj.feedback) {
        if cfg.flow == Variant::ClosedC {
            let m = bx.dim();
            report.feedback_in_box = Some(
                f.iter().all(|u| u.iter().enumerate().all(|(k, v)| *v >= bx.lower()[k % m] && *v <= bx.upper()[k % m])),
            );
        }
    }
    if let Some(p) = &oracle {
        let terminal = kkt_point_of(&cfg.spec, &fin)?;
        let xw = &w[layout.x()];
        let uw = vec![cfg.spec.grid().dt(); terminal.u_star.as_slice().len()];
        let dx = dist(terminal.x_star.as_slice(), p.x_star.as_slice(), xw);
        let du = dist(terminal.u_star.as_slice(), p.u_star.as_slice(), &uw);
        report.terminal_state_distance = Some(dx);
        report.terminal_control_distance = Some(du);
        report.terminal_oracle_distance = Some((dx * dx + du * du).sqrt());
        report.terminal_kkt_residual = Some(kkt_residual(&cfg.spec, &terminal));
    }
    Ok(RunOutcome { report, trajectory: traj, map, oracle })
}

fn dist(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    weighted_norm(&d, w)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Runs the configured flow and writes `trajectory.csv` and `report.json`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let out = simulate(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    out.trajectory.write_csv(BufWriter::new(File::create(cfg.output_dir.join("trajectory.csv"))?))?;
    write_json(&cfg.output_dir.join("report.json"), &out.report)?;
    Ok(out.report)
}

/// Solves the KKT system and writes one CSV per field plus `summary.json`.
pub fn cmd_oracle(cfg: &RunConfig) -> Result<OracleSummary, CliError> {
    let p = solve_kkt(&cfg.spec, &OracleOptions::default())?;
    Ok(p.write_dir(&cfg.spec, &cfg.output_dir)?)
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub rows: Vec<CheckRow>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&r.to_text());
            s.push('\n');
        }
        let failed = self.rows.iter().filter(|r| !r.passed).count();
        s.push_str(&format!("{} checks, {} failed\n", self.rows.len(), failed));
        s
    }
}

/// Runs the selected suites and writes `verify.json` and `verify.txt`.
/// Failing checks turn into `CliError::SuiteFailure` after the files are written.
pub fn cmd_verify(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let report = verify(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("verify.json"), &report)?;
    std::fs::write(cfg.output_dir.join("verify.txt"), report.to_text())?;
    Ok(report)
}

pub fn verify(cfg: &RunConfig) -> Result<VerifyReport, CliError> {
    let rows = suites::run(cfg, &cfg.selected_suites())?;
    let passed = rows.iter().all(|r| r.passed);
    Ok(VerifyReport { config: cfg.raw.echo(), seed: cfg.seed, rows, passed })
}
