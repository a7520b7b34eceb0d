use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn mono_ph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mono-ph")).args(args).output().expect("binary runs")
}

fn conf(name: &str) -> String {
    configs().join(name).display().to_string()
}

fn read_csv_numbers(path: &Path) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn every_invalid_config_is_rejected_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let mut seen = 0;
    for entry in std::fs::read_dir(configs().join("invalid")).unwrap() {
        let path = entry.unwrap().path();
        let p = path.display().to_string();
        for cmd in ["run", "verify", "oracle"] {
            let o = mono_ph(&[cmd, &p, "--out", &out]);
            let err = String::from_utf8_lossy(&o.stderr);
            assert_eq!(o.status.code(), Some(2), "{cmd} {p}: {err}");
            assert!(err.contains("line "), "{p}: {err}");
        }
        seen += 1;
    }
    assert!(seen >= 8);
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none(), "nothing written before validation");
}

#[test]
fn unknown_keys_and_bad_overrides_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let z = conf("zero_data.conf");
    for extra in ["problem.alhpa=2", "integrator.T=-1", "flow=sideways", "problem.x0=[1]"] {
        let o = mono_ph(&["run", &z, "--out", &out, "--override", extra]);
        assert_eq!(o.status.code(), Some(2), "{extra}");
    }
    let o = mono_ph(&["run", "/nonexistent.conf"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn zero_data_stays_at_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = mono_ph(&["run", &conf("zero_data.conf"), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1].parse::<f64>().unwrap(), 0.0);
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0);
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["terminal_rhs_norm"], 0.0);
    assert_eq!(report["terminal_oracle_distance"], 0.0);

    let o = mono_ph(&["oracle", &conf("zero_data.conf"), "--out", &out]);
    assert!(o.status.success());
    for f in ["x_star.csv", "u_star.csv", "lambda.csv", "mu.csv"] {
        assert!(read_csv_numbers(&dir.path().join(f)).iter().all(|v| *v == 0.0), "{f}");
    }
}

#[test]
fn oracle_files_for_the_example() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = mono_ph(&["oracle", &conf("example_sec6_constrained.conf"), "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(s["residual"].as_f64().unwrap() <= 1e-10, "{s}");
    assert!(s["active_set_fraction"].as_f64().unwrap() > 0.0);
    let mu = read_csv_numbers(&dir.path().join("mu.csv"));
    assert!(mu.iter().any(|v| *v != 0.0));

    let o = mono_ph(&["oracle", &conf("example_sec6_unconstrained.conf"), "--out", &out]);
    assert!(o.status.success());
    let mu = read_csv_numbers(&dir.path().join("mu.csv"));
    assert!(!mu.is_empty() && mu.iter().all(|v| *v == 0.0));
}

#[test]
fn identical_config_and_seed_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = |d: &Path| {
        vec![
            "run".to_string(),
            conf("open_loop_constrained.conf"),
            "--out".into(),
            d.display().to_string(),
            "--override".into(),
            "integrator.T=2".into(),
            "--seed".into(),
            "11".into(),
        ]
    };
    for d in [a.path(), b.path()] {
        let v = args(d);
        let o = mono_ph(&v.iter().map(String::as_str).collect::<Vec<_>>());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(
        std::fs::read(a.path().join("trajectory.csv")).unwrap(),
        std::fs::read(b.path().join("trajectory.csv")).unwrap()
    );
    let ra = std::fs::read_to_string(a.path().join("report.json")).unwrap();
    let rb = std::fs::read_to_string(b.path().join("report.json")).unwrap();
    assert_eq!(ra.replace(&a.path().display().to_string(), ""), rb.replace(&b.path().display().to_string(), ""));

    let c = tempfile::tempdir().unwrap();
    let mut v = args(c.path());
    v[7] = "12".into();
    mono_ph(&v.iter().map(String::as_str).collect::<Vec<_>>());
    assert_ne!(
        std::fs::read(a.path().join("trajectory.csv")).unwrap(),
        std::fs::read(c.path().join("trajectory.csv")).unwrap()
    );
}

#[test]
fn broken_adjoint_fails_the_structural_suite() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = mono_ph(&[
        "verify",
        &conf("verify_default.conf"),
        "--out",
        &out,
        "--override",
        "verify.suites=[structural]",
        "--override",
        "debug.broken_adjoint=true",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let text = String::from_utf8_lossy(&o.stdout);
    let failing: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(failing.len(), 1, "{text}");
    assert!(failing[0].contains("adjointness"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], false);
}

#[test]
fn verdicts_do_not_depend_on_the_seed() {
    let mut verdicts = Vec::new();
    for seed in ["1", "2", "12345"] {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().display().to_string();
        let o = mono_ph(&[
            "verify",
            &conf("verify_default.conf"),
            "--out",
            &out,
            "--seed",
            seed,
            "--override",
            "verify.samples=200",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
        let text = String::from_utf8_lossy(&o.stdout).to_string();
        verdicts.push(text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).map(|l| l.split_whitespace().take(2).collect::<Vec<_>>().join(" ")).collect::<Vec<_>>());
    }
    assert_eq!(verdicts[0], verdicts[1]);
    assert_eq!(verdicts[0], verdicts[2]);
}

#[test]
fn forced_divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = mono_ph(&[
        "run",
        &conf("open_loop_unconstrained.conf"),
        "--out",
        &out,
        "--override",
        "integrator.dt=0.5",
        "--override",
        "integrator.allow_unstable=true",
        "--override",
        "integrator.T=200",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let guarded = mono_ph(&["run", &conf("open_loop_unconstrained.conf"), "--out", &out, "--override", "integrator.dt=0.5"]);
    assert_eq!(guarded.status.code(), Some(2), "{}", String::from_utf8_lossy(&guarded.stderr));
}
