use std::path::Path;
use std::process::{Command, Output};

fn kinestim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kinestim"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const EXPERIMENT: &str = r#"
[model]
kind = "harmonic_oscillator"
sigma = 1.0
kappa = 1.0
D = 1.0

[sim]
n = 1000
gamma = 0.5

[experiment]
regime = "infill_constant"
replicates = 50
base_seed = 7
"#;

#[test]
fn experiment_writes_headed_files_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t1.toml", EXPERIMENT);
    let out = dir.path().join("out");
    let res = kinestim(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.starts_with("RMSE=") && stdout.contains(" ECOV="), "{stdout}");
    for name in ["summary.csv", "replicates.csv", "histogram.csv"] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert!(
            first.starts_with("# config_hash=") && first.ends_with(" base_seed=7"),
            "{name}: {first}"
        );
    }
    let replicates = std::fs::read_to_string(out.join("replicates.csv")).unwrap();
    assert_eq!(replicates.lines().count(), 2 + 50);
}

#[test]
fn identical_runs_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t1.toml", EXPERIMENT);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert_eq!(
            kinestim(&["experiment", "--config", &cfg, "--out", d.to_str().unwrap()])
                .status
                .code(),
            Some(0)
        );
    }
    for name in ["summary.csv", "replicates.csv", "histogram.csv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t1.toml", EXPERIMENT);
    let out = dir.path().join("o");
    let res = kinestim(&[
        "experiment",
        "--config",
        &cfg,
        "--seed",
        "99",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(text.lines().next().unwrap().ends_with("base_seed=99"));
}

#[test]
fn negative_kappa_is_a_validation_error_naming_kappa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        &EXPERIMENT.replace("kappa = 1.0", "kappa = -1.0"),
    );
    let out = dir.path().join("o");
    let res = kinestim(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("kappa"));
    assert!(!out.exists(), "no files on error");
}

#[test]
fn parse_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (EXPERIMENT.replace("kappa = 1.0", "kapa = 1.0"), "kapa"),
        (
            EXPERIMENT.replace("replicates = 50", "replicates = \"many\""),
            "replicates",
        ),
        (EXPERIMENT.replace("[experiment]", "[experimnt]"), "experimnt"),
        (EXPERIMENT.replace("gamma = 0.5", ""), "sim.gamma"),
    ];
    for (i, (body, key)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("c{i}.toml"), body);
        let res = kinestim(&[
            "experiment",
            "--config",
            &cfg,
            "--out",
            dir.path().join("o").to_str().unwrap(),
        ]);
        assert_eq!(res.status.code(), Some(1), "case {i}");
        let err = String::from_utf8_lossy(&res.stderr);
        assert!(err.contains(key), "case {i}: {err}");
    }
    let res = kinestim(&[
        "experiment",
        "--config",
        dir.path().join("missing.toml").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert_eq!(kinestim(&["bogus", "--config", "x.toml"]).status.code(), Some(1));
}

#[test]
fn missing_section_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t1.toml", EXPERIMENT);
    let res = kinestim(&["kernel", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("[kernel]"));
}

#[test]
fn blow_up_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "boom.toml",
        r#"
[model]
kind = "harmonic_oscillator"
sigma = 1.0
kappa = 1.0
D = 1000.0

[sim]
n = 10000
h = 1.0
substeps = 1
"#,
    );
    let out = dir.path().join("o");
    let res = kinestim(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn simulate_then_estimate_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let sim = write_config(
        dir.path(),
        "sim.toml",
        r#"
output_dir = "run"
[model]
kind = "integrated_brownian"
sigma = 1.5

[sim]
n = 4001
h = 0.001
seed = 4
"#,
    );
    let res = Command::new(env!("CARGO_BIN_EXE_kinestim"))
        .args(["simulate", "--config", &sim])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let est = write_config(
        dir.path(),
        "est.toml",
        r#"
[model]
kind = "integrated_brownian"
sigma = 1.5

[estimator]
regime = "infill_constant"
T = 4.0
input = "run/trajectory.csv"
"#,
    );
    let out = dir.path().join("est");
    let res = kinestim(&["estimate", "--config", &est, "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(
        stdout.starts_with("infill_constant estimate=") && stdout.contains("CI=["),
        "{stdout}"
    );
    let csv = std::fs::read_to_string(out.join("estimate.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    let estimate: f64 = row[3].parse().unwrap();
    // σ² = 2.25 from 1999 windows: relative SE about 3%
    assert!((estimate / 2.25 - 1.0).abs() < 0.1, "{estimate}");
}

#[test]
fn command_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("command = \"simulate\"\n{EXPERIMENT}"));
    let res = kinestim(&["experiment", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("command"));
}
