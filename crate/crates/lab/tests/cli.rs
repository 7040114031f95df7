use std::path::Path;
use std::process::{Command, Output};

fn lab() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mfgc-lab"));
    cmd.env_remove("MFGC_LAB_OUT");
    cmd
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    lab()
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_FP: &str = r#"
seed = 4

[model]
name = "zero-drift"

[experiment]
kind = "fp-residual"
steps = [10, 20]
particles = 200
replicates = 1
"#;

#[test]
fn frozen_config_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fp-residual-frozen.toml");
    let o = run_in(dir.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["residuals.csv", "levels.csv", "config.toml", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "fp-residual");
    assert_eq!(manifest["passed"], true);
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));
}

#[test]
fn unknown_model_is_a_config_error_with_a_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "seed = 1\n\n[model]\nname = \"no-such-model\"\n\n[experiment]\nkind = \"fp-residual\"\n",
    )
    .unwrap();
    let o = run_in(&dir.path().join("out"), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn out_of_range_value_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, SMALL_FP.replace("particles = 200", "particles = 0")).unwrap();
    let o = run_in(dir.path(), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 10"), "{}", stderr(&o));
}

#[test]
fn tolerance_violation_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("strict.toml");
    std::fs::write(&path, format!("{SMALL_FP}tol = 1e-30\nslope_range = [0.5, 1.5]\n")).unwrap();
    let o = run_in(&dir.path().join("out"), &["run", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    // the artifacts are still written
    assert!(dir.path().join("out/manifest.json").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("fp-residual-frozen.toml");
    let o = lab()
        .env("MFGC_LAB_OUT", dir.path().join("env-out"))
        .args(["run", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("env-out/manifest.json").exists());
}

#[test]
fn echoed_config_replays_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("small.toml");
    std::fs::write(&path, SMALL_FP).unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = run_in(&first, &["run", path.to_str().unwrap(), "--threads", "2"]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let echoed = first.join("config.toml");
    let o = run_in(&second, &["run", echoed.to_str().unwrap(), "--threads", "1"]);
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let mut names: Vec<_> = std::fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 4);
    for name in names {
        let a = std::fs::read(first.join(&name)).unwrap();
        let b = std::fs::read(second.join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn recover_on_deterministic_flow() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("frozen.toml");
    std::fs::write(&model, "name = \"zero-drift\"\nsigma = 0.0\n").unwrap();
    let o = run_in(
        dir.path(),
        &[
            "recover",
            "--model",
            model.to_str().unwrap(),
            "--particles",
            "50",
            "--steps",
            "20",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("recovered.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 21);
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[2] - v[3]).abs() < 1e-10, "{line}");
    }
}

#[test]
fn nplayer_emits_json_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "nplayer", "--players", "3", "--steps", "5", "--paths", "2", "--emit", "json",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("trajectories.json")).unwrap())
            .unwrap();
    assert_eq!(v.as_array().unwrap().len(), 2 * 6 * 3);
    let rewards = std::fs::read_to_string(dir.path().join("rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 1 + 2 * 3);
    assert!(dir.path().join("snapshots.csv").exists());
}

#[test]
fn unknown_catalog_name_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["nplayer", "--model", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_mfg_solve_writes_flows() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        dir.path(),
        &[
            "mfg",
            "--scenarios",
            "2",
            "--particles",
            "200",
            "--steps",
            "10",
            "--max-iter",
            "2",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let eq: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("equilibrium.json")).unwrap())
            .unwrap();
    assert!(eq["riccati_mean_error"].as_f64().is_some());
    for f in ["flow_000.csv", "flow_001.csv", "fp_residual.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn small_mfc_and_pareto_runs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(
        &dir.path().join("mfc"),
        &[
            "mfc",
            "--budget",
            "20",
            "--scenarios",
            "2",
            "--particles",
            "100",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run_in(
        &dir.path().join("pareto"),
        &["pareto", "--budget", "20", "--players", "2,4", "--paths", "20"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
