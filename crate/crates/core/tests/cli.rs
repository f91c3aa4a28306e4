//! End-to-end checks of the `mel` binary: outputs, exit codes and the
//! config lock.

use std::path::Path;
use std::process::Command;

const FAST: &str = r#"
seeds = [0]
grid = [0.05]

[protocol]
train_horizon = 2.0
test_horizon = 1.0
n_test = 2
dt = 0.01
spinup = 2.0
variants = ["nominal", "hybrid-ct"]
truth_integrator = { rtol = 1e-8, atol = 1e-8, max_step = 0.01, method = "dormand_prince54" }
"#;

fn mel(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mel")).args(args).output().expect("spawn mel")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn successful_run_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "fast.toml", FAST);
    let out = tmp.path().join("run");
    let o = mel(&["eps-sweep", "--config", &cfg, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "experiment,cell,param,param_value,variant,seed,replicate,segment,metric,value");
    assert!(csv.lines().skip(1).all(|l| l.starts_with("eps-sweep,0,eps,0.05,") && l.contains(",3,")));
    assert_eq!(csv.lines().filter(|l| l.contains("validity_time")).count(), 4);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_failed"], 0);
    assert_eq!(summary["experiment"], "eps-sweep");

    let lock = std::fs::read_to_string(out.join("config.lock.toml")).unwrap();
    assert!(lock.contains(summary["config_hash"].as_str().unwrap()));
    assert!(lock.contains("seeds = [3]"));

    // Re-running from the lock file reproduces the results exactly.
    let lock_path = write(tmp.path(), "lock.toml", &lock);
    let again = tmp.path().join("again");
    let o = mel(&["eps-sweep", "--config", &lock_path, "--out", again.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(again.join("results.csv")).unwrap(), csv);
}

#[test]
fn failing_cell_exits_with_two_and_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let text = FAST.replace("dt = 0.01\n", "dt = 0.01\nomega = -1.0\n");
    let cfg = write(tmp.path(), "bad_cell.toml", &text);
    let out = tmp.path().join("run");
    let o = mel(&["eps-sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_failed"], 1);
    assert!(summary["failures"][0]["error"].as_str().unwrap().contains("omega"));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = [
        "[protocol]\nn_test = 0\n",
        "grid = []\n",
        "typo_field = 3\n",
        "experiment = \"dim-sweep\"\n",
    ];
    for (i, text) in bad.iter().enumerate() {
        let cfg = write(tmp.path(), &format!("bad{i}.toml"), text);
        let o = mel(&["eps-sweep", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{text}");
        assert!(!tmp.path().join("x").exists());
    }
    let cfg = write(tmp.path(), "ok.toml", FAST);
    assert_eq!(mel(&["not-an-experiment", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(mel(&["eps-sweep", "--config", "/nonexistent.toml"]).status.code(), Some(1));
}

#[test]
fn theory_run_writes_scaling_table() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "t.toml", "[theory]\nt_grid = [16.0, 32.0, 64.0]\nn_seeds = 3\nbootstrap = 50\n");
    let out = tmp.path().join("run");
    let o = mel(&["theory-scaling", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("scaling.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "T,seed,R_hat,G_hat");
    assert_eq!(table.lines().count(), 1 + 3 * 3);
    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("scaling.json")).unwrap()).unwrap();
    assert!(s["slope"].is_f64() && s["ci_low"].is_f64() && s["ci_high"].is_f64());
}
