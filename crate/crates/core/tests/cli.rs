use std::path::Path;
use std::process::Command;

use dacbf::config::RunConfig;

fn dacbf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dacbf"))
}

fn write_config(dir: &Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, cfg.to_toml_string()).unwrap();
    path
}

fn short() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sim.t_end = 3.0;
    cfg
}

#[test]
fn defaults_match_checked_in_config() {
    let out = dacbf().arg("defaults").output().unwrap();
    assert!(out.status.success());
    let printed = RunConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    let shipped = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/truck.toml")).unwrap();
    assert_eq!(printed, RunConfig::default());
    assert_eq!(shipped, RunConfig::default());
}

#[test]
fn run_writes_all_trace_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &short());
    let out_dir = dir.path().join("trace");
    let status = dacbf()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--mode", "proposed", "--out"])
        .arg(&out_dir)
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
    for f in ["header.toml", "steps.csv", "epochs.csv", "summary.csv"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let header = std::fs::read_to_string(out_dir.join("header.toml")).unwrap();
    let body: String = header.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert_eq!(RunConfig::from_toml_str(&body).unwrap(), short());
}

#[test]
fn unsafe_start_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = short();
    cfg.scenario.x0 = vec![6.0, 10.0, 10.0];
    let path = write_config(dir.path(), &cfg);
    let status = dacbf()
        .args(["run", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("t"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(2));
    // the unfiltered mode asserts nothing
    let status = dacbf()
        .args(["run", "--mode", "unfiltered", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path().join("u"))
        .output()
        .unwrap()
        .status;
    assert_eq!(status.code(), Some(0));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        RunConfig::default().to_toml_string().replace("gamma = 40.0\n", ""),
    )
    .unwrap();
    let out = dacbf().args(["run", "--config"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = dacbf().args(["run", "--mode", "fast"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = dacbf()
        .args(["run", "--delay", "2.5", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("true_delay"));
}

#[test]
fn sweep_prints_table_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &short());
    let out = dacbf()
        .args(["sweep", "--delays", "0.2,0.4", "--config"])
        .arg(&path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table
        .lines()
        .map(|l| l.split_whitespace().next().unwrap_or(""))
        .collect();
    assert_eq!(rows, ["delay", "dacbf_baseline", "proposed", "ratio"]);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}
