use std::fs;
use std::path::Path;
use std::process::Command;

fn hfcs() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hfcs"))
}

fn sample_config() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml"))
}

#[test]
fn sample_config_is_the_default() {
    let cfg = hfcs::sim::config::ScenarioConfig::from_path(sample_config()).unwrap();
    assert_eq!(cfg, hfcs::sim::config::ScenarioConfig::default());
}

#[test]
fn run_writes_both_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.toml");
    fs::write(&cfg, "duration_s = 60.0\nseed = 4\n[population]\nclients = 20\nedge = 20\ncnl = 2\n").unwrap();
    let out = dir.path().join("out");
    let status = hfcs().arg("run").arg(&cfg).arg("--variant").arg("broadcast").arg("--out").arg(&out).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let nodes = fs::read_to_string(out.join("nodes.csv")).unwrap();
    assert_eq!(nodes.lines().next(), Some("id,layer,lon,lat,messages"));
    assert_eq!(nodes.lines().count(), 1 + 1 + 2 + 20);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l == "escalated_tasks,0"), "{summary}");
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    fs::write(&cfg, "duration_s = 0.0\n").unwrap();
    let out = dir.path().join("env-out");
    let res = hfcs().arg("run").arg(&cfg).env("HFCS_OUT_DIR", &out).output().unwrap();
    assert!(res.status.success());
    assert!(out.join("summary.csv").exists());
}

#[test]
fn schema_errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[gossip]\nintervall_s = 3.0\n").unwrap();
    let out = hfcs().arg("run").arg(&cfg).arg("--out").arg(dir.path()).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("intervall_s"), "{err}");

    fs::write(&cfg, "[placement]\nmax_node_distance = -1.0\n").unwrap();
    let out = hfcs().arg("run").arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_preset_is_rejected() {
    let out = hfcs().args(["preset", "sweep"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn preset_exports_one_directory_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.toml");
    fs::write(&cfg, "duration_s = 30.0\n[population]\nclients = 10\nedge = 10\ncnl = 2\n").unwrap();
    let out = dir.path().join("out");
    let res = hfcs().args(["preset", "compare", "--seed", "3", "--config"]).arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for v in ["hfcs", "hierarchical", "broadcast"] {
        for s in 3..8 {
            assert!(out.join(format!("compare/{v}/seed-{s}/summary.csv")).exists());
        }
        assert!(out.join(format!("compare/{v}/aggregate.csv")).exists());
    }
    let table = fs::read_to_string(out.join("compare/aggregate.csv")).unwrap();
    assert!(table.starts_with("value,metric,mean,sd,n\n"));
}

#[test]
fn config_prints_a_loadable_file() {
    let out = hfcs().args(["config", "--scale", "paper"]).output().unwrap();
    assert!(out.status.success());
    let cfg = hfcs::sim::config::ScenarioConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.population.edge, 1000);
}
