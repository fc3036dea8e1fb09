use std::path::Path;
use std::process::Command;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scenario-mcts"))
}

fn configs() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn validate_fixture_succeeds() {
    let out = cli().args(["validate", "--fixture", "roundabout"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("network ok"));
}

#[test]
fn validate_bundled_configs() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let out = cli().arg("validate").arg("--config").arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", path.display());
    }
}

#[test]
fn unknown_flag_and_bad_config_exit_one() {
    let out = cli().args(["run", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"network": {"path": "nowhere", "format": "fixture"}, "mode": "search_hybrid", "episode_count": 1}"#).unwrap();
    let out = cli().arg("validate").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_then_replay_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"network": {"path": "t_junction", "format": "fixture"},
            "search": {"max_iterations": 30, "max_depth": 4},
            "episode_count": 2, "mode": "search_hybrid"}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let status = cli().arg("run").arg(&cfg).arg("--out").arg(&out_dir).status().unwrap();
    assert!(status.success());
    for f in ["summary.json", "ledger.json", "action_distribution.csv", "metrics_long.csv", "metrics_table.csv"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    let episode = out_dir.join("episodes").join("0.json");
    let csv = dir.path().join("traj.csv");
    let status = cli().arg("replay").arg(&cfg).arg(&episode).arg("--out").arg(&csv).status().unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("time,agent_id,x,y,heading,speed,accel,steer,lane_id,s,d"));

    let tables = dir.path().join("tables");
    let out = cli().arg("export").arg(&out_dir).arg("--out").arg(&tables).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("baseline_default"));
    assert!(tables.join("metrics_table.csv").is_file());
}
