use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leo-topo"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    let output = bin().arg("--config").arg(config).arg("--out").arg(out).args(args).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    output
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn same_config_gives_identical_outputs() {
    let dir = scratch("determinism");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "seed = 5\nduration_s = 1.0\n[topology]\ngenerator = \"random\"\n").unwrap();
    for cmd in ["topology", "simulate"] {
        let out = dir.join(cmd);
        run(&cfg, &out, &[cmd]);
        let first = files(&out);
        run(&cfg, &out, &[cmd]);
        assert!(first.len() > 3);
        assert_eq!(first, files(&out), "{cmd} output differs between runs");
    }
    // The output location does not enter the hash.
    let moved = dir.join("moved");
    run(&cfg, &moved, &["topology"]);
    assert_eq!(json(&moved.join("provenance.json")), json(&dir.join("topology/provenance.json")));
    let prov = json(&dir.join("topology/provenance.json"));
    assert_eq!(prov["command"], "topology");
    assert_eq!(prov["seed"], 5);
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = scratch("seed_flag");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "seed = 5\n").unwrap();
    run(&cfg, &dir.join("a"), &["--seed", "9", "analyze-demand"]);
    assert_eq!(json(&dir.join("a/provenance.json"))["seed"], 9);
    let saved = fs::read_to_string(dir.join("a/config.toml")).unwrap();
    assert!(saved.contains("seed = 9"));
}

#[test]
fn invalid_configs_exit_nonzero() {
    let dir = scratch("invalid");
    for (name, text) in [
        ("unknown_key.toml", "sede = 1\n"),
        ("unknown_nested.toml", "[shell]\naltitude = 550\n"),
        ("bad_value.toml", "[shell]\nnum_orbits = 0\n"),
        ("bad_window.toml", "[window]\nstep_s = 0\n"),
    ] {
        let cfg = dir.join(name);
        fs::write(&cfg, text).unwrap();
        let out =
            bin().arg("--config").arg(&cfg).arg("--out").arg(dir.join("out")).arg("constellation").output().unwrap();
        assert!(!out.status.success(), "{name} was accepted");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    let missing = bin().args(["--config", "/nonexistent.toml", "constellation"]).output().unwrap();
    assert!(!missing.status.success());
}

#[test]
fn flat_reports_no_violations() {
    let dir = scratch("flat");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "[flat]\ninstances = 5\ndump_instances = true\n[flat.trial]\ndemands = 10\n").unwrap();
    let out = dir.join("out");
    run(&cfg, &out, &["flat"]);
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["lower_bound_violations"], 0);
    assert_eq!(summary["upper_bound_violations"], 0);
    let motivating = json(&out.join("motivating.json"));
    assert!((motivating["grid_stretch"].as_f64().unwrap() - 2f64.sqrt()).abs() < 1e-9);
    assert_eq!(fs::read_to_string(out.join("bounds.csv")).unwrap().lines().count(), 1 + 5 * 10);
    assert_eq!(fs::read_dir(out.join("instances")).unwrap().count(), 5);
}

#[test]
fn analyze_demand_writes_regions() {
    let dir = scratch("analyze");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "[regions]\nl_theta_deg = 30\nl_phi_deg = 60\n").unwrap();
    let out = dir.join("out");
    run(&cfg, &out, &["analyze-demand"]);
    let summary = json(&out.join("summary.json"));
    let r = summary["mean_resultant_length"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r));
    assert_eq!(summary["flows"], 100 * 99);
    // Header plus 6 × 6 cells.
    assert_eq!(fs::read_to_string(out.join("regions.csv")).unwrap().lines().count(), 37);
}

#[test]
fn export_viz_round_trips_a_topology_file() {
    let dir = scratch("viz");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "[viz]\ndemand_lines = true\nselected_paths = 3\n").unwrap();
    run(&cfg, &dir.join("topo"), &["topology"]);
    let out = dir.join("viz");
    let topo = dir.join("topo/topology.csv");
    run(&cfg, &out, &["export-viz", "--topology", topo.to_str().unwrap()]);
    let g = json(&out.join("viz.geojson"));
    let features = g["features"].as_array().unwrap();
    let role = |r: &str| features.iter().filter(|f| f["properties"]["role"] == r).count();
    assert_eq!(role("intra") + role("inter"), 3168);
    assert_eq!(role("demand"), 100 * 99);
    assert_eq!(role("selected"), 3);
    let czml = json(&out.join("viz.czml"));
    assert_eq!(czml.as_array().unwrap().len(), 1 + 1584 + 3168);
}

#[test]
fn zero_duration_simulation_is_empty() {
    let dir = scratch("zero");
    let cfg = dir.join("run.toml");
    fs::write(&cfg, "duration_s = 0.0\n").unwrap();
    let out = dir.join("out");
    run(&cfg, &out, &["simulate"]);
    let report = json(&out.join("report.json"));
    assert_eq!(report["data"]["generated"], 0);
    assert_eq!(report["echo"]["generated"], 0);
}
