use std::process::Command;

use xlris::codebook::Codebook;
use xlris_sim::experiments::run_experiment;
use xlris_sim::{replay, run, Experiment, ExperimentConfig, Manifest, Profile, RunInputs, SimError};

const SMALL: &str = r#"{
  "seed": 7,
  "geometry": {"n1": 16, "m_antennas": 2},
  "codebook": {
    "x_range_m": [-0.2, 0.2], "z_range_m": [0.2, 0.4],
    "levels": [
      {"s_x": 2, "s_z": 1, "design_x": 8, "design_z": 2},
      {"s_x": 4, "s_z": 2, "design_x": 2, "design_z": 2}
    ],
    "gain_db": 40.0,
    "export_patterns": [[2, 3]]
  },
  "training": {"placements": 6},
  "im": {"users": 2, "m_antennas": 4, "instances": 2},
  "benchmark": {"wmmse_iters": 4},
  "hybrid": {"rf_chains": 2, "rounds": 4, "m_antennas": 4, "levels": 1},
  "sweep": {"parameter": "bits", "values": [1, 2]}
}"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_json(SMALL, Some(Profile::Desk)).unwrap()
}

fn csv_header(bytes: &[u8]) -> Vec<String> {
    let mut r = csv::Reader::from_reader(bytes);
    r.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn profile_overrides_merge_field_by_field() {
    let cfg = small();
    let g = cfg.geometry.as_ref().unwrap();
    assert_eq!(g.n1, 16);
    // Untouched fields come from the profile.
    assert_eq!(g.n2, 1);
    assert_eq!(cfg.im.as_ref().unwrap().bits, 3);
    assert_eq!(cfg.im.as_ref().unwrap().users, 2);
}

#[test]
fn codebook_build_is_byte_identical() {
    let cfg = small();
    let a = run_experiment(Experiment::CodebookBuild, &cfg, &RunInputs::default()).unwrap();
    let b = run_experiment(Experiment::CodebookBuild, &cfg, &RunInputs::default()).unwrap();
    assert_eq!(a, b);
    let cb = Codebook::from_json(std::str::from_utf8(&a["codebook.json"]).unwrap()).unwrap();
    assert_eq!(cb.levels.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 8]);
}

#[test]
fn pattern_csv_schema() {
    let cfg = small();
    let a = run_experiment(Experiment::CodebookBuild, &cfg, &RunInputs::default()).unwrap();
    let bytes = &a["pattern_l2_r3.csv"];
    assert_eq!(csv_header(bytes), ["x_m", "z_m", "gain_db"]);
    let rows = csv::Reader::from_reader(&bytes[..]).records().count();
    // Parent region sampled at (4 / 2) * 2 by (2 / 1) * 2 points.
    assert_eq!(rows, 16);
    assert_eq!(
        csv_header(&a["codebook_summary.csv"]),
        ["level", "region_index", "parent", "x_min_m", "x_max_m", "z_min_m", "z_max_m", "objective"]
    );
}

#[test]
fn seed_changes_stochastic_outputs() {
    let mut cfg = small();
    let a = run_experiment(Experiment::Im, &cfg, &RunInputs::default()).unwrap();
    cfg.seed = Some(8);
    let b = run_experiment(Experiment::Im, &cfg, &RunInputs::default()).unwrap();
    assert_ne!(a["users.csv"], b["users.csv"]);
}

#[test]
fn every_experiment_reruns_identically() {
    let cfg = small();
    for exp in [Experiment::Train, Experiment::Im, Experiment::Wmmse, Experiment::Hybrid, Experiment::Sweep] {
        let a = run_experiment(exp, &cfg, &RunInputs::default()).unwrap();
        let b = run_experiment(exp, &cfg, &RunInputs::default()).unwrap();
        assert!(!a.is_empty(), "{}", exp.name());
        assert_eq!(a, b, "{}", exp.name());
    }
}

#[test]
fn run_writes_artifacts_and_replay_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let m = run(Experiment::Wmmse, &cfg, &RunInputs::default(), dir.path()).unwrap();
    let on_disk: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk, m);
    for (name, hash) in &m.artifacts {
        let bytes = std::fs::read(dir.path().join(name)).unwrap();
        assert_eq!(&xlris_sim::export::sha256_hex(&bytes), hash);
    }
    replay(&m, &RunInputs::default()).unwrap();

    let mut bad = m.clone();
    bad.artifacts.insert("wmmse_trace.csv".into(), "0".repeat(64));
    assert!(
        matches!(replay(&bad, &RunInputs::default()), Err(SimError::ReplayMismatch { artifact, .. }) if artifact == "wmmse_trace.csv")
    );
}

#[test]
fn train_accepts_a_prebuilt_codebook() {
    let cfg = small();
    let built = run_experiment(Experiment::CodebookBuild, &cfg, &RunInputs::default()).unwrap();
    let cb = Codebook::from_json(std::str::from_utf8(&built["codebook.json"]).unwrap()).unwrap();
    let own = run_experiment(Experiment::Train, &cfg, &RunInputs::default()).unwrap();
    let given = run_experiment(Experiment::Train, &cfg, &RunInputs { codebook: Some(cb) }).unwrap();
    assert_eq!(own, given);
    assert_eq!(csv_header(&own["overhead.csv"]), ["levels", "s", "hierarchical", "exhaustive"]);
}

#[test]
fn missing_blocks_name_the_field() {
    let cfg = ExperimentConfig::from_json(r#"{"seed": 1}"#, None).unwrap();
    match run_experiment(Experiment::Im, &cfg, &RunInputs::default()) {
        Err(SimError::Config { field, .. }) => assert_eq!(field, "geometry"),
        other => panic!("unexpected {other:?}"),
    }
    let err = ExperimentConfig::from_json(r#"{"geometry": {"n1": "many"}}"#, Some(Profile::Desk)).unwrap_err();
    assert!(err.to_string().contains("`geometry.n1`"), "{err}");
}

#[test]
fn cli_reports_missing_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 1, "im": {"users": 2, "x_range_m": [0, 1], "z_range_m": [1, 2], "instances": 1, "bits": 2}}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_xlris"))
        .args(["im", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("geometry"), "{stderr}");
    assert!(!dir.path().join("out").join("manifest.json").exists());
}

#[test]
fn cli_profile_prints_valid_config() {
    let out = Command::new(env!("CARGO_BIN_EXE_xlris")).args(["profile", "desk"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ExperimentConfig::from_json(&text, None).unwrap();
    assert_eq!(cfg, Profile::Desk.config());
}
