use std::fs::File;
use std::path::{Path, PathBuf};

use secure_consensus::adversary::EstimateRow;
use secure_consensus::dynamics::{read_contributions_csv, read_trajectory_csv};
use secure_consensus::harness::{
    compare_runs, load_config, run_scenario, HarnessError, Mode, ScenarioConfig,
};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn bundled() -> Vec<ScenarioConfig> {
    ["paper_fig3.cfg", "paper_fig4.cfg", "table1.cfg", "encrypted_fig3.cfg"]
        .iter()
        .map(|n| load_config(&scenario_path(n)).unwrap().0)
        .collect()
}

#[test]
fn bundled_scenarios_validate_and_round_trip() {
    for cfg in bundled() {
        cfg.validate().unwrap();
        let again = ScenarioConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg, "{}", cfg.name);
    }
}

#[test]
fn outputs_read_back() {
    let cfg = load_config(&scenario_path("paper_fig3.cfg")).unwrap().0;
    let dir = tempfile::tempdir().unwrap();
    let report = run_scenario(&cfg, Some(dir.path())).unwrap();
    assert_eq!(report.files.len(), 4);

    let rows = read_trajectory_csv(File::open(dir.path().join("trajectory.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), (cfg.rounds + 1) * 4);
    assert_eq!((rows[7].round, rows[7].agent_id, rows[7].p), (1, 3, 90.0 - 40.0));
    assert!(rows.iter().filter(|r| r.round == cfg.rounds).all(|r| r.u.is_none()));

    let contributions =
        read_contributions_csv(File::open(dir.path().join("contributions.csv")).unwrap()).unwrap();
    // every edge contributes in both directions each round
    assert_eq!(contributions.len(), cfg.rounds * 8);

    let mut reader = csv::Reader::from_path(dir.path().join("estimates_2_3.csv")).unwrap();
    let estimates: Vec<EstimateRow> = reader.deserialize().map(Result::unwrap).collect();
    assert_eq!(estimates.len(), cfg.rounds);
    assert!(estimates.iter().all(|r| r.bound_p.is_some()));
}

#[test]
fn seed_matters_only_with_decoupled_weights() {
    let run = |cfg: &ScenarioConfig| {
        let dir = tempfile::tempdir().unwrap();
        run_scenario(cfg, Some(dir.path())).unwrap();
        dir
    };
    let mut fixed = load_config(&scenario_path("paper_fig3.cfg")).unwrap().0;
    fixed.rounds = 50;
    let a = run(&fixed);
    fixed.seed = 77;
    let b = run(&fixed);
    assert_eq!(compare_runs(a.path(), b.path()).unwrap().max, 0.0);

    let mut decoupled = fixed.clone();
    decoupled.delta_a = 0.02;
    decoupled.seed = 1;
    let c = run(&decoupled);
    decoupled.seed = 2;
    let d = run(&decoupled);
    assert!(compare_runs(c.path(), d.path()).unwrap().max > 0.0);
}

#[test]
fn encrypted_run_tracks_plaintext() {
    let mut cfg = load_config(&scenario_path("encrypted_fig3.cfg")).unwrap().0;
    cfg.rounds = 60;
    let enc_dir = tempfile::tempdir().unwrap();
    let enc = run_scenario(&cfg, Some(enc_dir.path())).unwrap();
    assert!(enc_dir.path().join("roundlog.csv").is_file());
    cfg.mode = Mode::Plaintext;
    let plain_dir = tempfile::tempdir().unwrap();
    run_scenario(&cfg, Some(plain_dir.path())).unwrap();
    let d = compare_runs(enc_dir.path(), plain_dir.path()).unwrap();
    assert!(d.max > 0.0 && d.max < 60.0 * 48.0 * 2f64.powi(-16), "{}", d.max);
    assert_eq!(enc.attacks.len(), 1);
}

#[test]
fn scenario_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.cfg");
    let base = std::fs::read_to_string(scenario_path("paper_fig3.cfg")).unwrap();

    std::fs::write(&path, base.replace("rounds = 500", "rounds = 500\nwhatever = 1")).unwrap();
    let err = load_config(&path).unwrap_err();
    assert!(matches!(err, HarnessError::Parse(_)), "{err}");
    assert_eq!(err.exit_code(), 2);

    std::fs::write(&path, base.replace("[2, 3, 1.0]", "[2, 3, -1.0]")).unwrap();
    assert_eq!(load_config(&path).unwrap_err().exit_code(), 2);

    std::fs::write(&path, base.replace("delta_a = 0.0", "delta_a = 0.5")).unwrap();
    let err = load_config(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    std::fs::write(&path, base.replace("target = 3", "target = 9")).unwrap();
    assert_eq!(load_config(&path).unwrap_err().exit_code(), 2);
}
