use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_secure-consensus"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn run_writes_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(scenario("paper_fig3.cfg"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("practical consensus from round"));
    assert!(text.contains("two-step recovery (90, -40)"));
    assert!(text.contains("mean step time"));
    for f in ["trajectory.csv", "contributions.csv", "estimates_0_1.csv", "estimates_2_3.csv"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn compare_identical_runs_is_zero() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let status = bin()
            .args(["run", "--config"])
            .arg(scenario("paper_fig4.cfg"))
            .args(["--seed", "9", "--out"])
            .arg(d.path())
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    }
    let out = bin().arg("compare").arg(dirs[0].path()).arg(dirs[1].path()).output().unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).trim_end().ends_with("max divergence 0e0"));
}

#[test]
fn mode_override_and_compare() {
    let plain = tempfile::tempdir().unwrap();
    let enc = tempfile::tempdir().unwrap();
    for (dir, mode) in [(&plain, "plaintext"), (&enc, "encrypted")] {
        let out = bin()
            .args(["run", "--config"])
            .arg(scenario("paper_fig3.cfg"))
            .args(["--mode", mode, "--out"])
            .arg(dir.path())
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    assert!(enc.path().join("roundlog.csv").is_file());
    assert!(!plain.path().join("roundlog.csv").exists());
    let out = bin().arg("compare").arg(plain.path()).arg(enc.path()).output().unwrap();
    let text = stdout(&out);
    let max: f64 = text.lines().last().unwrap().trim_start_matches("max divergence ").parse().unwrap();
    assert!(max > 0.0 && max < 1e-2, "{max}");
}

#[test]
fn grid_prints_all_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["grid", "--config"])
        .arg(scenario("table1.cfg"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.matches("20/20").count(), 4);
    assert!(!text.contains("NOT REPRODUCED"));
    assert!(dir.path().join("table1.csv").is_file());
}

#[test]
fn bad_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "name = \"x\"\nrounds = \"many\"\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));

    // γ1 ≥ γ2 violates the gain ordering
    let text = std::fs::read_to_string(scenario("paper_fig3.cfg"))
        .unwrap()
        .replace("gamma1 = 0.3", "gamma1 = 0.7");
    std::fs::write(&bad, text).unwrap();
    let out = bin().args(["run", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ordering"));
}

#[test]
fn grid_without_section_is_rejected() {
    let out = bin().args(["grid", "--config"]).arg(scenario("paper_fig3.cfg")).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one() {
    let out = bin().args(["run", "--config", "/definitely/not/here.cfg"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let empty = tempfile::tempdir().unwrap();
    let out = bin().arg("compare").arg(empty.path()).arg(empty.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}
