use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use phasefield::diagnostics::read_ledger_csv;

fn phasefield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasefield"))
        .args(args)
        .output()
        .expect("spawn phasefield")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn scenario_text(name: &str) -> String {
    let o = phasefield(&["scenario", name]);
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn scenario_listing() {
    let o = phasefield(&["scenario"]);
    assert!(o.status.success());
    let names = String::from_utf8(o.stdout).unwrap();
    for n in ["stationary", "smooth", "double_obstacle", "sign_local", "power_2d"] {
        assert!(names.lines().any(|l| l == n), "{names}");
    }
    assert_eq!(phasefield(&["scenario", "nope"]).status.code(), Some(2));
}

#[test]
fn stationary_run_writes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = phasefield(&["run", "--scenario", "stationary", "--out", s(&out), "--snapshot-every", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_ledger_csv(fs::File::open(out.join("ledger.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.is_finite() && r.entropy_defect < 1e-12));
    for f in ["checkpoint.bin", "config.toml", "report.txt", "snapshots/theta_00000.bin", "snapshots/chi_00009.bin", "snapshots/theta_00010.bin"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("snapshots/theta_00001.bin").exists());
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"complete\""), "{manifest}");
    assert!(manifest.contains("\"ledger.csv\""));
    assert!(manifest.contains("[config.scheme]"));
}

#[test]
fn default_snapshot_cadence() {
    let dir = tempfile::tempdir().unwrap();
    let o = phasefield(&["run", "--scenario", "double_obstacle", "--out", s(dir.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let n = fs::read_dir(dir.path().join("snapshots")).unwrap().count();
    // N = 100: every 2nd step, two fields each
    assert_eq!(n, 2 * 51);
}

#[test]
fn reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, scenario_text("sign_local")).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(phasefield(&["run", "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(phasefield(&["run", "--config", s(&cfg), "--out", s(&b)]).status.success());
    assert_eq!(fs::read(a.join("ledger.csv")).unwrap(), fs::read(b.join("ledger.csv")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.bin")).unwrap(), fs::read(b.join("checkpoint.bin")).unwrap());
}

#[test]
fn unwritable_out_dir_leaves_no_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = blocker.join("out");
    let o = phasefield(&["run", "--scenario", "stationary", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(!out.join("manifest.toml").exists());
}

#[test]
fn config_errors_exit_2_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("c.toml");

    fs::write(&cfg, scenario_text("stationary").replace("ell = 0.0", "ell = 0.0\ncolour = 1")).unwrap();
    let o = phasefield(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 6") && e.contains("colour"), "{e}");

    fs::write(&cfg, scenario_text("stationary").replace("ell = 0.0", "ell = 1.0").replace("final_time = 0.1", "final_time = 0.5").replace("steps = 10", "steps = 1")).unwrap();
    let o = phasefield(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1/(8ℓ⁴)"), "{}", stderr(&o));

    fs::write(&cfg, scenario_text("stationary").replace("constant(1.0)", "step(1.0, -0.5, 0.5)")).unwrap();
    let o = phasefield(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ϑ₀ > 0"), "{}", stderr(&o));
    assert!(!out.exists());

    let o = phasefield(&["run", "--config", s(&dir.path().join("missing.toml")), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(5));
    let o = phasefield(&["run", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn step_failure_exits_3_and_keeps_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let text = scenario_text("double_obstacle") + "\n[stepper]\nouter_maxit = 2\n";
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("out");
    let o = phasefield(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("step 1 of 100"), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("status = \"failed\""));
    assert!(out.join("checkpoint.bin").is_file());
}

#[test]
fn check_passes_then_names_the_damaged_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(phasefield(&["run", "--scenario", "power_2d", "--out", s(&out)]).status.success());
    let ckpt = out.join("checkpoint.bin");
    let o = phasefield(&["check", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("check passed"));

    // walk the block layout to a byte inside the Θ snapshot of step 7
    let bytes = fs::read(&ckpt).unwrap();
    let mut off = 8;
    for _ in 0..(2 + 6) {
        let len = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
        off += 8 + len + 32;
    }
    let mut bad = bytes.clone();
    bad[off + 8 + 300] ^= 0x10;
    let bad_path = dir.path().join("bad.bin");
    fs::write(&bad_path, &bad).unwrap();
    let o = phasefield(&["check", s(&bad_path)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("step 7"), "{}", stderr(&o));

    assert_eq!(phasefield(&["check", s(&dir.path().join("none.bin"))]).status.code(), Some(5));
}

#[test]
fn tau_study_reports_an_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let o = phasefield(&["study-tau", "--scenario", "smooth", "--ladder", "0.01,0.005,0.0025", "--out", s(&out), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = String::from_utf8(o.stdout).unwrap();
    assert!(summary.contains("order chi C0(V):"), "{summary}");
    let order: f64 = summary
        .lines()
        .find(|l| l.starts_with("order chi"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(order > 0.8, "{summary}");
    assert_eq!(fs::read_to_string(out.join("study.csv")).unwrap().lines().count(), 4);
    assert!(out.join("study.txt").is_file());

    let o = phasefield(&["study-tau", "--scenario", "smooth", "--ladder", "0.01,0.0075,0.005", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = phasefield(&["study-eps", "--scenario", "smooth", "--ladder", "0.01,0.02,0.005", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}
