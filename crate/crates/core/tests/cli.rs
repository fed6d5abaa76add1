use std::path::Path;
use std::process::Command;

fn segregation(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_segregation")).args(args).output().expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(segregation(&["no-such-command"]).0, 1);
    assert_eq!(segregation(&["run", "no-such-preset"]).0, 1);
    assert_eq!(segregation(&["--help"]).0, 0);
}

#[test]
fn concentration_check_passes() {
    let (code, stdout) = segregation(&["entropy", "concentration", "--n", "6"]);
    assert_eq!(code, 0, "{stdout}");
}

#[test]
fn flow_sweep_reports_class_and_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("flow.csv");
    let (code, _) = segregation(&["entropy", "flow", "--d", "2", "--l-sweep", "2,4,8,16", "--out", csv.to_str().unwrap()]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("l,energy,g_d_reference"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn rd_writes_checkpoints_and_monitors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _) = segregation(&["rd", "--n", "32", "--delta", "10", "--times", "0,0.01", "--horizon", "0.01", "--out", out]);
    assert_eq!(code, 0);
    assert!(dir.path().join("rd_t0.01.csv").exists());
    assert!(dir.path().join("monitors.json").exists());
}

#[test]
fn overlapping_initial_data_is_an_execution_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = segregation(&[
        "rd",
        "--u0",
        r#"{"kind":"constant","value":0.5}"#,
        "--v0",
        r#"{"kind":"constant","value":0.5}"#,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn dry_run_then_plotdata_and_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = segregation::experiment::preset("case2-demo").unwrap();
    let mut small = cfg.clone();
    small.n = vec![32, 64];
    small.kmc_n = Some(vec![32]);
    small.replicas = 2;
    small.oracle_cells = 256;
    let path = dir.path().join("small.json");
    std::fs::write(&path, small.to_json()).unwrap();
    let out = dir.path().join("art");
    let (code, _) = segregation(&["run", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(code == 0 || code == 2, "run exited with {code}");
    assert!(out.join("manifest.json").exists());
    assert!(out.join("report_case2.json").exists());
    assert_eq!(segregation(&["plotdata", out.to_str().unwrap()]).0, 0);
    assert!(Path::new(&out.join("N32/profile_t0.05.dat")).exists());
    let (analyze, _) = segregation(&["analyze", out.to_str().unwrap()]);
    assert_eq!(analyze, code);

    let dry = dir.path().join("dry");
    let (code, _) = segregation(&["run", "case3-demo", "--dry-run", "--out", dry.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(dry.join("manifest.json").exists());
}
