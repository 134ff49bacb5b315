use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wheelleg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wheelleg")).args(args).output().unwrap()
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn stand_run_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("stand");
    let o = wheelleg(&["run", "--scenario", "stand", "--out", out.to_str().unwrap(), "--plots"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert!(s["prediction_error"]["mean"].as_f64().unwrap() < 0.02);
    assert_eq!(s["fell"], false);
    for f in ["states.csv", "inputs.csv", "contacts.csv", "metrics.csv", "cot.csv", "cycles.csv", "contacts.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    // standing has no cost-of-transport window: that plot is skipped, not an error
    assert!(!out.join("cot.svg").exists());
    let o = wheelleg(&["plot", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warning"));
}

#[test]
fn reversal_completes_without_fall() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("reversal");
    let o = wheelleg(&["run", "--scenario", "reversal", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&out)["fell"], false);
}

#[test]
fn config_errors_exit_with_code_two_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let missing = tmp.path().join("missing.toml");
    let o = wheelleg(&["run", "--scenario", "stand", "--config", missing.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[gait]\nu_bar = 3.0\n").unwrap();
    let o = wheelleg(&["run", "--scenario", "stand", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn fall_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let scenario = tmp.path().join("shove.toml");
    fs::write(
        &scenario,
        "name = \"shove\"\nduration = 2.0\nprofile = [{ time = 0.0 }]\n\n[disturbance]\nforce = [0.0, 3000.0, 0.0]\nstart = 0.5\nend = 2.0\n",
    )
    .unwrap();
    let out = tmp.path().join("shove");
    let o = wheelleg(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(summary(&out)["fell"], true);
}

#[test]
fn selftest_exit_codes() {
    let o = wheelleg(&["selftest"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).matches("PASS").count(), 3);
    let o = wheelleg(&["selftest", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL finite-differences"));
}
