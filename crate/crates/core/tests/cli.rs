//! End-to-end checks of the binary: exit-code contract and byte-identical
//! outputs for identical configuration and seed.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridcert"))
}

fn case_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("cases")
        .join(name)
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gridcert-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn gains_writes_report_and_exits_zero() {
    let out = tmp_dir("gains");
    let status = bin()
        .args(["gains", "--case"])
        .arg(case_path("smib.json"))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = read(&out, "gains.csv");
    assert!(csv.starts_with("output,u:bus1,u:bus2,v:1-2"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&read(&out, "gains.json")).unwrap();
    assert!(sidecar["tail_bound"].as_f64().unwrap() >= 0.0);
}

#[test]
fn certify_exit_codes() {
    let out = tmp_dir("certify");
    // Certifiable: the sweep peak sits near ubar = 0.5 at zbar = 1.2.
    let ok = bin()
        .args(["certify", "--case"])
        .arg(case_path("smib.json"))
        .args(["--out"])
        .arg(&out)
        .args(["--ubar", "0", "--ubar", "1=0.4", "--zbar", "1.2"])
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));
    let cert: serde_json::Value = serde_json::from_str(&read(&out, "certificate.json")).unwrap();
    assert_eq!(cert["cico_ok"], serde_json::Value::Bool(true));

    // Not certifiable at this magnitude.
    let not = bin()
        .args(["certify", "--case"])
        .arg(case_path("smib.json"))
        .args(["--out"])
        .arg(&out)
        .args(["--ubar", "0", "--ubar", "1=0.7", "--zbar", "1.2"])
        .status()
        .unwrap();
    assert_eq!(not.code(), Some(1));
}

#[test]
fn input_error_is_exit_two() {
    let out = tmp_dir("schema");
    let bad = out.join("bad.json");
    std::fs::write(&bad, r#"{"buses": [{"id": 1, "kind": "gen"}], "lines": [{"from": 1, "to": 2, "phi": 0.5}], "generators": {"1": {"M": 1.0, "D": 1.0, "T": 0.0, "R": 1.0, "Pg": 0.0}}, "loads": {}}"#).unwrap();
    let output = bin()
        .args(["gains", "--case"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("error"), "{stderr}");
}

#[test]
fn numerical_failure_is_exit_three() {
    let out = tmp_dir("numfail");
    let bad = out.join("nofix.json");
    // p > phi: no equilibrium, Newton diverges.
    std::fs::write(&bad, r#"{"buses": [{"id": 1, "kind": "gen"}, {"id": 2, "kind": "load", "infinite": true}], "lines": [{"from": 1, "to": 2, "phi": 0.8}], "generators": {"1": {"M": 1.0, "D": 1.2, "T": 0.0, "R": 1.0, "Pg": 1.0}}, "loads": {}}"#).unwrap();
    let status = bin()
        .args(["gains", "--case"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn identical_seed_gives_byte_identical_outputs() {
    let scenario = serde_json::json!({
        "horizon": 8.0,
        "pattern": {"5": 0.4, "8": -0.3},
        "shape": {"kind": "filtered-noise", "bandwidth": 2.0, "sample_dt": 0.25, "seed": 0}
    });
    let out1 = tmp_dir("det1");
    let out2 = tmp_dir("det2");
    let sc = out1.join("scenario.json");
    std::fs::write(&sc, scenario.to_string()).unwrap();
    for out in [&out1, &out2] {
        let status = bin()
            .args(["simulate", "--case"])
            .arg(case_path("nine_bus.json"))
            .arg("--scenario")
            .arg(&sc)
            .arg("--out")
            .arg(out)
            .args(["--seed", "42"])
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(0));
    }
    assert_eq!(read(&out1, "trajectory.csv"), read(&out2, "trajectory.csv"));
    assert_eq!(read(&out1, "peaks.json"), read(&out2, "peaks.json"));

    // A different seed must change the noise realization.
    let out3 = tmp_dir("det3");
    let status = bin()
        .args(["simulate", "--case"])
        .arg(case_path("nine_bus.json"))
        .arg("--scenario")
        .arg(&sc)
        .arg("--out")
        .arg(&out3)
        .args(["--seed", "43"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert_ne!(read(&out1, "trajectory.csv"), read(&out3, "trajectory.csv"));
}

#[test]
fn sweep_writes_curves_and_svg() {
    let out = tmp_dir("sweep");
    let status = bin()
        .args(["sweep", "--case"])
        .arg(case_path("smib.json"))
        .args(["--zbar-grid", "0.1:2.8:0.1", "--skip-empirical", "--out"])
        .arg(&out)
        .args(["--direction", "1=1"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = read(&out, "sweep_mu.csv");
    assert!(csv.starts_with("zbar,mu,binding_row,margin"));
    assert_eq!(csv.lines().count(), 28 + 1);
    assert!(read(&out, "sweep_mu.svg").starts_with("<svg"));
    assert!(read(&out, "sweep_y.csv").starts_with("zbar,ybar"));

    // Empty grid is an input error.
    let status = bin()
        .args(["sweep", "--case"])
        .arg(case_path("smib.json"))
        .args(["--zbar-grid", "2.0:1.0:0.1", "--skip-empirical", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn maxdist_per_bus_table() {
    let out = tmp_dir("perbus");
    let status = bin()
        .args(["maxdist", "--case"])
        .arg(case_path("three_bus.json"))
        .args(["--per-bus", "--ybar", "0.5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = read(&out, "per_bus.csv");
    assert_eq!(csv.lines().count(), 4); // header + 3 buses
    assert!(csv.lines().nth(1).unwrap().starts_with("1,gen,"));
}
