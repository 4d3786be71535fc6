use std::path::Path;
use std::process::{Command, Output};

fn gammachaos(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gammachaos")).args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

const TIGHT: &str = r#"{"second_chaos":{"zeta":[0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5]}}"#;

#[test]
fn tight_case_moments_and_bound() {
    let dir = tempfile::tempdir().unwrap();
    let o = gammachaos(&["moments", "--spec", TIGHT], dir.path());
    assert!(o.status.success());
    let m = json(&dir.path().join("moments.json"));
    assert!(m["fourth_moment_combo"].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(m["alpha"], 6.0);

    let o = gammachaos(&["bound", "--spec", TIGHT, "--xs", "2,4,6,10", "--n", "200000"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("bound.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["x", "density_mc", "density_target", "abs_diff", "bound"]);
    let report = json(&dir.path().join("bound.json"));
    for (row, rec) in report["rows"].as_array().unwrap().iter().zip(rdr.records()) {
        let rec = rec.unwrap();
        assert_eq!(&rec[4], "0");
        let diff: f64 = rec[3].parse().unwrap();
        let se = row["density_mc"]["stderr"].as_f64().unwrap();
        assert!(diff <= 4.0 * se);
    }
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = gammachaos(&["moments", "--spec", r#"{"second_chaos":{"zeta":[0.5],"extra":1}}"#], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "validation");

    let cubic = r#"{"chaos":{"dim":2,"kernels":{"3":{"order":3,"dim":2,"entries":[[[0,0,1],1.0]]}}}}"#;
    let o = gammachaos(&["moments", "--spec", cubic], dir.path());
    assert_eq!(o.status.code(), Some(3));

    // too few weights for E[||DF||^-6]
    let few = r#"{"second_chaos":{"zeta":[0.5,0.5,0.5,0.5]}}"#;
    let o = gammachaos(&["bound", "--spec", few, "--xs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3));

    let o = gammachaos(&["bound", "--spec", TIGHT], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_flags_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let spec_path = dir.path().join("spec.json");
    std::fs::write(&spec_path, r#"{"second_chaos":{"zeta":[1.0,0.5,0.5]}}"#).unwrap();
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, r#"{"spec":"spec.json","xs":[1,2,3],"estimator":"cf","mc":{"n":1000,"seed":4}}"#).unwrap();
    let env_out = dir.path().join("from-env");
    let o = Command::new(env!("CARGO_BIN_EXE_gammachaos"))
        .args(["density", "--config"])
        .arg(&cfg_path)
        .args(["--xs", "2.5"])
        .env("GAMMACHAOS_OUT", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(env_out.join("density.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "x,estimate,stderr,n");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("2.5,"));
    let manifest = json(&env_out.join("manifest.json"));
    assert_eq!(manifest["config"]["spec"]["second_chaos"]["zeta"][0], 1.0);
    assert_eq!(manifest["seed"], 4);

    std::fs::write(&cfg_path, r#"{"spec":"spec.json","xs":[1],"tolerance":1}"#).unwrap();
    let o = gammachaos(&["density", "--config", cfg_path.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn quartic_derivative_density_reports_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let q4 = r#"{"chaos":{"dim":3,"kernels":{"4":{"order":4,"dim":3,"entries":[[[0,0,0,0],0.2],[[0,0,1,1],0.1],[[1,1,2,2],0.15],[[2,2,2,2],0.1]]}}}}"#;
    let o = gammachaos(&["density", "--spec", q4, "--k", "2", "--xs", "1,2", "--n", "20000"], dir.path());
    assert!(o.status.success());
    let d = json(&dir.path().join("density.json"));
    assert!(d["rejection_rate"].as_f64().is_some());
    assert!(d["unstable_points"].is_array());
}

#[test]
fn verify_and_stein_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = gammachaos(&["verify"], dir.path());
    assert!(o.status.success());
    assert_eq!(json(&dir.path().join("verify.json"))["passed"], true);
    let o = gammachaos(&["stein", "--alpha", "4", "--k", "1", "--x", "0"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&dir.path().join("stein.json"));
    assert!(s["max_residual"].as_f64().unwrap() <= 1e-8);
}
