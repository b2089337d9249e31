use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rectsieve"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary should run")
}

fn gen_target(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("target.json");
    let out = run(&[
        "gen",
        "--kind",
        "union_rect",
        "--n",
        "2",
        "--b",
        "16",
        "--s",
        "2",
        "--r",
        "1",
        "--seed",
        "42",
        "-o",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "gen failed: {out:?}");
    path
}

#[test]
fn gen_writes_a_valid_target() {
    let dir = tempfile::tempdir().unwrap();
    let path = gen_target(dir.path());
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(parsed["n"], 2);
    assert_eq!(parsed["b"], 16);
    assert_eq!(parsed["kind"], "union_rect");
    assert_eq!(parsed["gates"].as_array().unwrap().len(), 2);
}

#[test]
fn learn_eval_roundtrip_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let target = gen_target(dir.path());
    let model = dir.path().join("model.json");
    let report = dir.path().join("report.json");
    let learn_args = |m: &Path, r: &Path| {
        vec![
            "learn".to_string(),
            "--target".into(),
            target.to_str().unwrap().into(),
            "--algo".into(),
            "ghs".into(),
            "--epsilon".into(),
            "0.2".into(),
            "--delta".into(),
            "0.2".into(),
            "--seed".into(),
            "7".into(),
            "-o".into(),
            m.to_str().unwrap().to_string(),
            "--report".into(),
            r.to_str().unwrap().to_string(),
        ]
    };
    let out = bin()
        .args(learn_args(&model, &report))
        .output()
        .unwrap();
    assert!(out.status.success(), "learn failed: {out:?}");

    let report_json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(report_json["status"], "ok");
    assert!(report_json["queries"].as_u64().unwrap() > 0);

    // Same seed, fresh paths: identical model bytes.
    let model2 = dir.path().join("model2.json");
    let report2 = dir.path().join("report2.json");
    let out = bin()
        .args(learn_args(&model2, &report2))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        fs::read(&model).unwrap(),
        fs::read(&model2).unwrap(),
        "model bytes differ across identical runs"
    );

    let out = run(&[
        "eval",
        "--target",
        target.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--mode",
        "exhaustive",
    ]);
    assert!(out.status.success(), "eval failed: {out:?}");
    let est: serde_json::Value =
        serde_json::from_str(std::str::from_utf8(&out.stdout).unwrap().trim()).unwrap();
    assert!(est["value"].as_f64().unwrap() <= 0.2);
    assert_eq!(est["mode"], "exhaustive");

    let out = run(&[
        "eval",
        "--target",
        target.to_str().unwrap(),
        "--model",
        model.to_str().unwrap(),
        "--mode",
        "sample",
        "--m",
        "2048",
    ]);
    assert!(out.status.success());
    let est: serde_json::Value =
        serde_json::from_str(std::str::from_utf8(&out.stdout).unwrap().trim()).unwrap();
    assert!(est["half_width"].as_f64().unwrap() > 0.0);
}

#[test]
fn learn_rejects_bad_epsilon_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let target = gen_target(dir.path());
    let out = run(&[
        "learn",
        "--target",
        target.to_str().unwrap(),
        "--algo",
        "ghs",
        "--epsilon",
        "1.5",
        "--delta",
        "0.1",
        "--seed",
        "1",
        "-o",
        dir.path().join("m.json").to_str().unwrap(),
        "--report",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));
}

#[test]
fn sweep_exit_code_tracks_row_failures() {
    let dir = tempfile::tempdir().unwrap();
    let spec_ok = dir.path().join("ok.json");
    let spec_bad = dir.path().join("bad.json");
    fs::write(
        &spec_ok,
        r#"{"kind":"union_rect","b":[16],"n":[2],"s":[1],"r":[1],
            "epsilon":[0.25],"seeds":[1,2],"algos":["ghs"],"delta":0.25}"#,
    )
    .unwrap();
    fs::write(
        &spec_bad,
        r#"{"kind":"union_rect","b":[16],"n":[2],"s":[1],"r":[3],
            "epsilon":[0.25],"seeds":[1],"algos":["ghs"],"delta":0.25}"#,
    )
    .unwrap();

    let csv_path = dir.path().join("ok.csv");
    let out = run(&[
        "sweep",
        "--spec",
        spec_ok.to_str().unwrap(),
        "-o",
        csv_path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "sweep failed: {out:?}");
    let text = fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("b,n,s,r,epsilon,seed,algo,queries,stages,gamma,error,wall_ms,status"));
    assert_eq!(text.lines().count(), 3);

    // r > n makes target generation fail per-row: rows recorded, exit nonzero.
    let csv_path = dir.path().join("bad.csv");
    let out = run(&[
        "sweep",
        "--spec",
        spec_bad.to_str().unwrap(),
        "-o",
        csv_path.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let text = fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("exceeds"));
}
