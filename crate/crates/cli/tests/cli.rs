use std::path::Path;
use std::process::{Command, Output};

fn mprio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mprio"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mprio(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// sample → fit → optimize → evaluate in `dir`.
fn pipeline(dir: &Path) {
    let data = dir.join("data.csv");
    let models = dir.join("models");
    let results = dir.join("results.json");
    let common = ["--scene", "builtin:preliminary", "--jobs", "1"];
    ok(&[
        &[
            "sample",
            "--n-samples",
            "8",
            "--n-trials",
            "6",
            "--seed",
            "3",
            "--out",
            s(&data),
        ],
        &common[..],
    ]
    .concat());
    ok(&["fit", "--dataset", s(&data), "--out", s(&models), "--seed", "3"]);
    ok(&[
        &[
            "optimize",
            "--models",
            s(&models),
            "--t-lim",
            "5,10",
            "--zeta",
            "0,1",
            "--ga-population",
            "16",
            "--ga-generations",
            "10",
            "--out",
            s(&results),
        ],
        &common[..2],
    ]
    .concat());
    ok(&[
        &[
            "evaluate",
            "--results",
            s(&results),
            "--n-trials",
            "4",
            "--seed",
            "1",
            "--out",
            s(&dir.join("assessment.json")),
        ],
        &common[..],
    ]
    .concat());
}

#[test]
fn pipeline_output_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "data.csv",
        "models/product.gp.json",
        "models/risk.gp.json",
        "results.json",
        "assessment.json",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(!x.is_empty(), "{f} is empty");
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn infeasible_limit_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let models = dir.path().join("models");
    ok(&[
        "sample",
        "--scene",
        "builtin:preliminary",
        "--n-samples",
        "6",
        "--n-trials",
        "4",
        "--out",
        s(&data),
    ]);
    ok(&["fit", "--dataset", s(&data), "--out", s(&models)]);
    let out = mprio(&[
        "optimize",
        "--models",
        s(&models),
        "--t-lim",
        "0.001",
        "--scene",
        "builtin:preliminary",
        "--ga-generations",
        "5",
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("r.json").exists());
}

#[test]
fn bad_input_fails_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = mprio(&[
        "fit",
        "--dataset",
        s(&dir.path().join("missing.csv")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = mprio(&[
        "sample",
        "--scene",
        "builtin:nope",
        "--out",
        s(&dir.path().join("d.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = mprio(&[
        "optimize",
        "--models",
        s(dir.path()),
        "--t-lim",
        "1:0:0.1",
        "--out",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    // Unknown flags are a usage error.
    assert_eq!(mprio(&["sample", "--bogus"]).status.code(), Some(2));
}

#[test]
fn appendix_prints_the_condition() {
    let out = ok(&[
        "appendix", "--t-r", "2.48", "--t-m", "2.0", "--dt-r", "0.5", "--dt-m", "0.5",
    ]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["continuous_better"], serde_json::Value::Bool(true));
    let out = ok(&["appendix", "--t-r", "1", "--t-m", "1", "--dt-r", "1", "--dt-m", "1"]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["continuous_better"], serde_json::Value::Bool(false));
}

#[test]
fn scene_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.toml");
    ok(&["scene", "--builtin", "preliminary", "--out", s(&path)]);
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/preliminary.toml");
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(shipped).unwrap());
    let bench = dir.path().join("bench.csv");
    ok(&["benchmark", "--scene", s(&path), "--n-trials", "3", "--out", s(&bench)]);
    let rows = std::fs::read_to_string(&bench).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 4);
}
