use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn lbp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lbp"))
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// The null scenario shrunk so every request runs in well under a second.
fn small_null(dir: &Path, estimands: Option<Value>) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join("null.scenario.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["mc"] = json!({"n_truth": 3000, "n_policy_fit": 3000, "n_observational": 3000, "bootstrap_replicates": 8});
    if let Some(e) = estimands {
        v["estimands"] = e;
    }
    let path = dir.join("small.scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn run(scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    lbp(&args)
}

#[test]
fn validate_accepts_golden_scenarios() {
    for name in ["toy2", "null", "stress", "positivity-zero-support"] {
        let path = scenarios().join(format!("{name}.scenario.json"));
        let o = lbp(&["validate", "--scenario", path.to_str().unwrap()]);
        assert_eq!(
            code(&o),
            0,
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(String::from_utf8_lossy(&o.stdout).contains(": ok"));
    }
}

#[test]
fn invalid_model_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_null(dir.path(), None);
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["scm"]["birth"][0]["coef"]["X9"] = json!(1.0);
    std::fs::write(&path, v.to_string()).unwrap();
    let o = lbp(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("X9"));
    assert_eq!(code(&run(&path, dir.path(), &[])), 1);
}

#[test]
fn malformed_json_exits_one_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.scenario.json");
    std::fs::write(&path, "{\n  \"schema_version\": 1,\n  \"name\": }").unwrap();
    let o = lbp(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn undefined_estimand_exits_two_and_still_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let e = json!([
        {"kind": "cte"},
        {"kind": "csde", "policy": {"source": "hazards", "death": [0.1, 0.1], "birth": [0.0, 0.0]}}
    ]);
    let path = small_null(dir.path(), Some(e));
    let out = dir.path().join("out");
    let o = run(&path, &out, &[]);
    assert_eq!(code(&o), 2);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("null.report.json")).unwrap())
            .unwrap();
    assert_eq!(report["results"][0]["status"], "ok");
    assert_eq!(report["results"][1]["error"]["kind"], "undefined_estimand");
}

#[test]
fn io_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.scenario.json");
    assert_eq!(
        code(&lbp(&["validate", "--scenario", missing.to_str().unwrap()])),
        3
    );
    let path = small_null(dir.path(), Some(json!([{"kind": "cte"}])));
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    assert_eq!(code(&run(&path, &blocker, &[])), 3);
}

#[test]
fn formats_select_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_null(dir.path(), Some(json!([{"kind": "cte"}, {"kind": "cde"}])));
    for (format, files) in [
        ("json", vec!["null.report.json"]),
        ("csv", vec!["null.summary.csv"]),
        ("both", vec!["null.report.json", "null.summary.csv"]),
    ] {
        let out = dir.path().join(format);
        assert_eq!(code(&run(&path, &out, &["--format", format])), 0);
        let mut found: Vec<String> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        found.sort();
        assert_eq!(found, files);
    }
    let csv = std::fs::read_to_string(dir.path().join("csv/null.summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn output_is_identical_across_threads_and_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_null(dir.path(), None);
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "2", "2"].iter().enumerate() {
        let out = dir.path().join(format!("r{i}"));
        let o = run(&path, &out, &["--threads", threads, "--format", "both"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push((
            std::fs::read(out.join("null.report.json")).unwrap(),
            std::fs::read(out.join("null.summary.csv")).unwrap(),
        ));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn seed_flag_overrides_scenario_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_null(dir.path(), Some(json!([{"kind": "cte"}])));
    let read = |sub: &str| -> Value {
        serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(sub).join("null.report.json")).unwrap(),
        )
        .unwrap()
    };
    run(&path, &dir.path().join("a"), &["--seed", "5"]);
    run(&path, &dir.path().join("b"), &["--seed", "6"]);
    let (a, b) = (read("a"), read("b"));
    assert_eq!(a["provenance"]["seed"], 5);
    // Null model with paired arms: the contrast is exactly zero, the arms are not.
    let arm1 = |r: &Value| r["results"][0]["report"]["arm1"]["denominator"].clone();
    assert_ne!(arm1(&a), arm1(&b));
}

#[test]
fn oracle_writes_sidecar_next_to_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenarios().join("toy2.scenario.json");
    let o = lbp(&[
        "oracle",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let written = std::fs::read_to_string(dir.path().join("toy2.oracle.json")).unwrap();
    assert_eq!(
        written,
        std::fs::read_to_string(scenarios().join("toy2.oracle.json")).unwrap()
    );
    let stress = scenarios().join("stress.scenario.json");
    assert_eq!(
        code(&lbp(&[
            "oracle",
            "--scenario",
            stress.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap()
        ])),
        1
    );
}

#[test]
fn diagnose_reports_planted_violation() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenarios().join("positivity-zero-support.scenario.json");
    let o = lbp(&[
        "diagnose",
        "--scenario",
        path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let text =
        std::fs::read_to_string(dir.path().join("positivity-zero-support.report.json")).unwrap();
    let report: Value = serde_json::from_str(&text).unwrap();
    let flagged = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .filter_map(|r| r["positivity"]["flagged"].as_array())
        .flatten()
        .any(|f| f["stratum"] == "l0.w=1" && f["t"] == 1 && f["probability"] == 0.0);
    assert!(flagged);
}

#[test]
fn zero_threads_is_rejected() {
    let path = scenarios().join("null.scenario.json");
    assert_eq!(
        code(&lbp(&[
            "validate",
            "--scenario",
            path.to_str().unwrap(),
            "--threads",
            "0"
        ])),
        1
    );
}
