use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn config() -> PathBuf {
    root().join("configs").join("defender.toml")
}

fn kqlforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kqlforge"))
        .args(args)
        .env_remove("KQLFORGE_API_KEY")
        .env_remove("KQLFORGE_EMBED_KEY")
        .output()
        .expect("binary runs")
}

fn with_config<'a>(args: &[&'a str], cfg: &'a str) -> Vec<&'a str> {
    let mut v = vec!["--config", cfg];
    v.extend_from_slice(args);
    v
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

#[test]
fn eval_with_replay_writes_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let cfg = cfg.to_str().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let o = kqlforge(&with_config(&["eval", "--out", out.to_str().unwrap()], cfg));
        assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
        assert!(text(&o.stdout).starts_with("Configuration"));
        assert!(out.join("report.txt").exists());
        reports.push(std::fs::read_to_string(out.join("report.json")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    let report: serde_json::Value = serde_json::from_str(&reports[0]).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 20);
    for key in [
        "syntax",
        "semantic",
        "table",
        "filter_col",
        "filter_lit",
        "mean_latency_s",
        "total_cost_usd",
    ] {
        assert!(report["summary"][key].is_number(), "{key}");
    }
    assert!(report["taxonomy"]["syntax"].is_object());
}

#[test]
fn translate_prints_kql_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let cfg = config();
    let o = kqlforge(&with_config(
        &[
            "--backend",
            "mock",
            "--mode",
            "two_stage",
            "translate",
            "--nlq",
            "Count failed logons per account on devices over the last day.",
            "--trace",
            trace.to_str().unwrap(),
        ],
        cfg.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let kql = text(&o.stdout);
    assert!(!kql.trim().is_empty());
    let t: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&trace).unwrap()).unwrap();
    assert_eq!(t["mode"], "two_stage");
    assert_eq!(t["refined_query"].as_str().unwrap(), kql.trim_end());
}

#[test]
fn replay_miss_exits_1_with_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.json");
    let cfg = config();
    let o = kqlforge(&with_config(
        &[
            "translate",
            "--nlq",
            "a request nobody recorded",
            "--trace",
            trace.to_str().unwrap(),
        ],
        cfg.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(1));
    let err = text(&o.stderr);
    assert!(
        err.contains("unrecorded request") && err.contains("prompt_sha256="),
        "{err}"
    );
    assert!(trace.exists(), "partial trace is kept");
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(kqlforge(&["--no-such-flag", "eval"]).status.code(), Some(2));
    assert_eq!(kqlforge(&["frobnicate"]).status.code(), Some(2));
    let cfg = config();
    let cfg = cfg.to_str().unwrap();
    for bad in [
        vec!["--mode", "three_stage", "eval"],
        vec!["--oracle", "psychic", "eval"],
        vec!["--t", "40", "eval"],
        vec!["--n-candidates", "0", "eval"],
        vec!["sweep", "--knob", "x=1"],
    ] {
        let o = kqlforge(&with_config(&bad, cfg));
        assert_eq!(o.status.code(), Some(2), "{bad:?}: {}", text(&o.stderr));
    }
    let o = kqlforge(&["eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("--schema"));
    assert_eq!(kqlforge(&["--help"]).status.code(), Some(0));
}

#[test]
fn table_sweep_writes_one_report_per_point_and_an_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let cfg = config();
    let o = kqlforge(&with_config(
        &[
            "sweep",
            "--knob",
            "t=1,3,5,7,9",
            "--out",
            out.to_str().unwrap(),
        ],
        cfg.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    for t in [1, 3, 5, 7, 9] {
        assert!(out.join(format!("Top-{t}.json")).exists(), "Top-{t}");
    }
    let index: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("index.json")).unwrap()).unwrap();
    let tags: Vec<&str> = index
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["tag"].as_str().unwrap())
        .collect();
    assert_eq!(tags, ["Top-1", "Top-3", "Top-5", "Top-7", "Top-9"]);
}

#[test]
fn build_catalog_writes_three_stores() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let o = kqlforge(&with_config(
        &["build-catalog", "--out", dir.path().to_str().unwrap()],
        cfg.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    for f in ["tables.ejsonl", "values.ejsonl", "fsdb.ejsonl"] {
        assert!(
            std::fs::metadata(dir.path().join(f)).unwrap().len() > 0,
            "{f}"
        );
    }
    // a saved catalog is picked up instead of rebuilding
    let o = kqlforge(&with_config(
        &[
            "--catalog",
            dir.path().to_str().unwrap(),
            "eval",
            "--out",
            dir.path().join("r").to_str().unwrap(),
        ],
        cfg.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
}

#[test]
fn fsdb_gen_keeps_valid_pairs_and_logs_discards() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fsdb.jsonl");
    let cfg = config();
    let o = kqlforge(&with_config(
        &[
            "--backend",
            "mock",
            "--seed",
            "3",
            "fsdb-gen",
            "--pairs-per-theme",
            "4",
            "--split",
            "0.75",
            "--out",
            out.to_str().unwrap(),
        ],
        cfg.to_str().unwrap(),
    ));
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let kept = std::fs::read_to_string(&out).unwrap().lines().count();
    assert!(kept > 0);
    assert!(dir.path().join("fsdb.discarded.jsonl").exists());
    let train = std::fs::read_to_string(dir.path().join("fsdb.train.jsonl"))
        .unwrap()
        .lines()
        .count();
    let validation = std::fs::read_to_string(dir.path().join("fsdb.validation.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(train + validation, kept);
}

#[test]
fn taxonomy_prints_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("diags.jsonl");
    std::fs::write(
        &input,
        concat!(
            r#"{"severity":"syntax","message":"Expected: )","category":"Expected: )","span":[0,1]}"#,
            "\n",
            r#"{"diagnostics":[{"severity":"semantic","message":"The name 'X' does not refer to any known column, table, variable or function.","category":"The name '<X>' does not refer to any known column, table, variable or function.","span":[0,1]}]}"#,
            "\n"
        ),
    )
    .unwrap();
    let o = kqlforge(&["taxonomy", input.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(
        out.contains("syntax (1)") && out.contains("semantic (1)"),
        "{out}"
    );
    let o = kqlforge(&["taxonomy", "--json", input.to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(
        v["semantic"].as_object().unwrap().values().next().unwrap(),
        1
    );
}
