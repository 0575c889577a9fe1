use std::fs;
use std::path::{Path, PathBuf};

use montecheck::cli::{main_with_args, SUMMARY_HEADER};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let mut args = vec![
        "montecheck".to_string(),
        cmd.to_string(),
        "--config".into(),
        config.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    main_with_args(args)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn exit_codes_from_fixtures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run("detect", &fixture("exit1_unknown_key.toml"), &out, &[]), 1);
    assert_eq!(run("detect", &fixture("exit2_power_bias.toml"), &out, &[]), 2);
    assert_eq!(run("detect", &fixture("exit3_breach.toml"), &out, &[]), 3);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(main_with_args(["montecheck"]), 1);
    assert_eq!(main_with_args(["montecheck", "frobnicate"]), 1);
    assert_eq!(main_with_args(["montecheck", "detect", "--config", "/nonexistent.toml"]), 1);
}

#[test]
fn ab_test_flags_power_bias_and_not_ideal() {
    let tmp = tempfile::tempdir().unwrap();
    let biased = write_config(
        tmp.path(),
        "[experiment]\nseeds = [3]\nab_samples = 20000\n[fault]\nkind = \"power_bias\"\ngamma = 2.0\n\
         [transform]\nnames = [\"reflect\", \"rotate_half,reflect\"]\n",
    );
    assert_eq!(run("ab-test", &biased, &tmp.path().join("a"), &[]), 2);
    let ideal = write_config(
        tmp.path(),
        "[experiment]\nseeds = [3]\nab_samples = 20000\n[transform]\nnames = [\"reflect\"]\n",
    );
    assert_eq!(run("ab-test", &ideal, &tmp.path().join("b"), &[]), 0);
    let missing = write_config(tmp.path(), "[experiment]\nseeds = [3]\n");
    assert_eq!(run("ab-test", &missing, &tmp.path().join("c"), &[]), 1);
}

#[test]
fn fix_demo_repairs_low_thinning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[experiment]\nseeds = [5]\n[fault]\nkind = \"low_thinning\"\nc = 0.5\nq = 1.0\n[fix]\na = 0.5\nb = 1.0\n",
    );
    let out = tmp.path().join("fix");
    assert_eq!(run("fix-demo", &cfg, &out, &[]), 0);
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let fix = &doc["result"]["fix"][0]["fix"];
    assert!(fix["before"]["ks_uniform"]["p_value"].as_f64().unwrap() < 1e-6);
    assert_eq!(fix["after"]["verdict"]["outcome"], "consistent");
}

#[test]
fn calibrate_ignores_fault_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[experiment]\nseed_count = 3\nhorizon = 100.0\n[fault]\nkind = \"power_bias\"\ngamma = 2.0\n\
         [parallel]\nworkers = [2]\nmappings = [\"round-robin\"]\n",
    );
    let out = tmp.path().join("cal");
    assert_eq!(run("calibrate", &cfg, &out, &[]), 0);
    let doc: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(doc["result"]["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(doc["result"]["experiment"]["plan"]["fault"]["kind"], "ideal");
}

#[test]
fn report_bundle_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bundle");
    assert_eq!(run("detect", &fixture("exit2_power_bias.toml"), &out, &[]), 2);

    let text = fs::read_to_string(out.join("report.json")).unwrap();
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["command"], "detect");
    assert_eq!(doc["exit_code"], 2);
    assert!(doc["generated_unix"].is_u64());
    let keys: Vec<&String> = doc.as_object().unwrap().keys().collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let mut reader = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, SUMMARY_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert!(!rows.is_empty());

    // every p-value in the CSV appears verbatim in the JSON evidence
    let pairings = doc["result"]["experiment"]["seeds"][0]["pairings"].as_array().unwrap();
    let json_ps: Vec<String> = pairings
        .iter()
        .flat_map(|p| p["verdict"]["evidence"].as_array().unwrap().iter())
        .map(|e| e["p_value"].to_string())
        .collect();
    for row in &rows {
        assert!(json_ps.contains(&row[3].to_string()), "p {} missing from JSON", &row[3]);
    }

    let events = fs::read_dir(out.join("events")).unwrap().count();
    assert_eq!(events, 2, "one serial and one parallel run");
    let first = fs::read_dir(out.join("events")).unwrap().next().unwrap().unwrap().path();
    let body = fs::read_to_string(first).unwrap();
    assert!(body.starts_with("time,mark,draw_index\n"));
}

#[test]
fn seed_override_and_repeatability() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture("exit2_power_bias.toml");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run("detect", &cfg, &a, &["--seed-override", "99"]);
    run("detect", &cfg, &b, &["--seed-override", "99"]);
    let strip = |p: &Path| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(p.join("report.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("generated_unix");
        v
    };
    let doc = strip(&a);
    assert_eq!(doc, strip(&b));
    assert_eq!(doc["result"]["experiment"]["plan"]["seeds"], serde_json::json!([99]));
}

#[test]
fn binary_reports_exit_code() {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_montecheck"))
        .args(["detect", "--config"])
        .arg(fixture("exit1_unknown_key.toml"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&status.stderr);
    assert!(stderr.contains("alhpa"), "{stderr}");
}
