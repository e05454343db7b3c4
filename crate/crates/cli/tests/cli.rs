use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn uppkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uppkit"))
        .args(args)
        .env("UPPKIT_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("valid JSON on stdout")
}

fn staples() -> String {
    fixture("staples_od.json").display().to_string()
}

#[test]
fn guppi_table_shows_percentages() {
    let o = uppkit(&["guppi", &staples(), "--naive", "--quiet"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let sp = text.lines().find(|l| l.starts_with("SP")).unwrap();
    let od = text.lines().find(|l| l.starts_with("OD")).unwrap();
    assert!(sp.contains("10.4%") && sp.contains("14.0%"), "{sp}");
    assert!(od.contains("13.7%") && od.contains("17.8%"), "{od}");
}

#[test]
fn guppi_json_carries_fractions_and_manifest() {
    let o = uppkit(&["guppi", &staples(), "--format", "json"]);
    assert!(o.status.success());
    let doc = json(&o);
    let g = doc["result"]["products"][0]["guppi"].as_f64().unwrap();
    assert!((g - 0.104).abs() < 1e-3);
    let m = &doc["manifest"];
    assert_eq!(m["command"], "guppi");
    assert_eq!(m["schema_version"], "1");
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["inputs"][0].as_str().unwrap().ends_with("staples_od.json"));
}

#[test]
fn zero_diversion_gives_zero_guppi() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"{"products": [
              {"id": "a", "firm": "A", "revenue": 100, "margin": 0.3},
              {"id": "b", "firm": "B", "revenue": 80, "margin": 0.4}],
            "diversion": {"order": ["a", "b", "OUTSIDE"],
                          "matrix": [[-1, 0, 0.5], [0, -1, 0.5], [null, null, -1]]},
            "merger": {"firm_a": "A", "firm_b": "B"}}"#,
    )
    .unwrap();
    let o = uppkit(&["guppi", path.to_str().unwrap(), "--efficiency", "0", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for p in json(&o)["result"]["products"].as_array().unwrap() {
        assert_eq!(p["guppi"].as_f64().unwrap(), 0.0);
    }
}

#[test]
fn simulate_reports_price_changes() {
    let o = uppkit(&["simulate", &staples(), "--quiet"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("SP") && l.contains("14.3%")), "{text}");
    assert!(text.lines().any(|l| l.starts_with("OD") && l.contains("18.0%")), "{text}");
}

#[test]
fn passthrough_matrix_entries() {
    let o = uppkit(&["passthrough", &staples(), "--format", "json"]);
    assert!(o.status.success());
    let m = &json(&o)["result"]["passthrough"]["matrix"];
    let expected = [[1.005, 0.345], [0.347, 1.098]];
    for (r, row) in expected.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            let got = m[r][c].as_f64().unwrap();
            assert!((got - want).abs() < 5e-3, "M[{r}][{c}] = {got}");
        }
    }
}

#[test]
fn harness_is_deterministic() {
    let run = || stdout(&uppkit(&["harness", "--model", "ces", "--n", "12", "--seed", "7", "--format", "csv", "--quiet"]));
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert!(a.starts_with("trial_id,model,n_products,product_id,guppi,predicted_pdd,true_pdd,cmcr"));
    let other = stdout(&uppkit(&["harness", "--n", "12", "--seed", "8", "--format", "csv", "--quiet"]));
    assert_ne!(a, other);
}

#[test]
fn json_output_is_reproducible_apart_from_timestamp() {
    let run = || {
        let mut doc = json(&uppkit(&["welfare", &staples(), "--passthrough", "ces", "--format", "json"]));
        doc["manifest"]["timestamp"] = Value::Null;
        doc
    };
    assert_eq!(run(), run());
}

#[test]
fn out_writes_sidecar_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cmcr.csv");
    let o = uppkit(&["cmcr", &staples(), "--format", "csv", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let body = std::fs::read_to_string(&out).unwrap();
    assert!(body.starts_with("product,firm,margin,post margin,CMCR"));
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("cmcr.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "cmcr");
}

#[test]
fn validation_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"products": [
              {"id": "a", "firm": "A", "revenue": 100, "margin": 1.3},
              {"id": "b", "firm": "B", "revenue": -5, "margin": 0.4}]}"#,
    )
    .unwrap();
    let o = uppkit(&["validate", path.to_str().unwrap(), "--quiet"]);
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text.contains("margin outside (0, 1)") && text.contains("negative revenue"), "{text}");

    let o = uppkit(&["guppi", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("validation error"));
}

#[test]
fn validate_accepts_good_file() {
    let o = uppkit(&["validate", &staples(), "--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("no violations"));
}

#[test]
fn missing_file_exits_4() {
    let o = uppkit(&["guppi", "/nonexistent/market.json"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn unknown_merging_firm_exits_2() {
    let o = uppkit(&["guppi", &staples(), "--merge", "Staples,Nobody"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn second_choice_matches_marginal_for_one_consumer() {
    let economy = fixture("staples_od_economy.json").display().to_string();
    let o = uppkit(&["second-choice", &economy, "--remove", "SP", "--format", "json"]);
    assert!(o.status.success());
    for row in json(&o)["result"]["diversion"].as_array().unwrap() {
        let (s, m) = (row["second_choice"].as_f64().unwrap(), row["marginal"].as_f64().unwrap());
        assert!((s - m).abs() < 1e-12);
    }
}

#[test]
fn synthetic_fit_recovers_parameters() {
    let o = uppkit(&["fit", "--synthetic", "--format", "json"]);
    assert!(o.status.success());
    let doc = json(&o);
    assert!((doc["result"]["fit"]["mu"].as_f64().unwrap() - 0.46).abs() < 1e-4);
    assert_eq!(doc["manifest"]["seed"], 2024);
}
