use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = r#"
[dataset]
sbm = { blocks = 2, block_size = 15, p_in = 0.4, p_out = 0.03, feature_dim = 6, seed = 1 }

[views]
k_nn = 4
k_clusters = 5

[encoder]
d_model = 8
d_hid = 8

[trainer]
epochs_max = 15
patience = 5
seeds = [0, 1]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hypergcl"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name);
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Checks the keywords used by the shipped schemas.
fn validate(v: &Value, s: &Value, root: &Value, at: &str) -> Vec<String> {
    let mut errs = Vec::new();
    if let Some(r) = s.get("$ref").and_then(Value::as_str) {
        let key = r.strip_prefix("#/$defs/").expect("local refs only");
        return validate(v, &root["$defs"][key], root, at);
    }
    if let Some(t) = s.get("type") {
        let types: Vec<&str> = match t {
            Value::String(t) => vec![t.as_str()],
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).collect(),
            _ => panic!("bad type keyword"),
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            "boolean" => v.is_boolean(),
            "null" => v.is_null(),
            other => panic!("unsupported type {other}"),
        });
        if !ok {
            errs.push(format!("{at}: expected {types:?}, got {v}"));
            return errs;
        }
    }
    if let Some(c) = s.get("const") {
        if v != c {
            errs.push(format!("{at}: expected {c}"));
        }
    }
    if let (Some(min), Some(x)) = (s.get("minimum").and_then(Value::as_f64), v.as_f64()) {
        if x < min {
            errs.push(format!("{at}: {x} < {min}"));
        }
    }
    if let (Some(max), Some(x)) = (s.get("maximum").and_then(Value::as_f64), v.as_f64()) {
        if x > max {
            errs.push(format!("{at}: {x} > {max}"));
        }
    }
    if let Some(p) = s.get("pattern").and_then(Value::as_str) {
        assert_eq!(p, "^[0-9a-f]{64}$", "unsupported pattern");
        let text = v.as_str().unwrap_or_default();
        if text.len() != 64 || !text.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            errs.push(format!("{at}: not a sha256 hex digest"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in s.get("required").and_then(Value::as_array).into_iter().flatten() {
            if !obj.contains_key(key.as_str().unwrap()) {
                errs.push(format!("{at}: missing {key}"));
            }
        }
        let props = s.get("properties").and_then(Value::as_object);
        for (k, child) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(ps) => errs.extend(validate(child, ps, root, &format!("{at}.{k}"))),
                None if s.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    errs.push(format!("{at}: unexpected key {k}"))
                }
                None => {}
            }
        }
    }
    if let Some(arr) = v.as_array() {
        if let Some(min) = s.get("minItems").and_then(Value::as_u64) {
            if (arr.len() as u64) < min {
                errs.push(format!("{at}: fewer than {min} items"));
            }
        }
        if let Some(items) = s.get("items") {
            for (i, x) in arr.iter().enumerate() {
                errs.extend(validate(x, items, root, &format!("{at}[{i}]")));
            }
        }
    }
    errs
}

fn assert_valid(file: &Path, schema_name: &str) {
    let v: Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    let s = schema(schema_name);
    let errs = validate(&v, &s, &s, "$");
    assert!(errs.is_empty(), "{}: {errs:?}", file.display());
}

fn assert_csv_matches(file: &Path) {
    let tables = schema("csv_tables.json");
    let name = file.file_name().unwrap().to_str().unwrap();
    let columns: Vec<(String, String)> = serde_json::from_value(tables[name].clone()).expect("table described");
    let mut r = csv::Reader::from_path(file).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, columns.iter().map(|c| c.0.clone()).collect::<Vec<_>>(), "{name} header");
    for rec in r.records() {
        let rec = rec.unwrap();
        for (field, (col, ty)) in rec.iter().zip(&columns) {
            let ok = match ty.as_str() {
                "integer" => field.parse::<u64>().is_ok(),
                "number" => field.parse::<f64>().is_ok(),
                "boolean" => field.parse::<bool>().is_ok(),
                _ => true,
            };
            assert!(ok, "{name}.{col}: {field:?} is not {ty}");
        }
    }
}

#[test]
fn verify_reports_every_registered_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv_path = dir.path().join("verify.csv");
    assert_csv_matches(&csv_path);
    let rows = csv::Reader::from_path(&csv_path).unwrap().records().count();
    assert_eq!(rows, hypergcl::verify::registered_cases().len());
}

#[test]
fn build_views_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut hashes = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let out = run(&["build-views", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        assert_valid(&out_dir.join("manifest.json"), "manifest.schema.json");
        let m: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(m["views"]["local"]["hyperedges"], m["num_nodes"]);
        assert_eq!(m["views"]["attribute"]["hyperedges"].as_u64(), Some(30 + 5));
        let global = fs::read_to_string(out_dir.join("global.hg")).unwrap();
        assert!(global.starts_with("#view=global"));
        hashes.push(m["manifest_hash"].clone());
    }
    assert_eq!(hashes[0], hashes[1]);
}

#[test]
fn train_writes_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--seed-list",
        "3",
        "--strategy",
        "similarity",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("HyperGCL_sim"), "{text}");
    assert!(text.trim_end().ends_with("±0.00"), "{text}");
    assert_valid(&out_dir.join("result.json"), "run_result.schema.json");
    assert_valid(&out_dir.join("checkpoint.json"), "checkpoint.schema.json");
    assert_csv_matches(&out_dir.join("curves.csv"));
    let ckpt = hypergcl::params::Checkpoint::read(out_dir.join("checkpoint.json")).unwrap();
    let result: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("result.json")).unwrap()).unwrap();
    assert_eq!(result["config_hash"].as_str(), Some(ckpt.config_hash.as_str()));
    assert_eq!(result["seeds"], serde_json::json!([3]));
}

#[test]
fn ablate_rows_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = run(&["ablate", "--config", cfg.to_str().unwrap(), "--component", "bogus"]);
    assert_eq!(code(&out), 1);

    let out_dir = dir.path().join("abl");
    let args = ["ablate", "--config", cfg.to_str().unwrap(), "--seed-list", "0", "--out-dir", out_dir.to_str().unwrap()];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_csv_matches(&out_dir.join("ablation.csv"));
    assert_eq!(csv::Reader::from_path(out_dir.join("ablation.csv")).unwrap().records().count(), 1);

    let out = run(&[&args[..], &["--component", "lc,netcl"]].concat());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Vec<Value> = serde_json::from_str(&fs::read_to_string(out_dir.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 3);
    let s = schema("run_result.schema.json");
    for row in &rows {
        assert!(validate(row, &s, &s, "$").is_empty());
    }
    assert_eq!(rows[1]["label"], "w/o lc");
}

#[test]
fn sweep_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--ng-range",
        "1..2",
        "--seed-list",
        "0",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv_path = out_dir.join("sweep.csv");
    assert_csv_matches(&csv_path);
    let means: Vec<f64> = csv::Reader::from_path(&csv_path)
        .unwrap()
        .records()
        .map(|r| r.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(means.len(), 2);
    let printed: Vec<String> = stdout(&out).lines().map(String::from).collect();
    for (m, line) in means.iter().zip(&printed) {
        assert!(line.contains(&format!("{m:.2}±")), "{line} vs {m}");
    }
    assert!(fs::read_to_string(out_dir.join("sweep.svg")).unwrap().starts_with("<svg"));

    let single = dir.path().join("single");
    let out = run(&["sweep", "--config", cfg.to_str().unwrap(), "--ng-range", "3", "--seed-list", "0", "--out-dir", single.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(csv::Reader::from_path(single.join("sweep.csv")).unwrap().records().count(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "[dataset]\nsbm = {}\n[trainer]\nlearning_rate = 0.1\n");
    assert_eq!(code(&run(&["train", "--config", bad.to_str().unwrap()])), 1);
    assert_eq!(code(&run(&["train"])), 1);
    assert_eq!(code(&run(&["fetch-data", "pubmed"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);

    let diverging = write_config(
        dir.path(),
        "[dataset]\nsbm = { block_size = 10 }\n[views]\nk_nn = 5\nk_clusters = 4\n[trainer]\nlr = 1e300\nseeds = [0]\nepochs_max = 5\n",
    );
    let out_dir = dir.path().join("nan");
    let out = run(&["train", "--config", diverging.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn data_dir_env_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let ds = hypergcl::data::synthetic_sbm(&hypergcl::data::SbmConfig {
        block_size: 12,
        ..Default::default()
    })
    .unwrap();
    ds.write_dir(dir.path().join("toy")).unwrap();
    let cfg = write_config(dir.path(), "[dataset]\npath = \"toy\"\n[views]\nk_nn = 5\nk_clusters = 4\n");
    let out = bin()
        .env("HYPERGCL_DATA_DIR", dir.path())
        .args(["build-views", "--config", cfg.to_str().unwrap(), "--out-dir", dir.path().join("v").to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("#N=24 #E^a=28 #E^l=24"), "{}", stdout(&out));
}
