use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");

fn fixture(name: &str) -> PathBuf {
    Path::new(FIXTURES).join(name)
}

fn synthmask(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_synthmask"))
        .args(args)
        .current_dir(dir)
        .env_remove("SYNTHMASK_BACKEND_URL")
        .output()
        .unwrap()
}

fn with_corpus<'a>(args: &[&'a str], letters: &'a str, annotations: &'a str) -> Vec<&'a str> {
    let mut v = vec!["--letters", letters, "--annotations", annotations, "--backend", "mock-dictionary"];
    v.extend_from_slice(args);
    v
}

struct Fixture {
    dir: tempfile::TempDir,
    letters: String,
    annotations: String,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
            letters: fixture("letters.csv").display().to_string(),
            annotations: fixture("annotations.csv").display().to_string(),
        }
    }

    fn run(&self, args: &[&str]) -> Output {
        synthmask(self.dir.path(), &with_corpus(args, &self.letters, &self.annotations))
    }

    fn out(&self, file: &str) -> PathBuf {
        self.dir.path().join("out").join(file)
    }

    fn manifest(&self) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.out("run_manifest.json")).unwrap()).unwrap()
    }
}

fn ok(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn error_json(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap();
    let v: Value = serde_json::from_str(last).unwrap();
    assert_eq!(v["exit_code"], code);
    v
}

#[test]
fn ingest_reports_the_orphan_and_writes_a_manifest() {
    let f = Fixture::new();
    let report = ok(&f.run(&["ingest", "--feature-dump"]));
    assert_eq!(report["letters"], 20);
    assert_eq!(report["orphans"].as_array().unwrap().len(), 1);
    let m = f.manifest();
    assert_eq!(m["command"], "ingest");
    assert!(m["artifacts"]["ingest_report.json"].is_string());
    assert!(m["artifacts"]["features.jsonl"].is_string());
    let features = std::fs::read_to_string(f.out("features.jsonl")).unwrap();
    let first: Value = serde_json::from_str(features.lines().next().unwrap()).unwrap();
    assert!(first["flags"].is_object());
}

#[test]
fn generate_evaluate_postprocess_ner() {
    let f = Fixture::new();
    ok(&f.run(&["--strategy", "random:0.5", "--seed", "3", "generate"]));
    for file in ["synthetic_letters.csv", "masked_letters.csv", "generation_report.jsonl"] {
        assert!(f.out(file).exists(), "{file}");
    }
    let rows = std::fs::read_to_string(f.out("generation_report.jsonl")).unwrap();
    assert_eq!(rows.lines().count(), 20);
    let row: Value = serde_json::from_str(rows.lines().next().unwrap()).unwrap();
    assert_eq!(row["strategy"], "random:0.5");
    assert_eq!(f.manifest()["seeds"]["generation"], 3);

    let aggregate = ok(&f.run(&["evaluate", "--no-perplexity"]));
    assert!(aggregate["syn_rouge1_f1"].as_f64().unwrap() >= aggregate["base_rouge1_f1"].as_f64().unwrap());
    assert!(aggregate["syn_perplexity"].is_null());
    assert!(f.out("evaluation_report.csv").exists());

    let post = ok(&f.run(&["postprocess"]));
    assert!(post.is_object());
    assert!(f.out("postprocessed_letters.csv").exists());
    let report = std::fs::read_to_string(f.out("postprocess_report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 20);

    let ner = ok(&f.run(&["ner-eval", "--synthetic", f.out("synthetic_letters.csv").to_str().unwrap()]));
    assert!(ner["delta_f1"].is_number());
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(f.out("ner_report.json")).unwrap()).unwrap();
    assert_eq!(saved["test_ids"].as_array().unwrap().len(), 4);
}

#[test]
fn sweep_rows_come_out_in_ratio_order() {
    let f = Fixture::new();
    ok(&f.run(&["evaluate", "--sweep", "random:0.0..1.0:0.5", "--no-bertscore", "--no-perplexity"]));
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(f.out("evaluation_summary.json")).unwrap()).unwrap();
    let rows = summary["rows"].as_array().unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r["requested_ratio"].as_f64().unwrap()).collect();
    assert_eq!(ratios, vec![0.0, 0.5, 1.0]);
    let base: Vec<f64> = rows
        .iter()
        .map(|r| r["aggregate"]["base_rouge1_f1"].as_f64().unwrap())
        .collect();
    assert!(base[0] > base[1] && base[1] > base[2], "{base:?}");
}

#[test]
fn chunk_tune_picks_a_value() {
    let f = Fixture::new();
    let out = ok(&f.run(&["chunk-tune"]));
    assert!(out["chosen_max_lines"].as_u64().unwrap() >= 1);
    assert!(f.out("chunk_tuning.json").exists());
    assert!(f.out("chunks.jsonl").exists());
}

#[test]
fn validation_errors_exit_2() {
    let f = Fixture::new();
    let bad = error_json(&f.run(&["--strategy", "random:1.5", "generate"]), 2);
    assert_eq!(bad["error"], "invalid_argument");

    error_json(&f.run(&["--jobs", "0", "generate"]), 2);
    error_json(&f.run(&["--max-tokens", "0", "generate"]), 2);

    let config = f.dir.path().join("bad.toml");
    std::fs::write(&config, "[generation]\nstratgy = \"random:0.4\"\n").unwrap();
    error_json(&synthmask(f.dir.path(), &["--config", config.to_str().unwrap(), "generate"]), 2);

    let missing = error_json(&synthmask(f.dir.path(), &["--letters", "nope.csv", "ingest"]), 2);
    assert!(missing["message"].as_str().unwrap().contains("nope.csv"));

    error_json(&synthmask(f.dir.path(), &["--backend", "remote", "backend-check"]), 2);
}

fn dead_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", l.local_addr().unwrap());
    drop(l);
    url
}

/// Answers `count` requests with the same capabilities document.
fn capabilities_server(count: usize) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming().take(count) {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            let json = r#"{"model_name":"tiny","max_input_tokens":32,"embedding_dim":4,"layers":[]}"#;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{json}",
                json.len()
            )
            .unwrap();
        }
    });
    url
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let url = dead_url();
    let out = synthmask(dir.path(), &["--backend", "remote", "--backend-url", &url, "backend-check"]);
    assert_eq!(error_json(&out, 3)["error"], "transport");

    let out = Command::new(env!("CARGO_BIN_EXE_synthmask"))
        .args(["--backend", "remote", "backend-check"])
        .env("SYNTHMASK_BACKEND_URL", &url)
        .current_dir(dir.path())
        .output()
        .unwrap();
    error_json(&out, 3);
}

#[test]
fn flag_url_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let live = capabilities_server(2);
    let out = Command::new(env!("CARGO_BIN_EXE_synthmask"))
        .args(["--backend", "remote", "--backend-url", &live, "backend-check"])
        .env("SYNTHMASK_BACKEND_URL", dead_url())
        .current_dir(dir.path())
        .output()
        .unwrap();
    let v = ok(&out);
    assert_eq!(v["descriptor"]["model_name"], "tiny");
    assert_eq!(v["descriptor"]["base_url"], live.as_str());
    assert_eq!(v["capabilities"]["max_input_tokens"], 32);
}

#[test]
fn environment_beats_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let live = capabilities_server(2);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, format!("[backend]\nkind = \"remote\"\nurl = \"{}\"\n", dead_url())).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_synthmask"))
        .args(["--config", config.to_str().unwrap(), "backend-check"])
        .env("SYNTHMASK_BACKEND_URL", &live)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(ok(&out)["descriptor"]["base_url"], live.as_str());
}

#[test]
fn mock_backend_check_needs_no_files() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(&synthmask(dir.path(), &["--backend", "mock-echo", "backend-check"]));
    assert_eq!(v["descriptor"]["kind"], "mock-echo");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn served_model_must_match_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let live = capabilities_server(1);
    let config = dir.path().join("c.toml");
    std::fs::write(&config, format!("[backend]\nkind = \"remote\"\nurl = \"{live}\"\nmodel = \"other\"\n")).unwrap();
    let out = synthmask(dir.path(), &["--config", config.to_str().unwrap(), "backend-check"]);
    assert_eq!(error_json(&out, 3)["error"], "protocol");
}
