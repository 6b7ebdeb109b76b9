use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bootnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bootnet")).args(args).output().expect("binary runs")
}

fn scenario(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn scratch(name: &str, body: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bootnet-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).expect("scratch dir");
    let path = dir.join(name);
    std::fs::write(&path, body).expect("scratch file");
    path
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("structured output is json")
}

#[test]
fn connected_run_exits_zero() {
    let out = bootnet(&[&scenario("paper-5nat.toml"), "--format", "structured"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["outcome"], "connected");
    assert_eq!(v["bootstrap"]["peers"].as_array().map(Vec::len), Some(5));
}

#[test]
fn short_time_limit_times_out() {
    let out = bootnet(&[&scenario("paper-5nat.toml"), "--max-virtual-time", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("timeout"));
}

#[test]
fn parse_errors_name_the_line() {
    let path = scratch("bad-variant.toml", "schema = 1\nname = \"x\"\n\n[[peers]]\nnat = \"bogus\"\n");
    let out = bootnet(&[path.to_str().expect("utf-8 path")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(&format!("{}:5:", path.display())), "{err}");
}

#[test]
fn validation_errors_name_the_line() {
    let body = "schema = 1\nname = \"x\"\n\n[[peers]]\nnat = \"symmetric\"\n\n[[peers]]\nnat = \"full-cone\"\ncount = 0\n";
    let path = scratch("bad-count.toml", body);
    let out = bootnet(&[path.to_str().expect("utf-8 path")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":9: count must be at least 1"));

    let path = scratch("bad-schema.toml", "schema = 2\nname = \"x\"\n");
    let out = bootnet(&[path.to_str().expect("utf-8 path")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":1: unsupported schema 2"));
}

#[test]
fn missing_scenario_is_a_usage_error() {
    assert_eq!(bootnet(&[]).status.code(), Some(2));
    assert_eq!(bootnet(&["/nonexistent/scenario.toml"]).status.code(), Some(2));
    let out = bootnet(&[&scenario("paper-5nat.toml"), "--max-virtual-time", "-1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn same_seed_gives_identical_output() {
    let a = bootnet(&[&scenario("determinism.toml"), "--format", "structured", "--seed", "5"]);
    let b = bootnet(&[&scenario("determinism.toml"), "--format", "structured", "--seed", "5"]);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["seed"], 5);
}

#[test]
fn trace_file_holds_every_record() {
    let path = scratch("trace.txt", "");
    let out = bootnet(&[&scenario("paper-5nat.toml"), "--format", "structured", "--trace", path.to_str().expect("utf-8")]);
    assert_eq!(out.status.code(), Some(0));
    let body = std::fs::read_to_string(&path).expect("trace written");
    let lines: Vec<&str> = body.lines().collect();
    assert!(lines[0].starts_with("# scenario paper-5nat seed "));
    let records = &lines[1..];
    assert_eq!(records.len() as u64, json(&out)["trace_records"].as_u64().expect("count"));
    assert!(records.iter().all(|l| l.split('|').count() == 6));
    assert!(records.iter().any(|l| l.contains("|phase|") && l.ends_with("|connected")));
}

#[test]
fn several_runs_are_summarized() {
    let out = bootnet(&[&scenario("paper-5nat.toml"), "--runs", "3", "--format", "structured"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let seeds: Vec<u64> = v["reports"].as_array().expect("reports").iter().map(|r| r["seed"].as_u64().expect("seed")).collect();
    assert_eq!(seeds, [7, 8, 9]);
    assert!(v["summary"].is_object());

    let text = bootnet(&[&scenario("paper-5nat.toml"), "--runs", "2"]);
    assert_eq!(text.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&text.stdout).matches("\n----\n").count(), 1);
}

#[test]
fn matrix_flag_runs_the_builtin_matrix() {
    let out = bootnet(&["--matrix", "--format", "structured"]);
    assert_eq!(out.status.code(), Some(0));
    let cells = json(&out)["matrix"]["cells"].as_array().expect("cells").len();
    assert_eq!(cells, 25);
}
