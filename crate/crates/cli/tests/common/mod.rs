#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn gar() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gar"))
}

pub fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("gar binary runs")
}

pub fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

pub fn stderr_str(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("gar exits, not killed")
}

pub fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").expect("fixture written");
}

/// Non-empty lines of a JSONL file.
pub fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

pub fn parsed(line: &str) -> serde_json::Value {
    serde_json::from_str(line).unwrap_or_else(|e| panic!("line parses as JSON ({e}): {line}"))
}

/// Asserts the line is a manifest record for `subcommand` and returns it.
pub fn manifest_of(line: &str, subcommand: &str) -> serde_json::Value {
    let v = parsed(line);
    let m = &v["manifest"];
    assert_eq!(m["tool"], "gar", "manifest line: {line}");
    assert_eq!(m["subcommand"], subcommand);
    assert_eq!(m["version"].as_str().unwrap(), env!("CARGO_PKG_VERSION"));
    let hash = m["config_sha256"].as_str().expect("manifest carries a config hash");
    assert_eq!(hash.len(), 64);
    v
}

pub fn trace_line(id: &str, question: &str, truth: &str, think: &str, answer: &str) -> String {
    serde_json::json!({
        "id": id,
        "question": question,
        "ground_truth_answer": truth,
        "think_text": think,
        "answer_text": answer,
    })
    .to_string()
}
