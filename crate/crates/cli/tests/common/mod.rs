#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.stdout)
            .unwrap_or_else(|e| panic!("stdout is not JSON ({e}):\n{}", self.stdout))
    }
}

pub fn ppi(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_ppi"))
        .args(args)
        .output()
        .expect("spawn ppi");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Runs `ppi generate` with `args` and stores the document as `name`.
pub fn generate_to(dir: &Path, name: &str, args: &[&str]) -> PathBuf {
    let mut full = vec!["generate"];
    full.extend_from_slice(args);
    let run = ppi(&full);
    assert_eq!(run.code, 0, "generate {args:?}: {}", run.stderr);
    let path = dir.join(name);
    std::fs::write(&path, &run.stdout).unwrap();
    path
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Tuple document text for real matrices given row by row.
pub fn real_document(dim: usize, ops: &[&[f64]]) -> String {
    let operators: Vec<Value> = ops
        .iter()
        .enumerate()
        .map(|(k, entries)| {
            let rows: Vec<Value> = entries
                .chunks(dim)
                .map(|r| r.iter().map(|&x| serde_json::json!([x, 0.0])).collect())
                .collect();
            serde_json::json!({"name": format!("A{}", k + 1), "matrix": rows})
        })
        .collect();
    serde_json::json!({"schema_version": "1", "dim": dim, "operators": operators}).to_string()
}

pub fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
