#![allow(dead_code)]

use std::path::Path;

use lindeform::cli::{run_with, Env};
use serde_json::Value;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Run {
    pub fn summary(&self) -> Value {
        assert_eq!(self.code, 0, "stderr: {}", self.stderr);
        let lines: Vec<&str> = self.stdout.lines().collect();
        assert_eq!(lines.len(), 1, "expected one summary line: {}", self.stdout);
        serde_json::from_str(lines[0]).unwrap()
    }
}

pub fn cli_env(args: &[&str], env: &Env) -> Run {
    let mut argv = vec!["lindeform"];
    argv.extend_from_slice(args);
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(argv, env, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn cli(args: &[&str]) -> Run {
    cli_env(args, &Env::default())
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Narrow layers so end-to-end runs stay fast.
pub const SMALL_WIDTHS: [&str; 8] = [
    "--encoder-point",
    "16,16,32",
    "--encoder-head",
    "32",
    "--dict-point",
    "16,32",
    "--dict-head",
    "32",
];

/// Generates a dataset and trains a small model on it; returns the paths.
pub fn small_model(dir: &Path, family: &str, count: usize, n: usize, extra: &[&str]) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data");
    let model = dir.join("m.dsnc");
    let count = count.to_string();
    let n = n.to_string();
    cli(&["datagen", "--family", family, "--count", &count, "--n", &n, "--out", p(&data), "--seed", "7"]).summary();
    let mut args = vec!["train", "--data", p(&data), "--out", p(&model), "--k", "6", "--epochs", "2", "--seed", "5"];
    args.extend_from_slice(&SMALL_WIDTHS);
    args.extend_from_slice(extra);
    cli(&args).summary();
    (data, model)
}
