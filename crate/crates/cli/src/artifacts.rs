//! Run artifacts: CSV tables, JSONL metadata and a plain-text manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub use reflected_spde::export::fmt_f64;

/// A CSV table written as `<stem>.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub stem: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(stem: impl Into<String>, header: &[&str]) -> Self {
        Self {
            stem: stem.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.stem)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Column `name` of every row.
    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j].as_str()).collect())
    }
}

/// One acceptance-style check reported by an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything an experiment produces besides wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self, stem: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.stem == stem)
    }
}

/// Git-style object hash: SHA-256 of `"blob <len>\0" ++ content`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

fn write(dir: &Path, name: &str, content: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| CliError::Io {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    Ok(path)
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Inputs echoed into the manifest.
pub struct RunInfo<'a> {
    pub experiment: &'a str,
    pub seed: u64,
    pub workers: usize,
    pub config_toml: &'a str,
    /// Raw bytes of the config file, when one was given.
    pub config_source: Option<&'a [u8]>,
    pub wall_time_s: f64,
}

fn manifest(info: &RunInfo<'_>, files: &[(String, String)]) -> String {
    let mut m = String::new();
    m.push_str(&format!("experiment: {}\n", info.experiment));
    m.push_str(&format!("seed: {}\n", info.seed));
    m.push_str(&format!("workers: {}\n", info.workers));
    m.push_str(&format!(
        "config_hash: {}\n",
        content_hash(info.config_toml.as_bytes())
    ));
    if let Some(src) = info.config_source {
        m.push_str(&format!("config_file_hash: {}\n", content_hash(src)));
    }
    m.push_str(&format!("wall_time_s: {:.3}\n", info.wall_time_s));
    m.push_str("files:\n");
    for (name, hash) in files {
        m.push_str(&format!("  {name} {hash}\n"));
    }
    m.push_str("  manifest.txt\n");
    m.push_str("config:\n");
    for line in info.config_toml.lines() {
        m.push_str("  ");
        m.push_str(line);
        m.push('\n');
    }
    m
}

fn check_json(c: &Check) -> Value {
    json!({"record": "check", "name": c.name, "passed": c.passed, "detail": c.detail})
}

/// Writes tables, `metadata.jsonl` and `manifest.txt`; returns the paths written.
pub fn write_outcome(
    dir: &Path,
    info: &RunInfo<'_>,
    outcome: &Outcome,
) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(dir)?;
    let mut paths = Vec::new();
    let mut files = Vec::new();
    let mut meta = vec![json!({
        "record": "run",
        "experiment": info.experiment,
        "seed": info.seed,
        "config_hash": content_hash(info.config_toml.as_bytes()),
        "status": if outcome.passed() { "pass" } else { "fail" },
        "version": env!("CARGO_PKG_VERSION"),
    })];
    for t in &outcome.tables {
        let csv = t.to_csv();
        paths.push(write(dir, &t.file_name(), csv.as_bytes())?);
        files.push((t.file_name(), content_hash(csv.as_bytes())));
        meta.push(json!({"record": "table", "file": t.file_name(), "columns": t.header, "rows": t.rows.len()}));
    }
    meta.extend(outcome.checks.iter().map(check_json));
    let jsonl: String = meta.iter().map(|v| format!("{v}\n")).collect();
    paths.push(write(dir, "metadata.jsonl", jsonl.as_bytes())?);
    files.push(("metadata.jsonl".into(), content_hash(jsonl.as_bytes())));
    paths.push(write(
        dir,
        "manifest.txt",
        manifest(info, &files).as_bytes(),
    )?);
    Ok(paths)
}

/// Writes `failure.json` and a manifest referencing it.
pub fn write_failure(dir: &Path, info: &RunInfo<'_>, err: &CliError) -> Result<PathBuf, CliError> {
    ensure_dir(dir)?;
    let record = failure_record(info.experiment, err);
    let text = format!("{record}\n");
    let path = write(dir, "failure.json", text.as_bytes())?;
    let files = vec![("failure.json".to_string(), content_hash(text.as_bytes()))];
    write(dir, "manifest.txt", manifest(info, &files).as_bytes())?;
    Ok(path)
}

pub fn failure_record(experiment: &str, err: &CliError) -> Value {
    json!({
        "record": "failure",
        "experiment": experiment,
        "kind": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    })
}
