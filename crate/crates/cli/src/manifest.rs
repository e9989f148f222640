//! `manifest.json`: what a command was asked to do, with every default
//! materialized, and how it ended.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub threads: Option<usize>,
    pub config: RunConfig,
    /// Command-specific resolved options (sensing weight, method, lists).
    pub options: BTreeMap<String, Value>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub status: Status,
    pub exit_code: Option<i32>,
    pub error: Option<String>,
    pub started_unix_ms: u128,
    pub finished_unix_ms: Option<u128>,
    pub elapsed_secs: Option<f64>,
    #[serde(skip)]
    path: PathBuf,
    #[serde(skip)]
    clock: Instant,
}

fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(path: PathBuf, command: &str, threads: Option<usize>, config: RunConfig) -> Self {
        RunManifest {
            tool: "cfisac",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            argv: std::env::args().collect(),
            threads,
            config,
            options: BTreeMap::new(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            status: Status::Running,
            exit_code: None,
            error: None,
            started_unix_ms: unix_ms(),
            finished_unix_ms: None,
            elapsed_secs: None,
            path,
            clock: Instant::now(),
        }
    }

    pub fn option(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("option serializes");
        self.options.insert(key.to_owned(), v);
    }

    pub fn write(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        std::fs::write(&self.path, text).map_err(|e| CliError::io(&self.path, e))
    }

    /// Records the outcome and rewrites the file.
    pub fn finish(&mut self, result: &Result<(), CliError>) -> Result<(), CliError> {
        match result {
            Ok(()) => {
                self.status = Status::Succeeded;
                self.exit_code = Some(0);
            }
            Err(e) => {
                self.status = Status::Failed;
                self.exit_code = Some(e.exit_code());
                self.error = Some(e.to_string());
            }
        }
        self.finished_unix_ms = Some(unix_ms());
        self.elapsed_secs = Some(self.clock.elapsed().as_secs_f64());
        self.write()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_before_and_after() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::new(path.clone(), "train", Some(1), RunConfig::default());
        m.option("beta_s", 2.0);
        m.write().unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["status"], "running");
        assert_eq!(v["options"]["beta_s"], 2.0);
        assert_eq!(v["config"]["system"]["M"], 5);
        m.finish(&Err(CliError::Config("bad".into()))).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["status"], "failed");
        assert_eq!(v["exit_code"], 2);
    }
}
