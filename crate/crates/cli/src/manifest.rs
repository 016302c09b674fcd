use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::failure::Failure;

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Complete,
    Failed,
}

/// Record of one command invocation, written to `<out>/run_manifest.json`
/// when the command starts and rewritten when it ends.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub threads: usize,
    pub config: Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
    pub status: Status,
    pub error: Option<String>,
    pub started_unix: u64,
    pub wall_seconds: f64,
    #[serde(skip)]
    start: Option<Instant>,
    #[serde(skip)]
    path: PathBuf,
}

impl RunManifest {
    pub fn begin(command: &str, out: &Path, seed: Option<u64>, threads: usize, inputs: Vec<PathBuf>) -> Result<Self, Failure> {
        fs::create_dir_all(out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
        let m = Self {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            threads,
            config: Value::Null,
            inputs,
            outputs: Vec::new(),
            summary: Value::Null,
            status: Status::Running,
            error: None,
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            wall_seconds: 0.0,
            start: Some(Instant::now()),
            path: out.join(MANIFEST_FILE),
        };
        m.write()?;
        Ok(m)
    }

    pub fn set_config(&mut self, config: impl Serialize) -> Result<(), Failure> {
        self.config = serde_json::to_value(config).map_err(|e| Failure::Runtime(e.to_string()))?;
        self.write()
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Finalizes the manifest with the command's outcome and passes it on.
    pub fn finish<T>(mut self, result: Result<T, Failure>) -> Result<T, Failure> {
        self.wall_seconds = self.start.map_or(0.0, |s| s.elapsed().as_secs_f64());
        match &result {
            Ok(_) => self.status = Status::Complete,
            Err(e) => {
                self.status = Status::Failed;
                self.error = Some(e.to_string());
            }
        }
        self.write()?;
        result
    }

    fn write(&self) -> Result<(), Failure> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Failure::Runtime(e.to_string()))?;
        fs::write(&self.path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", self.path.display())))
    }
}
