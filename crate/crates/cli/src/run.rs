//! Timestamped run directories and structured JSON log lines.

use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Writes `{"ts", "level", "event", ...fields}` lines to stderr and, once a
/// run directory exists, to its `log.jsonl`.
#[derive(Debug, Default)]
pub struct Logger {
    file: Option<File>,
    /// Suppresses stderr output (tests).
    pub quiet: bool,
}

impl Logger {
    pub fn new(quiet: bool) -> Self {
        Self { file: None, quiet }
    }

    pub fn attach(&mut self, path: &Path) -> Result<(), CliError> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        self.file = Some(f);
        Ok(())
    }

    pub fn log(&mut self, level: &str, event: &str, fields: Value) {
        let mut obj = Map::new();
        obj.insert(
            "ts".into(),
            Value::String(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
        );
        obj.insert("level".into(), Value::String(level.into()));
        obj.insert("event".into(), Value::String(event.into()));
        if let Value::Object(m) = fields {
            obj.extend(m);
        }
        let line = Value::Object(obj).to_string();
        if !self.quiet {
            eprintln!("{line}");
        }
        if let Some(f) = self.file.as_mut() {
            // Logging must never abort a run.
            let _ = writeln!(f, "{line}");
        }
    }

    pub fn info(&mut self, event: &str, fields: Value) {
        self.log("info", event, fields);
    }

    pub fn warn(&mut self, event: &str, fields: Value) {
        self.log("warn", event, fields);
    }

    pub fn error(&mut self, event: &str, fields: Value) {
        self.log("error", event, fields);
    }
}

/// A fresh directory for one command invocation.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    /// Creates `<root>/<command>-<UTC timestamp>`; never reuses an existing
    /// directory.
    pub fn create(root: &Path, command: &str) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::runtime(format!("{}: {e}", root.display())))?;
        let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
        for n in 0..1000 {
            let name = if n == 0 {
                format!("{command}-{stamp}")
            } else {
                format!("{command}-{stamp}-{n}")
            };
            let path = root.join(name);
            match fs::create_dir(&path) {
                Ok(()) => return Ok(Self { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(CliError::runtime(format!("{}: {e}", path.display()))),
            }
        }
        Err(CliError::runtime("could not allocate a unique run directory"))
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<S: Serialize>(&self, name: &str, value: &S) -> Result<PathBuf, CliError> {
        let path = self.join(name);
        write_json(&path, value)?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        let path = self.join(name);
        fs::write(&path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}
