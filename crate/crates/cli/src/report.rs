//! Report files: CSV tables, JSON summaries and the run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};
use crate::error::{CliError, CliResult};

/// Writes the files of one run under `{out_dir}/{stem}*` and remembers them
/// for the manifest.
pub struct Outputs {
    dir: PathBuf,
    stem: String,
    written: Vec<String>,
    resolved: Map<String, Value>,
}

impl Outputs {
    pub fn new(cfg: &RunConfig) -> CliResult<Self> {
        let dir = cfg.out_dir().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e).in_field("out_dir"))?;
        Ok(Self {
            dir,
            stem: cfg.stem().to_string(),
            written: Vec::new(),
            resolved: Map::new(),
        })
    }

    pub fn stem(&self) -> &str {
        &self.stem
    }

    /// `{out_dir}/{stem}{suffix}`, recorded as an output.
    pub fn path(&mut self, suffix: &str) -> PathBuf {
        let name = format!("{}{suffix}", self.stem);
        self.written.push(name.clone());
        self.dir.join(name)
    }

    /// Records a value that the run derived rather than read from the config.
    pub fn resolve(&mut self, key: &str, value: impl Serialize) {
        self.resolved
            .insert(key.to_string(), serde_json::to_value(value).expect("serialisable"));
    }

    pub fn note_file(&mut self, name: String) {
        self.written.push(name);
    }

    pub fn csv(&mut self, cfg: &RunConfig, suffix: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        if !cfg.wants(Format::Csv) {
            return Ok(());
        }
        let path = self.path(suffix);
        write_csv(&path, header, rows)
    }

    pub fn json(&mut self, cfg: &RunConfig, suffix: &str, value: &impl Serialize) -> CliResult<()> {
        if !cfg.wants(Format::Json) {
            return Ok(());
        }
        let path = self.path(suffix);
        write_json(&path, value)
    }

    /// Writes `{stem}.manifest.json` echoing the resolved config.
    pub fn finish(mut self, cfg: &RunConfig) -> CliResult<PathBuf> {
        let path = self.dir.join(format!("{}.manifest.json", self.stem));
        self.written.sort();
        self.written.dedup();
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": cfg.command,
            "config": cfg,
            "config_hash": cfg.hash(),
            "resolved": self.resolved,
            "outputs": self.written,
        });
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serialisable") + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}
