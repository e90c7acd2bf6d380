//! Output files stamped with the configuration hash, seed and version.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Output {
    dir: PathBuf,
    meta: Value,
    header: String,
}

impl Output {
    pub fn new(dir: &Path, config: Option<&ExperimentConfig>, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let (hash, echo) = match config {
            Some(c) => (c.hash(), serde_json::to_value(c).expect("config serializes")),
            None => ("none".to_string(), Value::Null),
        };
        let meta = json!({ "version": VERSION, "config_hash": hash, "seed": seed, "config": echo });
        let header = format!("# brwre {VERSION} config_hash={hash} seed={seed}\n# config={}\n", serde_json::to_string(&echo).expect("json"));
        Ok(Self { dir: dir.to_path_buf(), meta, header })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV whose first lines are `#` comments with the metadata.
    pub fn csv(&self, name: &str, columns: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<PathBuf, CliError> {
        let mut text = self.header.clone();
        text.push_str(&columns.join(","));
        text.push('\n');
        for row in rows {
            let _ = writeln!(text, "{}", row.join(","));
        }
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Writes `body` with a `meta` key added.
    pub fn json(&self, name: &str, mut body: Value) -> Result<PathBuf, CliError> {
        if let Value::Object(map) = &mut body {
            map.insert("meta".into(), self.meta.clone());
        } else {
            body = json!({ "meta": self.meta, "data": body });
        }
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(&body).expect("json") + "\n")?;
        Ok(path)
    }
}

/// Shortest round-trip formatting for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x}")
}
