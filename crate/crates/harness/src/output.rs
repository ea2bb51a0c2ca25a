//! Run directory: RFC-4180 CSV files, JSON documents, the stream audit log
//! and the run manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use zvonkin_core::rng::StreamKey;

use crate::config::RunConfig;
use crate::error::{HResult, HarnessError};

/// Shortest round-trip decimal form; identical bits give identical text.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
    pub bytes: usize,
}

pub struct RunDir {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl RunDir {
    pub fn create(dir: &Path) -> HResult<Self> {
        fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(RunDir { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn record(&mut self, name: &str, bytes: &[u8]) -> HResult<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(FileRecord { name: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn write_csv<I, R>(&mut self, name: &str, header: &[String], rows: I) -> HResult<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
        self.record(name, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> HResult<()> {
        let mut s = serde_json::to_string_pretty(value).expect("json serializes");
        s.push('\n');
        self.record(name, s.as_bytes())
    }

    pub fn files(&self) -> &[FileRecord] {
        &self.files
    }
}

pub fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|c| c.to_string()).collect()
}

/// Log of the top-level stream keys handed to independent paths.
#[derive(Default)]
pub struct StreamAudit {
    entries: Vec<(String, u64, StreamKey)>,
}

impl StreamAudit {
    pub fn log(&mut self, label: &str, index: u64, key: StreamKey) {
        self.entries.push((label.to_string(), index, key));
    }

    /// Keys handed out more than once.
    pub fn reused(&self) -> Vec<u64> {
        let mut seen = BTreeSet::new();
        let mut dup = BTreeSet::new();
        for (_, _, k) in &self.entries {
            if !seen.insert(k.0) {
                dup.insert(k.0);
            }
        }
        dup.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write(&self, dir: &mut RunDir) -> HResult<()> {
        dir.write_csv(
            "streams.csv",
            &header(&["label", "index", "stream_id"]),
            self.entries.iter().map(|(l, i, k)| vec![l.clone(), i.to_string(), format!("{:016x}", k.0)]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), pass, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// SHA-256 of the resolved config with the output path cleared.
    pub config_hash: String,
    pub config: RunConfig,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: i32,
    pub checks: Vec<Check>,
    pub files: Vec<FileRecord>,
    pub summary: serde_json::Value,
}

pub const MANIFEST: &str = "manifest.json";

pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.run.out = PathBuf::new();
    c.run.workers = 1;
    sha256_hex(c.to_toml().as_bytes())
}

impl RunManifest {
    pub fn load(path: &Path) -> HResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: line {}: {e}", path.display(), e.line())))
    }

    /// The manifest as compared across re-runs: timestamps removed.
    pub fn without_timestamps(&self) -> Self {
        RunManifest { started_at: String::new(), finished_at: String::new(), ..self.clone() }
    }
}

/// Reads a TOML config, or the config echoed by a previous run's manifest.
pub fn load_config(path: &Path) -> HResult<RunConfig> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(RunManifest::load(path)?.config);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml(&text).map_err(|e| match e {
        HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// `[1.234e-2, ...]` for check details.
pub fn sci(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", "))
}
