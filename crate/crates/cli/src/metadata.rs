use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 of a file, or of every file in a directory (sorted by name, each
/// hashed as name then contents).
pub fn fingerprint(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.retain(|p| p.is_file());
        entries.sort();
        for p in entries {
            h.update(
                p.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .as_bytes(),
            );
            h.update([0]);
            h.update(fs::read(&p).with_context(|| format!("hashing {}", p.display()))?);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("hashing {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: &'static str,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub timings: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
    #[serde(skip)]
    path: Option<PathBuf>,
    #[serde(skip)]
    phase: Option<(String, Instant)>,
}

impl RunMetadata {
    pub fn new<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.to_owned(),
            version: env!("CARGO_PKG_VERSION"),
            argv: std::env::args().collect(),
            seed,
            config: serde_json::to_value(config)?,
            inputs: BTreeMap::new(),
            timings: BTreeMap::new(),
            notes: BTreeMap::new(),
            path: None,
            phase: None,
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), fingerprint(path)?);
        Ok(())
    }

    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.insert(key.to_owned(), value.into());
    }

    /// Starts timing a phase, closing the previous one.
    pub fn phase(&mut self, name: &str) {
        self.end_phase();
        self.phase = Some((name.to_owned(), Instant::now()));
    }

    pub fn end_phase(&mut self) {
        if let Some((name, t)) = self.phase.take() {
            self.timings.insert(name, t.elapsed().as_secs_f64());
        }
    }

    /// Writes the metadata to `path` and remembers it for [`Self::finish`].
    pub fn write_to(&mut self, path: PathBuf) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.path = Some(path);
        Ok(())
    }

    /// Closes the open phase and rewrites the file with final timings.
    pub fn finish(mut self) -> Result<()> {
        self.end_phase();
        if let Some(path) = self.path.take() {
            self.write_to(path)?;
        }
        Ok(())
    }
}
