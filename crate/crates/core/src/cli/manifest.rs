//! Output directory bookkeeping and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

use super::config::RunConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Everything needed to rerun a command and check its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub started_at: String,
    pub finished_at: String,
    pub threads: usize,
    pub config: Option<RunConfig>,
    pub master_seed: Option<u64>,
    pub capacitance_seed: Option<u64>,
    /// Solver settings derived at run time (default steps, regularization, ...).
    pub resolved: serde_json::Value,
    pub outcome: serde_json::Value,
    pub files: Vec<FileRecord>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Files written into one output directory, in creation order.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    started_at: String,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started_at: now(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Open `name` for writing and remember it for the manifest.
    pub fn writer(&mut self, name: &str) -> Result<BufWriter<File>> {
        let file = File::create(self.dir.join(name))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.writer(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn records(&self) -> Result<Vec<FileRecord>> {
        self.files
            .iter()
            .map(|name| {
                let bytes = std::fs::read(self.dir.join(name))?;
                Ok(FileRecord {
                    path: name.clone(),
                    bytes: bytes.len() as u64,
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect()
    }

    /// Checksum every file written so far and write `manifest.json`.
    pub fn finish(
        self,
        command: &str,
        config: Option<&RunConfig>,
        resolved: serde_json::Value,
        outcome: serde_json::Value,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            started_at: self.started_at.clone(),
            finished_at: now(),
            threads: rayon::current_num_threads(),
            config: config.cloned(),
            master_seed: config.map(|c| c.seed),
            capacitance_seed: config.map(|c| c.capacitance.seed),
            resolved,
            outcome,
            files: self.records()?,
        };
        let mut w = BufWriter::new(File::create(self.dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(manifest)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
