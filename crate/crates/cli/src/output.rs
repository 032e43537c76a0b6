//! CSV tables and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{CliError, RunConfig};

/// Floats are written in round-trippable scientific notation.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Collects the files of one run and writes the manifest at the end.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
    started: Instant,
}

pub struct Table {
    writer: csv::Writer<fs::File>,
}

impl Table {
    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct FileEntry {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    wall_seconds: f64,
    files: Vec<FileEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self, CliError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(OutputDir {
            dir,
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Opens `name` with `header` as its first row.
    pub fn table(&mut self, name: &str, header: &[&str]) -> Result<Table, CliError> {
        let path = self.dir.join(name);
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)?;
        writer.write_record(header)?;
        self.files.push(name.to_string());
        Ok(Table { writer })
    }

    pub fn text(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents)?;
        self.files.push(name.to_string());
        Ok(())
    }

    /// Writes `manifest.json` listing every file with its digest.
    pub fn finish(self, command: &str, cfg: &RunConfig) -> Result<PathBuf, CliError> {
        let mut files = Vec::new();
        for name in &self.files {
            let bytes = fs::read(self.dir.join(name))?;
            files.push(FileEntry {
                name: name.clone(),
                sha256: sha256_hex(&bytes),
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: cfg.hash(),
            seed: cfg.sim.seed,
            wall_seconds: self.started.elapsed().as_secs_f64(),
            files,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, json + "\n")?;
        Ok(path)
    }
}
