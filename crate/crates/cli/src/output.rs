//! Output directory: artifacts plus a `manifest.json` of their SHA-256 hashes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// One reported number: `{name, value, grid: {M, dt}, tolerance}`.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryEntry {
    pub name: String,
    pub value: f64,
    pub grid: GridTag,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct GridTag {
    #[serde(rename = "M")]
    pub m: usize,
    pub dt: f64,
}

pub fn entry(name: &str, value: f64, m: usize, dt: f64, tolerance: Option<f64>) -> SummaryEntry {
    SummaryEntry {
        name: name.into(),
        value,
        grid: GridTag { m, dt },
        tolerance,
    }
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    bytes: u64,
    sha256: String,
}

pub struct OutputDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::Config(format!("output directory {}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Writes `name` through a buffered writer.
    pub fn write<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.root.join(name);
        let file = fs::File::create(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        body(&mut out)?;
        out.flush()?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value).map_err(std::io::Error::from)?;
            writeln!(out)?;
            Ok(())
        })
    }

    /// Hashes every artifact written so far into `manifest.json`.
    pub fn finish(self) -> Result<(), CliError> {
        let mut artifacts = Vec::new();
        for name in &self.written {
            let data = fs::read(self.root.join(name))?;
            artifacts.push(Artifact {
                path: name.clone(),
                bytes: data.len() as u64,
                sha256: hex::encode(Sha256::digest(&data)),
            });
        }
        let text = serde_json::to_string_pretty(&serde_json::json!({ "artifacts": artifacts }))
            .map_err(std::io::Error::from)?;
        fs::write(self.root.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
