//! Output directory handling. Every file goes through one [`Artifacts`]
//! writer, which records its SHA-256 for `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance attached to the manifest and to every JSON report.
#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub command: String,
    /// SHA-256 of the config text followed by the command-line overrides.
    pub config_sha256: String,
    pub master_seed: u64,
    pub scale: String,
    pub code_version: String,
    pub rng: String,
    /// Command-line overrides applied on top of the file.
    pub overrides: Overrides,
    /// The config file, verbatim.
    pub config_toml: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scale: Option<String>,
}

#[derive(Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    meta: &'a RunMeta,
    files: &'a [FileEntry],
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    meta: &'a RunMeta,
    #[serde(flatten)]
    body: &'a T,
}

pub struct Artifacts {
    root: PathBuf,
    meta: RunMeta,
    files: Vec<FileEntry>,
}

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

impl Artifacts {
    pub fn create(root: &Path, meta: RunMeta) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        Ok(Artifacts {
            root: root.to_path_buf(),
            meta,
            files: Vec::new(),
        })
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Numeric cells are written with [`num`]; pass preformatted strings for
    /// anything else.
    pub fn write_csv(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| crate::error::CliError::Io(e.to_string()))?;
        self.write_bytes(rel, &bytes)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, body: &T) -> CliResult<()> {
        let report = Report { meta: &self.meta, body };
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        self.write_bytes(rel, &bytes)
    }

    /// Writes `manifest.json`. Consumes the writer so nothing can be added
    /// afterwards.
    pub fn finish(self) -> CliResult<PathBuf> {
        let manifest = Manifest {
            meta: &self.meta,
            files: &self.files,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, -7.0e22, 0.0872204] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
