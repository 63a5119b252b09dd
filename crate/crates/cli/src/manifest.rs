//! Per-run provenance: settings, input and output digests, errors, timing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::exit::Exit;

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileError {
    pub path: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub parameters: Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub errors: Vec<FileError>,
    /// Subcommand-specific facts, e.g. the perplexity actually used.
    pub details: serde_json::Map<String, Value>,
    pub started_unix: f64,
    pub finished_unix: f64,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl Manifest {
    pub fn new(subcommand: &str, parameters: Value) -> Self {
        Manifest {
            tool: "encmap",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            parameters,
            inputs: Vec::new(),
            outputs: Vec::new(),
            errors: Vec::new(),
            details: serde_json::Map::new(),
            started_unix: now(),
            finished_unix: 0.0,
        }
    }

    /// File name shared by every artifact of one subcommand, so sidecars can
    /// reference it before it is written.
    pub fn file_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }

    /// Records an input digest. Unreadable inputs are left to the loader,
    /// which reports them as errors.
    pub fn input(&mut self, path: &Path) {
        if let Ok(bytes) = std::fs::read(path) {
            self.inputs.push(FileDigest {
                path: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
    }

    pub fn output(&mut self, path: &Path) -> Result<(), Exit> {
        let bytes = std::fs::read(path)
            .map_err(|e| Exit::runtime(format!("cannot read back {}: {e}", path.display())))?;
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn error(&mut self, path: &Path, error: impl ToString) {
        self.errors.push(FileError {
            path: path.display().to_string(),
            error: error.to_string(),
        });
    }

    pub fn detail(&mut self, key: &str, value: impl Into<Value>) {
        self.details.insert(key.to_string(), value.into());
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf, Exit> {
        self.finished_unix = now();
        let path = dir.join(Self::file_name(&self.subcommand));
        let mut text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(&path, text)
            .map_err(|e| Exit::runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_outputs_with_digests() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("a.txt");
        std::fs::write(&out, b"abc").unwrap();
        let mut m = Manifest::new("spectrum", serde_json::json!({"epsilon": 1e-6}));
        m.output(&out).unwrap();
        m.error(Path::new("bad.emap"), "corrupt file");
        let path = m.write(dir.path()).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(v["subcommand"], "spectrum");
        assert_eq!(v["parameters"]["epsilon"], 1e-6);
        assert_eq!(v["outputs"][0]["sha256"].as_str().unwrap().len(), 64);
        assert_eq!(v["errors"][0]["path"], "bad.emap");
        assert!(v["finished_unix"].as_f64().unwrap() >= v["started_unix"].as_f64().unwrap());
    }
}
