//! Run manifests: what was run, on which inputs, and what it produced.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the canonical JSON of the non-path arguments.
    pub config_hash: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    /// SHA-256 over the input file digests, in argument order.
    pub input_digest: Option<String>,
    pub outputs: Vec<OutputFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects inputs and outputs of one subcommand run.
pub struct Recorder {
    out_dir: PathBuf,
    inputs: Vec<String>,
    outputs: Vec<OutputFile>,
}

impl Recorder {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| CliError::Output { path: out_dir.display().to_string(), message: e.to_string() })?;
        Ok(Self { out_dir: out_dir.to_path_buf(), inputs: Vec::new(), outputs: Vec::new() })
    }

    /// Reads an input file and records its digest.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        self.inputs.push(sha256_hex(&bytes));
        Ok(bytes)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::Output { path: path.display().to_string(), message: e.to_string() })?;
        self.outputs.push(OutputFile { path: name.to_string(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    /// Writes through a closure producing the bytes.
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> hawkes::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(mut self, command: &str, config: serde_json::Value, seed: Option<u64>) -> Result<RunManifest> {
        let canonical = serde_json::to_vec(&config).expect("config serializes");
        let input_digest = (!self.inputs.is_empty()).then(|| sha256_hex(self.inputs.join("\n").as_bytes()));
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: sha256_hex(&canonical),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digest,
            outputs: std::mem::take(&mut self.outputs),
        };
        let mut text = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        text.push(b'\n');
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| CliError::Output { path: path.display().to_string(), message: e.to_string() })?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn manifest_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Recorder::new(dir.path()).unwrap();
        r.write("a.txt", b"abc").unwrap();
        let m = r.finish("test", serde_json::json!({"x": 1}), Some(3)).unwrap();
        assert_eq!(m.outputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        let back: RunManifest = serde_json::from_slice(&std::fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
