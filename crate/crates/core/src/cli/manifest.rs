//! Stage manifests: content hashes of inputs and outputs plus the config
//! that produced them. Manifests carry no timestamps, so identical runs
//! produce identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Input role (`train`, `schema`, ...) or output path relative to the
    /// output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub manifest_version: u32,
    pub stage: String,
    pub backend: Option<String>,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn entry_for_bytes(path: impl Into<String>, bytes: &[u8]) -> FileEntry {
    FileEntry {
        path: path.into(),
        sha256: sha256_hex(bytes),
        bytes: bytes.len() as u64,
    }
}

pub fn entry_for_file(name: impl Into<String>, file: &Path) -> Result<FileEntry, CliError> {
    let bytes = std::fs::read(file).map_err(|e| CliError::io(file, e))?;
    Ok(entry_for_bytes(name, &bytes))
}

impl Manifest {
    pub fn new(stage: &str, config: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            manifest_version: MANIFEST_VERSION,
            stage: stage.to_string(),
            backend: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
            config,
        }
    }

    pub fn file_name(stage: &str) -> String {
        format!("{stage}.manifest.json")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s.into_bytes()
    }

    /// Writes `<stage>.manifest.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join(Self::file_name(&self.stage));
        std::fs::write(&path, self.to_bytes()).map_err(|e| CliError::io(&path, e))
    }

    pub fn read(dir: &Path, stage: &str) -> Result<Self, CliError> {
        let path = dir.join(Self::file_name(stage));
        let text = std::fs::read_to_string(&path).map_err(|e| {
            CliError::Data(format!(
                "{}: {e} (run the {stage} stage first)",
                path.display()
            ))
        })?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }

    /// Entry for `name` among the outputs, then the inputs.
    pub fn listed(&self, name: &str) -> Option<&FileEntry> {
        self.outputs
            .iter()
            .chain(&self.inputs)
            .find(|e| e.path == name)
    }

    /// Reads a file listed in this manifest from `dir`, checking that its
    /// hash still matches.
    pub fn read_listed(&self, dir: &Path, name: &str) -> Result<Vec<u8>, CliError> {
        let entry = self.listed(name).ok_or_else(|| {
            CliError::Data(format!(
                "{name} is not listed in the {} manifest",
                self.stage
            ))
        })?;
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(CliError::Data(format!(
                "{} changed since the {} stage wrote it",
                path.display(),
                self.stage
            )));
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn read_output_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"one").unwrap();
        let mut m = Manifest::new("select", serde_json::json!({}));
        m.outputs.push(entry_for_file("a.txt", &dir.path().join("a.txt")).unwrap());
        m.write(dir.path()).unwrap();
        let back = Manifest::read(dir.path(), "select").unwrap();
        assert_eq!(back, m);
        assert_eq!(back.read_listed(dir.path(), "a.txt").unwrap(), b"one");
        std::fs::write(dir.path().join("a.txt"), b"two").unwrap();
        assert!(matches!(back.read_listed(dir.path(), "a.txt"), Err(CliError::Data(_))));
        assert!(matches!(back.read_listed(dir.path(), "b.txt"), Err(CliError::Data(_))));
    }
}
