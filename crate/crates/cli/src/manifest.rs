//! Run manifests.
//!
//! Every run writes `manifest.json` next to its outputs: the configuration
//! it ran from (embedded verbatim, so the run can be reproduced from the
//! manifest alone), a hash of that configuration's canonical serialization,
//! the library and binary versions, and a checksum for every file the run
//! produced. Nothing time- or host-dependent goes in, so repeated runs of
//! the same configuration yield byte-identical manifests.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, Task};
use crate::{CliError, CliResult};

/// Checksum and size of one output file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub sha256: String,
    pub bytes: u64,
}

/// The record a run leaves behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub versions: BTreeMap<String, String>,
    pub model: String,
    pub task: Task,
    pub seed: u64,
    /// Hash of the canonical TOML serialization of `config`.
    pub config_sha256: String,
    /// The run configuration, embedded for reproduction.
    pub config: RunConfig,
    /// Output files by name, relative to the manifest's directory.
    pub files: BTreeMap<String, FileDigest>,
    /// Sampler-reported metadata (acceptance rates, strategy descriptions).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(task: Task, config: &RunConfig) -> CliResult<Self> {
        let canonical = config.canonical_toml()?;
        let mut versions = BTreeMap::new();
        versions.insert("gencut-core".to_string(), gencut_core::version().to_string());
        versions.insert("gencut-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Ok(Manifest {
            tool: "gencut".to_string(),
            versions,
            model: config.model.clone(),
            task,
            seed: config.seed,
            config_sha256: sha256_hex(canonical.as_bytes()),
            config: config.clone(),
            files: BTreeMap::new(),
            meta: BTreeMap::new(),
        })
    }

    /// Record an output file under its directory-relative name.
    pub fn add_file(&mut self, name: &str, path: &Path) -> CliResult<()> {
        let digest = digest_file(path)?;
        self.files.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::io(format!("cannot serialize manifest: {e}")))?;
        std::fs::write(path, json + "\n")
            .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("malformed manifest {}: {e}", path.display())))
    }
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash a file in streaming fashion.
pub fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let file = std::fs::File::open(path)
        .map_err(|e| CliError::io(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = std::io::BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut total = 0u64;
    loop {
        let n = reader
            .read(&mut buf)
            .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    Ok(FileDigest { sha256: hex, bytes: total })
}
