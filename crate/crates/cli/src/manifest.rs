//! Content-hash manifests written next to every output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Failure;

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    /// Role (e.g. `stack`) to SHA-256 of the input file.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<(), Failure> {
        self.inputs.insert(role.into(), sha256_file(path)?);
        Ok(())
    }

    /// Hashes `names` inside `dir` and writes the manifest there.
    pub fn finish(mut self, dir: &Path, names: &[&str]) -> Result<(), Failure> {
        for name in names {
            self.outputs.insert((*name).into(), sha256_file(&dir.join(name))?);
        }
        let text = serde_json::to_string_pretty(&self).map_err(|e| Failure::Runtime(e.to_string()))?;
        std::fs::write(dir.join(FILE), text + "\n").map_err(Failure::io)
    }

    pub fn read(dir: &Path) -> Result<Option<Self>, Failure> {
        let p = dir.join(FILE);
        if !p.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&p).map_err(Failure::io)?;
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| Failure::Runtime(format!("bad manifest {}: {e}", p.display())))
    }
}
