use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

/// Record of one command invocation: what ran, on which inputs, and what it
/// wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// Input path to its FNV-1a 64 content hash, hex.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    /// Phase name to wall-clock seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>) -> Self {
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seed,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), PipelineError> {
        let hash = if path.is_dir() {
            hash_dir(path)?
        } else {
            hash_file(path)?
        };
        self.inputs.insert(path.display().to_string(), format!("{hash:016x}"));
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn time(&mut self, phase: &str, seconds: f64) {
        self.timings.insert(phase.to_string(), seconds);
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| PipelineError::io(path, e))
    }
}

pub fn hash_bytes(data: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(data);
    h.finish()
}

pub fn hash_file(path: &Path) -> Result<u64, PipelineError> {
    Ok(hash_bytes(&std::fs::read(path).map_err(|e| PipelineError::io(path, e))?))
}

/// Hash over the names and contents of a directory's files, in name order.
fn hash_dir(path: &Path) -> Result<u64, PipelineError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| PipelineError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let mut h = fnv::FnvHasher::default();
    for f in files {
        h.write(f.file_name().map(|n| n.as_encoded_bytes()).unwrap_or_default());
        h.write(&std::fs::read(&f).map_err(|e| PipelineError::io(&f, e))?);
    }
    Ok(h.finish())
}
